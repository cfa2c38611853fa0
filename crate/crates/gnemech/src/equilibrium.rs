//! Generalized Nash equilibria of the induced game, three ways: the
//! constructive profile built from a centralized solution, damped
//! best-response dynamics, and a numerical no-profitable-deviation search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mechanism::{
    self, GovernmentMessage, MechanismError, MessageProfile, Outcome, PlatformMessage,
};
use crate::model::{ModelError, PlayerId, Scenario, Variant, GOVERNMENT};
use crate::planner::{CentralizedSolution, PlannerError};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("equilibrium construction failed: {0}")]
    Construction(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A platform's strategy in the reduced deviation space: the allocations it
/// steers everyone's filters and the lower bound to, plus its trust quota.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedAction {
    pub min_trust: f64,
    /// Desired α_k per competitor position (including the platform itself).
    pub filters: Vec<(usize, f64)>,
    pub lower_bound_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Constructed,
    Dynamics,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub profile: MessageProfile,
    pub outcome: Outcome,
    pub method: Method,
    pub iterations: usize,
    /// Max componentwise message change in the final sweep (0 for a
    /// constructed profile).
    pub message_residual: f64,
    /// Largest unilateral utility improvement found, once verified.
    pub max_deviation_gain: Option<f64>,
    /// Government first, then platforms; −∞ marks an infeasible allocation.
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy)]
pub struct DynamicsParams {
    pub order: SweepOrder,
    /// θ ∈ (0, 1]: new message weight in the damped update.
    pub damping: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            order: SweepOrder::GaussSeidel,
            damping: 0.5,
            tol: 1e-8,
            max_sweeps: 500,
        }
    }
}

/// Result of the unilateral-deviation search.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationSearch {
    /// Best gain per player, government first.
    pub gains: Vec<f64>,
    pub max_gain: f64,
    pub player: PlayerId,
}

/// The all-zero message profile: the canonical dynamics starting point.
pub fn zero_profile(scenario: &Scenario) -> MessageProfile {
    let zeros = vec![0.0; scenario.platform_count()];
    mechanism::consistent_profile(scenario, &zeros, 0.0, &zeros, |_, _| 0.0, |_| 0.0, 0.0)
}

/// Build the equilibrium message profile from a centralized solution: every
/// proposal names the centralized action, prices are set so each allocated
/// price equals the marginal valuation it supports, and the government price
/// is the trust multiplier.
pub fn construct_gne(
    scenario: &Scenario,
    centralized: &CentralizedSolution,
) -> Result<MessageProfile, EquilibriumError> {
    let actions = &centralized.actions;
    let filters = &actions[1..];
    let nu = centralized.multipliers.trust;
    // Marginals ∂v_i/∂α_l at the optimum, indexed [i][l] by position.
    let count = scenario.platform_count();
    let mut marginal = vec![vec![0.0; count]; count];
    for i in 0..count {
        for (l, d) in scenario.valuation(i, filters)?.1 {
            marginal[i][l] = d;
        }
    }
    // Price proposals p̃_owner^proposer, keyed [proposer][owner].
    let mut price = vec![vec![0.0; count]; count];
    for owner in 0..count {
        let members: Vec<usize> = scenario
            .competitors_of(owner)
            .iter()
            .copied()
            .filter(|&k| k != owner)
            .collect();
        if members.len() == 1 {
            // Two-member set (extended variant): the owner's own entry sets
            // the price, and the other member must echo it.
            let other = members[0];
            let d = marginal[other][owner];
            price[owner][owner] = d;
            price[other][owner] = d;
            continue;
        }
        // Solve mean_{k ∈ C_{-owner}, k≠i} x_k = marginal[i][owner] for all
        // i: x_k = Σ d − (|C_owner|−2)·d_k.
        let total: f64 = members.iter().map(|&k| marginal[k][owner]).sum();
        for &k in &members {
            let x = total - (members.len() - 1) as f64 * marginal[k][owner];
            if x < -1e-9 {
                return Err(EquilibriumError::Construction(format!(
                    "price proposal for platform {} by {} solves to {x:.3e} < 0",
                    owner + 1,
                    k + 1
                )));
            }
            price[k][owner] = x.max(0.0);
        }
    }
    let claimed: Vec<f64> = (0..count)
        .map(|i| Ok(scenario.trust(i, filters[i])?.0))
        .collect::<Result<_, ModelError>>()?;
    Ok(mechanism::consistent_profile(
        scenario,
        filters,
        actions[0],
        &claimed,
        |owner, proposer| price[proposer][owner],
        |_| nu,
        nu,
    ))
}

/// Everything about the other players that a unilateral platform deviation
/// can see, with the deviator's own entries excluded.
struct DeviationEnv {
    i: usize,
    comp: Vec<usize>,
    /// π_l^i per comp entry (0 at the self position).
    pay: Vec<f64>,
    /// Σ_l σ received per unit of own allocation.
    sigma_sum: f64,
    /// Government announced price p̃_0.
    gov_price: f64,
    /// ā_l^{-i} per comp entry.
    peer: Vec<f64>,
    peer_bound: f64,
    /// |C_l| per comp entry.
    set_size: Vec<usize>,
    /// For extended two-member owners l: the owner's posted price p̃_l^l
    /// that the deviator's own entry is compared against. 0 elsewhere.
    duo_price: Vec<f64>,
    /// Σ_{k≠i} n_k h̃_k from the others' claims.
    r_minus: f64,
    fraction: f64,
    /// Prices the deviator keeps posting, per comp entry plus the
    /// government entry. The deviation verifier zeroes its prices, so this
    /// stays `None` there; the best-response path keeps the profile's
    /// current prices and therefore keeps paying the proposal penalties,
    /// which is what pulls proposals into agreement under the dynamics.
    posted: Option<(Vec<f64>, f64)>,
}

fn peer_mean(profile: &MessageProfile, scenario: &Scenario, l: usize, i: usize) -> f64 {
    let comp = scenario.competitors_of(l);
    let sum: f64 = comp
        .iter()
        .filter(|&&k| k != i)
        .map(|&k| profile.platforms[k].proposed_filters[&(l as PlayerId + 1)])
        .sum();
    sum / (comp.len() - 1) as f64
}

impl DeviationEnv {
    fn build(
        scenario: &Scenario,
        profile: &MessageProfile,
        i: usize,
    ) -> Result<DeviationEnv, EquilibriumError> {
        let prices = mechanism::allocate_prices(profile, scenario)?;
        let comp: Vec<usize> = scenario.competitors_of(i).to_vec();
        let id = i as PlayerId + 1;
        let mut pay = vec![0.0; comp.len()];
        let mut sigma_sum = 0.0;
        let mut duo_price = vec![0.0; comp.len()];
        let mut peer = vec![0.0; comp.len()];
        let mut set_size = vec![0; comp.len()];
        for (pos, &l) in comp.iter().enumerate() {
            peer[pos] = peer_mean(profile, scenario, l, i);
            set_size[pos] = scenario.competitors_of(l).len();
            if l == i {
                continue;
            }
            let lid = l as PlayerId + 1;
            pay[pos] = prices.payment[&(id, lid)];
            sigma_sum += prices.subsidy[&(id, lid)];
            if scenario.variant() == Variant::Extended && set_size[pos] == 2 {
                duo_price[pos] = profile.platforms[l].proposed_prices[&lid];
            }
        }
        let bound_sum: f64 = profile.government.proposed_lower_bound
            + profile
                .platforms
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, m)| m.proposed_filters[&GOVERNMENT])
                .sum::<f64>();
        let peer_bound = bound_sum / (scenario.player_count() - 1) as f64;
        let n = scenario.fractions();
        let r_minus: f64 = profile
            .platforms
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(k, m)| n[k] * m.proposed_min_trust)
            .sum();
        Ok(DeviationEnv {
            i,
            comp,
            pay,
            sigma_sum,
            gov_price: profile.government.proposed_price,
            peer,
            peer_bound,
            set_size,
            duo_price,
            r_minus,
            fraction: n[i],
            posted: None,
        })
    }

    /// Switch to best-response mode: the deviator keeps its currently
    /// posted prices, so disagreeing proposals cost it the quadratic
    /// penalties at those prices.
    fn with_posted_prices(mut self, profile: &MessageProfile) -> DeviationEnv {
        let msg = &profile.platforms[self.i];
        let prices: Vec<f64> = self
            .comp
            .iter()
            .map(|&l| {
                if l == self.i {
                    0.0
                } else {
                    msg.proposed_prices[&(l as PlayerId + 1)]
                }
            })
            .collect();
        self.posted = Some((prices, msg.proposed_prices[&GOVERNMENT]));
        self
    }

    fn self_pos(&self) -> usize {
        self.comp.iter().position(|&l| l == self.i).unwrap()
    }

    /// Best achievable quota at targets (t_i is the own-filter target).
    fn quota(&self, scenario: &Scenario, own: f64, bound: f64) -> Result<f64, ModelError> {
        let cap = self.fraction * scenario.trust(self.i, own)?.0;
        Ok(cap.min(bound.max(0.0)).min(1.0))
    }

    /// Penalty on the deviator's proposal for a two-member owner, already
    /// minimized over its own price entry p: p·D + (p − P)² with
    /// D = |C_l|²·(t_l − ā_l)².
    fn duo_penalty(price: f64, dev_sq: f64) -> f64 {
        if dev_sq >= 2.0 * price {
            price * price
        } else {
            price * dev_sq - dev_sq * dev_sq / 4.0
        }
    }

    /// Deviation utility at reduced targets, assuming the deviator zeroes
    /// (or penalty-minimizes) its own price proposals.
    fn objective(
        &self,
        scenario: &Scenario,
        targets: &[f64],
        bound: f64,
        filters_buf: &mut [f64],
    ) -> Result<f64, EquilibriumError> {
        for (pos, &l) in self.comp.iter().enumerate() {
            filters_buf[l] = targets[pos];
        }
        let value = scenario.valuation_value(self.i, filters_buf)?;
        let own = targets[self.self_pos()];
        let mut u = value + self.gov_price * self.quota(scenario, own, bound)?
            + self.sigma_sum * own;
        for (pos, &l) in self.comp.iter().enumerate() {
            if l == self.i {
                continue;
            }
            u -= self.pay[pos] * targets[pos];
            let c = self.set_size[pos] as f64;
            let dev = c * (targets[pos] - self.peer[pos]);
            if let Some((posted, _)) = &self.posted {
                u -= posted[pos] * dev * dev;
            } else if self.duo_price[pos] > 0.0 {
                u -= Self::duo_penalty(self.duo_price[pos], dev * dev);
            }
        }
        if let Some((_, posted_gov)) = &self.posted {
            let j = scenario.player_count() as f64;
            let dev = j * (bound - self.peer_bound);
            u -= posted_gov * dev * dev;
        }
        Ok(u)
    }

    /// Analytic gradient of `objective` in (targets…, bound) order.
    fn gradient(
        &self,
        scenario: &Scenario,
        targets: &[f64],
        bound: f64,
        filters_buf: &mut [f64],
    ) -> Result<Vec<f64>, EquilibriumError> {
        for (pos, &l) in self.comp.iter().enumerate() {
            filters_buf[l] = targets[pos];
        }
        let (_, vgrad) = scenario.valuation(self.i, filters_buf)?;
        let mut grad = vec![0.0; targets.len() + 1];
        for (l, d) in vgrad {
            let pos = self.comp.iter().position(|&k| k == l).unwrap();
            grad[pos] += d;
        }
        let own_pos = self.self_pos();
        let own = targets[own_pos];
        grad[own_pos] += self.sigma_sum;
        let (h, dh) = scenario.trust(self.i, own)?;
        let cap = self.fraction * h;
        let quota = cap.min(bound.max(0.0)).min(1.0);
        if self.gov_price > 0.0 && quota < 1.0 {
            if cap <= bound.max(0.0) {
                grad[own_pos] += self.gov_price * self.fraction * dh;
            } else if bound >= 0.0 {
                grad[targets.len()] += self.gov_price;
            }
        }
        for (pos, &l) in self.comp.iter().enumerate() {
            if l == self.i {
                continue;
            }
            grad[pos] -= self.pay[pos];
            let c = self.set_size[pos] as f64;
            if let Some((posted, _)) = &self.posted {
                grad[pos] -= posted[pos] * 2.0 * c * c * (targets[pos] - self.peer[pos]);
            } else if self.duo_price[pos] > 0.0 {
                let dev = c * (targets[pos] - self.peer[pos]);
                let dev_sq = dev * dev;
                if dev_sq < 2.0 * self.duo_price[pos] {
                    grad[pos] -= (self.duo_price[pos] - dev_sq / 2.0) * 2.0 * c * c
                        * (targets[pos] - self.peer[pos]);
                }
            }
        }
        if let Some((_, posted_gov)) = &self.posted {
            let j = scenario.player_count() as f64;
            grad[targets.len()] -= posted_gov * 2.0 * j * j * (bound - self.peer_bound);
        }
        Ok(grad)
    }

    /// Exact-mean inversion: the message that steers every allocation to the
    /// given targets. Price proposals are zeroed, except the entries a
    /// two-member owner compares against, which are penalty-minimized.
    fn message(
        &self,
        scenario: &Scenario,
        profile: &MessageProfile,
        targets: &[f64],
        bound: f64,
        quota: f64,
    ) -> Result<PlatformMessage, EquilibriumError> {
        let id = self.i as PlayerId + 1;
        let mut proposed_filters = std::collections::BTreeMap::new();
        for (pos, &l) in self.comp.iter().enumerate() {
            let lid = l as PlayerId + 1;
            let c = self.set_size[pos] as f64;
            proposed_filters.insert(lid, c * targets[pos] - (c - 1.0) * self.peer[pos]);
        }
        let j = scenario.player_count() as f64;
        proposed_filters.insert(GOVERNMENT, j * bound - (j - 1.0) * self.peer_bound);
        let mut proposed_prices = std::collections::BTreeMap::new();
        for (pos, &l) in self.comp.iter().enumerate() {
            if l == self.i {
                continue;
            }
            let lid = l as PlayerId + 1;
            let p = if self.duo_price[pos] > 0.0 {
                let c = self.set_size[pos] as f64;
                let dev = c * (targets[pos] - self.peer[pos]);
                (self.duo_price[pos] - dev * dev / 2.0).max(0.0)
            } else {
                0.0
            };
            proposed_prices.insert(lid, p);
        }
        proposed_prices.insert(GOVERNMENT, 0.0);
        if scenario.variant() == Variant::Extended && self.comp.len() == 2 {
            // Echo the other member's entry for us to dodge the indicator
            // penalty.
            let other = self.comp.iter().copied().find(|&l| l != self.i).unwrap();
            proposed_prices.insert(id, profile.platforms[other].proposed_prices[&id]);
        }
        // Claimed trust that realizes the quota through the averaging rule.
        let proposed_min_trust = if bound <= 0.0 || quota <= 0.0 {
            scenario.trust(self.i, targets[self.self_pos()])?.0
        } else {
            let share = (quota / bound).min(1.0);
            if self.r_minus <= 0.0 {
                1.0
            } else if share >= 1.0 - 1e-12 {
                1e12 * self.r_minus / self.fraction
            } else {
                share * self.r_minus / (self.fraction * (1.0 - share))
            }
        };
        Ok(PlatformMessage {
            proposed_min_trust,
            proposed_prices,
            proposed_filters,
        })
    }
}

/// Spectral projected-gradient ascent on the reduced box (targets plus the
/// bound packed into one vector).
fn refine(
    env: &DeviationEnv,
    scenario: &Scenario,
    start: (Vec<f64>, f64),
    iters: usize,
) -> Result<(Vec<f64>, f64), EquilibriumError> {
    let mut buf = vec![0.0; scenario.platform_count()];
    let mut x: Vec<f64> = start.0;
    x.push(start.1);
    let d = x.len();
    let eval = |x: &[f64], buf: &mut [f64]| -> Result<(f64, Vec<f64>), EquilibriumError> {
        let v = env.objective(scenario, &x[..d - 1], x[d - 1], buf)?;
        let g = env.gradient(scenario, &x[..d - 1], x[d - 1], buf)?;
        Ok((v, g))
    };
    let (mut value, mut grad) = eval(&x, &mut buf)?;
    let mut spectral = 1.0f64;
    let mut recent = std::collections::VecDeque::from([value]);
    let proj = |v: f64| v.clamp(0.0, 1.0);
    for _ in 0..iters {
        let residual = x
            .iter()
            .zip(&grad)
            .map(|(&a, &g)| (a - proj(a + g)).abs())
            .fold(0.0f64, f64::max);
        if residual <= 1e-11 {
            break;
        }
        let dir: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(&a, &g)| proj(a + spectral * g) - a)
            .collect();
        let ascent: f64 = grad.iter().zip(&dir).map(|(&g, &v)| g * v).sum();
        if ascent <= 0.0 {
            break;
        }
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0f64;
        let (cand, cand_value, cand_grad) = loop {
            let cand: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(&a, &v)| proj(a + alpha * v))
                .collect();
            let (cv, cg) = eval(&cand, &mut buf)?;
            if cv >= reference + 1e-4 * alpha * ascent || alpha < 1e-14 {
                break (cand, cv, cg);
            }
            alpha *= 0.5;
        };
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..d {
            let s = cand[k] - x[k];
            let y = grad[k] - cand_grad[k];
            ss += s * s;
            sy += s * y;
        }
        spectral = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            1e10
        };
        x = cand;
        value = cand_value;
        grad = cand_grad;
        recent.push_back(value);
        if recent.len() > 10 {
            recent.pop_front();
        }
    }
    let b = x.pop().unwrap();
    Ok((x, b))
}

/// Grid resolution adapted to the reduced-space dimension so the scan stays
/// at desk scale.
fn grid_step_for(dim: usize) -> f64 {
    match dim {
        0..=4 => 0.05,
        5 => 0.1,
        _ => 0.2,
    }
}

/// Best reduced targets for platform `i` against the rest of `profile`:
/// coarse grid scan, then projected-gradient refinement from the best grid
/// point and from the profile's current allocation.
fn best_targets(
    scenario: &Scenario,
    profile: &MessageProfile,
    env: &DeviationEnv,
    budget: usize,
) -> Result<(Vec<f64>, f64), EquilibriumError> {
    let dim = env.comp.len() + 1;
    let step = grid_step_for(dim);
    let levels = (1.0 / step).round() as usize + 1;
    let axis: Vec<f64> = (0..levels).map(|j| (j as f64 * step).min(1.0)).collect();
    let mut buf = vec![0.0; scenario.platform_count()];
    let mut idx = vec![0usize; dim];
    let mut best = (f64::NEG_INFINITY, vec![0.0; env.comp.len()], 0.0);
    loop {
        let targets: Vec<f64> = idx[..env.comp.len()].iter().map(|&j| axis[j]).collect();
        let bound = axis[idx[env.comp.len()]];
        let value = env.objective(scenario, &targets, bound, &mut buf)?;
        if value > best.0 {
            best = (value, targets, bound);
        }
        let mut k = dim;
        loop {
            if k == 0 {
                // Refine from the grid incumbent and from the status quo.
                let (filters, alpha0) = mechanism::allocate_filters(profile, scenario);
                let current: Vec<f64> = env
                    .comp
                    .iter()
                    .map(|&l| filters[l].clamp(0.0, 1.0))
                    .collect();
                let a = refine(env, scenario, (best.1, best.2), budget)?;
                let b = refine(env, scenario, (current, alpha0.clamp(0.0, 1.0)), budget)?;
                let va = env.objective(scenario, &a.0, a.1, &mut buf)?;
                let vb = env.objective(scenario, &b.0, b.1, &mut buf)?;
                return Ok(if va >= vb { a } else { b });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < levels {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Local projected-gradient ascent from the profile's current allocation.
/// Globally optimal for concave objectives; for quasi-concave families this
/// is deliberately local — global jump moves would destabilize the
/// best-response dynamics wherever the utility has convex stretches. The
/// deviation verifier layers a grid scan on top for global coverage.
fn best_targets_pg(
    scenario: &Scenario,
    profile: &MessageProfile,
    env: &DeviationEnv,
    iters: usize,
) -> Result<(Vec<f64>, f64), EquilibriumError> {
    let (filters, alpha0) = mechanism::allocate_filters(profile, scenario);
    let current: Vec<f64> = env
        .comp
        .iter()
        .map(|&l| filters[l].clamp(0.0, 1.0))
        .collect();
    refine(env, scenario, (current, alpha0.clamp(0.0, 1.0)), iters)
}

/// Realized utility of platform `i` after swapping in a deviation message.
fn realized_utility(
    scenario: &Scenario,
    profile: &MessageProfile,
    i: usize,
    msg: PlatformMessage,
) -> f64 {
    let mut deviated = profile.clone();
    deviated.platforms[i] = msg;
    match mechanism::outcome(&deviated, scenario) {
        Ok(out) => mechanism::utility(scenario, &out, i as PlayerId + 1)
            .unwrap_or(f64::NEG_INFINITY),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Best response of platform `i` against the rest of the profile. Filter
/// proposals invert the averaging maps exactly; price proposals follow the
/// truthful-marginal rule; the claimed trust is the true trust at the chosen
/// own filter; the government-price proposal is the shadow price that would
/// make the chosen own filter stationary.
pub fn best_response_platform(
    scenario: &Scenario,
    i: usize,
    profile: &MessageProfile,
) -> Result<PlatformMessage, EquilibriumError> {
    let env = DeviationEnv::build(scenario, profile, i)?.with_posted_prices(profile);
    let (targets, bound) = best_targets_pg(scenario, profile, &env, 300)?;
    let quota = env.quota(scenario, targets[env.self_pos()], bound)?;
    let mut msg = env.message(scenario, profile, &targets, bound, quota)?;
    // Consensus-form filter proposals: steer each allocation by the desired
    // delta while agreeing with the peers when no change is wanted. At a
    // consistent profile this coincides with the exact inversion, so
    // equilibria stay fixed points; away from it the proposal spread (and
    // with it the penalty bill) contracts across sweeps, where the exact
    // inversion can freeze a spread in place once targets hit the box.
    let (filters, alpha0) = mechanism::allocate_filters(profile, scenario);
    for (pos, &l) in env.comp.iter().enumerate() {
        let c = env.set_size[pos] as f64;
        msg.proposed_filters
            .insert(l as PlayerId + 1, env.peer[pos] + c * (targets[pos] - filters[l]));
    }
    let j = scenario.player_count() as f64;
    msg.proposed_filters
        .insert(GOVERNMENT, env.peer_bound + j * (bound - alpha0));
    // Truthful-marginal prices for everyone this platform prices.
    let mut filters_buf = vec![0.0; scenario.platform_count()];
    for (pos, &l) in env.comp.iter().enumerate() {
        filters_buf[l] = targets[pos];
    }
    let (_, vgrad) = scenario.valuation(i, &filters_buf)?;
    let mut own_marginal = 0.0;
    for (l, d) in vgrad {
        if l == i {
            own_marginal = d;
        } else {
            msg.proposed_prices
                .insert(l as PlayerId + 1, d.max(0.0));
        }
    }
    // Shadow-price proposal for the government: the price that balances the
    // own-filter stationarity condition at the chosen point.
    let (_, dh) = scenario.trust(i, targets[env.self_pos()])?;
    let denom = (scenario.fractions()[i] * dh).max(1e-6);
    let shadow = (-(own_marginal + env.sigma_sum) / denom).clamp(0.0, 1e3);
    msg.proposed_prices.insert(GOVERNMENT, shadow);
    msg.proposed_min_trust = scenario.trust(i, targets[env.self_pos()])?.0;
    Ok(msg)
}

/// Closed-form best response of the government: match the allocated price
/// and steer the bound to the unconstrained maximizer of v_0(α_0) − π_0·α_0
/// clipped to the box and the budget.
pub fn best_response_government(
    scenario: &Scenario,
    profile: &MessageProfile,
) -> Result<GovernmentMessage, EquilibriumError> {
    let prices = mechanism::allocate_prices(profile, scenario)?;
    let pi0 = prices.government;
    let gov = scenario.government();
    let (w0, rho) = (gov.valuation.weight, gov.valuation.rho);
    // The bound shares the trust constraint: the government cannot steer
    // α_0 past what the current filters (and trust claims) support.
    let filters: Vec<f64> = mechanism::allocate_filters(profile, scenario)
        .0
        .iter()
        .map(|a| a.clamp(0.0, 1.0))
        .collect();
    let claimed: f64 = scenario
        .fractions()
        .iter()
        .zip(&profile.platforms)
        .map(|(n, m)| n * m.proposed_min_trust)
        .sum();
    let cap = scenario
        .aggregate_trust(&filters)?
        .min(claimed)
        .clamp(0.0, 1.0);
    let target = if pi0 <= 0.0 {
        if w0 > 0.0 {
            cap
        } else {
            0.0
        }
    } else {
        (w0 / pi0 - 1.0 / rho).clamp(0.0, (gov.budget / pi0).min(cap))
    };
    let others: f64 = profile
        .platforms
        .iter()
        .map(|m| m.proposed_filters[&GOVERNMENT])
        .sum();
    let j = scenario.player_count() as f64;
    Ok(GovernmentMessage {
        proposed_price: pi0,
        proposed_lower_bound: j * target - others,
    })
}

fn damp(new: f64, old: f64, theta: f64) -> f64 {
    theta * new + (1.0 - theta) * old
}

fn damp_platform(new: &PlatformMessage, old: &PlatformMessage, theta: f64) -> PlatformMessage {
    PlatformMessage {
        proposed_min_trust: damp(new.proposed_min_trust, old.proposed_min_trust, theta),
        proposed_prices: new
            .proposed_prices
            .iter()
            .map(|(&k, &v)| (k, damp(v, old.proposed_prices[&k], theta)))
            .collect(),
        proposed_filters: new
            .proposed_filters
            .iter()
            .map(|(&k, &v)| (k, damp(v, old.proposed_filters[&k], theta)))
            .collect(),
    }
}

fn platform_distance(a: &PlatformMessage, b: &PlatformMessage) -> f64 {
    let mut d = (a.proposed_min_trust - b.proposed_min_trust).abs();
    for (k, v) in &a.proposed_prices {
        d = d.max((v - b.proposed_prices[k]).abs());
    }
    for (k, v) in &a.proposed_filters {
        d = d.max((v - b.proposed_filters[k]).abs());
    }
    d
}

/// Damped best-response sweeps from `init`. Non-convergence is reported via
/// the residual, never thrown.
pub fn iterate_dynamics(
    scenario: &Scenario,
    init: MessageProfile,
    params: &DynamicsParams,
) -> Result<EquilibriumReport, EquilibriumError> {
    assert!(params.damping > 0.0 && params.damping <= 1.0);
    let theta = params.damping;
    let mut profile = init;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for sweep in 0..params.max_sweeps {
        let mut sweep_residual = 0.0f64;
        // Government first.
        let gov_new = best_response_government(scenario, &profile)?;
        let gov_damped = GovernmentMessage {
            proposed_price: damp(
                gov_new.proposed_price,
                profile.government.proposed_price,
                theta,
            ),
            proposed_lower_bound: damp(
                gov_new.proposed_lower_bound,
                profile.government.proposed_lower_bound,
                theta,
            ),
        };
        sweep_residual = sweep_residual
            .max((gov_damped.proposed_price - profile.government.proposed_price).abs())
            .max(
                (gov_damped.proposed_lower_bound - profile.government.proposed_lower_bound).abs(),
            );
        profile.government = gov_damped;
        match params.order {
            SweepOrder::GaussSeidel => {
                for i in 0..scenario.platform_count() {
                    let new = best_response_platform(scenario, i, &profile)?;
                    let damped = damp_platform(&new, &profile.platforms[i], theta);
                    sweep_residual =
                        sweep_residual.max(platform_distance(&damped, &profile.platforms[i]));
                    profile.platforms[i] = damped;
                }
            }
            SweepOrder::Jacobi => {
                let snapshot = profile.clone();
                let new: Vec<PlatformMessage> = (0..scenario.platform_count())
                    .into_par_iter()
                    .map(|i| best_response_platform(scenario, i, &snapshot))
                    .collect::<Result<_, _>>()?;
                for (i, msg) in new.into_iter().enumerate() {
                    let damped = damp_platform(&msg, &profile.platforms[i], theta);
                    sweep_residual =
                        sweep_residual.max(platform_distance(&damped, &profile.platforms[i]));
                    profile.platforms[i] = damped;
                }
            }
        }
        iterations = sweep + 1;
        residual = sweep_residual;
        if residual <= params.tol {
            break;
        }
    }
    if params.max_sweeps == 0 {
        residual = 0.0;
    }
    report(scenario, profile, Method::Dynamics, iterations, residual)
}

/// Assemble a report: outcome plus per-player utilities.
pub fn report(
    scenario: &Scenario,
    profile: MessageProfile,
    method: Method,
    iterations: usize,
    message_residual: f64,
) -> Result<EquilibriumReport, EquilibriumError> {
    let outcome = mechanism::outcome(&profile, scenario)?;
    let utilities = (0..=scenario.platform_count() as PlayerId)
        .map(|p| mechanism::utility(scenario, &outcome, p).unwrap_or(f64::NEG_INFINITY))
        .collect();
    Ok(EquilibriumReport {
        profile,
        outcome,
        method,
        iterations,
        message_residual,
        max_deviation_gain: None,
        utilities,
    })
}

/// Search for profitable unilateral deviations. `search_budget` caps the
/// projected-gradient refinement iterations per start. Gains are lower
/// bounds on the true best deviations.
pub fn verify_gne(
    scenario: &Scenario,
    profile: &MessageProfile,
    search_budget: usize,
) -> Result<DeviationSearch, EquilibriumError> {
    let outcome = mechanism::outcome(profile, scenario)?;
    let count = scenario.platform_count();
    let platform_gains: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<f64, EquilibriumError> {
            let baseline = mechanism::utility(scenario, &outcome, i as PlayerId + 1)
                .unwrap_or(f64::NEG_INFINITY);
            let env = DeviationEnv::build(scenario, profile, i)?;
            let (targets, bound) = best_targets(scenario, profile, &env, search_budget)?;
            let quota = env.quota(scenario, targets[env.self_pos()], bound)?;
            let msg = env.message(scenario, profile, &targets, bound, quota)?;
            let best = realized_utility(scenario, profile, i, msg);
            Ok(best - baseline)
        })
        .collect::<Result<_, _>>()?;
    // Government: closed form; its utility never depends on the quotas, so
    // it is evaluated directly even where the quota rule would degenerate.
    let baseline0 = scenario.gov_valuation(outcome.lower_bound.clamp(0.0, 1.0))?.0
        - outcome.government_tax;
    let gov = best_response_government(scenario, profile)?;
    let pi0 = gov.proposed_price;
    let others: f64 = profile
        .platforms
        .iter()
        .map(|m| m.proposed_filters[&GOVERNMENT])
        .sum();
    let alpha0 = (gov.proposed_lower_bound + others) / scenario.player_count() as f64;
    let gov_gain =
        scenario.gov_valuation(alpha0.clamp(0.0, 1.0))?.0 - pi0 * alpha0 - baseline0;
    let mut gains = vec![gov_gain];
    gains.extend(platform_gains);
    let (argmax, &max_gain) = gains
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least the government");
    Ok(DeviationSearch {
        gains,
        max_gain,
        player: argmax as PlayerId,
    })
}

/// Sample random feasible allocation perturbations looking for a Pareto
/// improvement over the outcome's allocation (valuations compared; taxes
/// held fixed and therefore cancelling). Returns a witness action vector
/// (government bound first) or `None`.
pub fn pareto_check(
    scenario: &Scenario,
    outcome: &Outcome,
    sample_count: usize,
    seed: u64,
) -> Result<Option<Vec<f64>>, EquilibriumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = scenario.platform_count();
    let base_filters: Vec<f64> = outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let base_bound = outcome.lower_bound.clamp(0.0, 1.0);
    let mut base_values = vec![scenario.gov_valuation(base_bound)?.0];
    for i in 0..count {
        base_values.push(scenario.valuation_value(i, &base_filters)?);
    }
    for _ in 0..sample_count {
        // Dirichlet-distributed direction magnitudes with random signs.
        let mut dir: Vec<f64> = (0..=count)
            .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
            .collect();
        let total: f64 = dir.iter().sum();
        for d in &mut dir {
            *d /= total;
            if rng.random::<bool>() {
                *d = -*d;
            }
        }
        let radius: f64 = rng.random_range(0.0..1.0);
        let cand_filters: Vec<f64> = base_filters
            .iter()
            .zip(&dir[1..])
            .map(|(&a, &d)| (a + radius * d).clamp(0.0, 1.0))
            .collect();
        let cap = scenario.aggregate_trust(&cand_filters)?;
        let cand_bound = (base_bound + radius * dir[0]).clamp(0.0, 1.0).min(cap);
        let mut improving = false;
        let mut harmless = true;
        let delta0 = scenario.gov_valuation(cand_bound)?.0 - base_values[0];
        if delta0 > 1e-6 {
            improving = true;
        }
        if delta0 < -1e-9 {
            harmless = false;
        }
        for i in 0..count {
            if !harmless {
                break;
            }
            let delta = scenario.valuation_value(i, &cand_filters)? - base_values[i + 1];
            if delta > 1e-6 {
                improving = true;
            }
            if delta < -1e-9 {
                harmless = false;
            }
        }
        if improving && harmless {
            let mut witness = vec![cand_bound];
            witness.extend(cand_filters);
            return Ok(Some(witness));
        }
    }
    Ok(None)
}

/// Per-platform utility margin over the non-participation payoff
/// v_i(0, …, 0).
pub fn individual_rationality_margin(
    scenario: &Scenario,
    report: &EquilibriumReport,
) -> Result<Vec<f64>, EquilibriumError> {
    let zeros = vec![0.0; scenario.platform_count()];
    (0..scenario.platform_count())
        .map(|i| {
            let opt_out = scenario.valuation_value(i, &zeros)?;
            Ok(report.utilities[i + 1] - opt_out)
        })
        .collect()
}
