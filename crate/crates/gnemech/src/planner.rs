//! Full-information welfare maximization: an augmented-Lagrangian KKT
//! solver over the box [0,1]^{|J|} with the trust-coupling constraint, plus
//! an independent brute-force grid oracle used to cross-check it.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, Scenario};

const MAX_OUTER: usize = 200;
const MAX_INNER: usize = 10_000;
// Larger penalties make the inner problem too ill-conditioned for a
// first-order method; multiplier updates carry the rest of the convergence.
const PENALTY_CAP: f64 = 1e6;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("solver did not converge: final KKT residual {residual:e}")]
    NonConvergence { residual: f64 },
    #[error("grid oracle limited to 5 players, scenario has {players}")]
    Scale { players: usize },
    #[error("grid step {0} outside (0, 0.1]")]
    GridStep(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// KKT multipliers of the centralized problem. `lower`/`upper` cover the box
/// constraints in action order (government first), `trust` is the coupling
/// constraint's multiplier, and `budget` is carried for completeness: the
/// budget check is performed ex post, so it never binds inside the solve.
#[derive(Debug, Clone, Serialize)]
pub struct Multipliers {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub trust: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CentralizedSolution {
    /// (a_0*, a_1*, …, a_I*).
    pub actions: Vec<f64>,
    pub multipliers: Multipliers,
    pub welfare: f64,
    pub kkt_residual: f64,
    /// True when the investment implied by the trust multiplier exceeds the
    /// government budget.
    pub budget_binding: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridOptimum {
    /// (a_0, a_1, …, a_I) on the refined grid.
    pub actions: Vec<f64>,
    pub welfare: f64,
}

/// Social welfare v_0(a_0) + Σ_i v_i. Taxes sum to zero under the mechanism
/// and are therefore absent. `actions[0]` is the government lower bound.
pub fn social_welfare(scenario: &Scenario, actions: &[f64]) -> Result<f64, PlannerError> {
    let filters = &actions[1..];
    let mut total = scenario.gov_valuation(actions[0])?.0;
    for i in 0..scenario.platform_count() {
        total += scenario.valuation_value(i, filters)?;
    }
    Ok(total)
}

/// Welfare and its gradient in action order.
fn welfare_grad(scenario: &Scenario, actions: &[f64]) -> Result<(f64, Vec<f64>), PlannerError> {
    let filters = &actions[1..];
    let mut grad = vec![0.0; actions.len()];
    let (v0, d0) = scenario.gov_valuation(actions[0])?;
    let mut total = v0;
    grad[0] = d0;
    for i in 0..scenario.platform_count() {
        let (v, g) = scenario.valuation(i, filters)?;
        total += v;
        for (k, d) in g {
            grad[k + 1] += d;
        }
    }
    Ok((total, grad))
}

/// Constraint slack c(a) = a_0 − Σ n_i h_i(a_i); feasible iff c ≤ 0.
fn trust_slack(scenario: &Scenario, actions: &[f64]) -> Result<f64, PlannerError> {
    Ok(actions[0] - scenario.aggregate_trust(&actions[1..])?)
}

/// Augmented-Lagrangian objective and gradient for multiplier `mu` and
/// penalty `rho` (maximization form).
fn al_value_grad(
    scenario: &Scenario,
    actions: &[f64],
    mu: f64,
    rho: f64,
) -> Result<(f64, Vec<f64>), PlannerError> {
    let (w, mut grad) = welfare_grad(scenario, actions)?;
    let c = trust_slack(scenario, actions)?;
    let s = (mu + rho * c).max(0.0);
    let value = w - (s * s - mu * mu) / (2.0 * rho);
    if s > 0.0 {
        grad[0] -= s;
        let n = scenario.fractions();
        for i in 0..scenario.platform_count() {
            let (_, dh) = scenario.trust(i, actions[i + 1])?;
            grad[i + 1] += s * n[i] * dh;
        }
    }
    Ok((value, grad))
}

fn project(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Spectral projected-gradient ascent (Barzilai–Borwein step with a
/// nonmonotone Armijo search) on the augmented Lagrangian.
fn inner_ascent(
    scenario: &Scenario,
    actions: &mut Vec<f64>,
    mu: f64,
    rho: f64,
    tol: f64,
) -> Result<(), PlannerError> {
    let (mut value, mut grad) = al_value_grad(scenario, actions, mu, rho)?;
    let mut spectral = 1.0f64;
    let mut recent = std::collections::VecDeque::from([value]);
    for _ in 0..MAX_INNER {
        let residual = actions
            .iter()
            .zip(&grad)
            .map(|(&a, &g)| (a - project(a + g)).abs())
            .fold(0.0f64, f64::max);
        if residual <= tol {
            return Ok(());
        }
        let dir: Vec<f64> = actions
            .iter()
            .zip(&grad)
            .map(|(&a, &g)| project(a + spectral * g) - a)
            .collect();
        let ascent: f64 = grad.iter().zip(&dir).map(|(&g, &d)| g * d).sum();
        if ascent <= 0.0 {
            return Ok(());
        }
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0f64;
        let (cand, cand_value, cand_grad) = loop {
            let cand: Vec<f64> = actions
                .iter()
                .zip(&dir)
                .map(|(&a, &d)| project(a + alpha * d))
                .collect();
            let (cv, cg) = al_value_grad(scenario, &cand, mu, rho)?;
            if cv >= reference + ARMIJO * alpha * ascent || alpha < 1e-14 {
                break (cand, cv, cg);
            }
            alpha *= 0.5;
        };
        // BB1 step from the last displacement and gradient change.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..actions.len() {
            let s = cand[k] - actions[k];
            let y = grad[k] - cand_grad[k];
            ss += s * s;
            sy += s * y;
        }
        spectral = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            1e10
        };
        *actions = cand;
        value = cand_value;
        grad = cand_grad;
        recent.push_back(value);
        if recent.len() > 10 {
            recent.pop_front();
        }
    }
    Ok(())
}

/// Max-norm KKT residual of the centralized problem at `actions` with trust
/// multiplier `nu`: projected stationarity per coordinate, primal
/// feasibility, and complementary slackness.
pub fn kkt_residual(scenario: &Scenario, actions: &[f64], nu: f64) -> Result<f64, PlannerError> {
    let (_, grad_w) = welfare_grad(scenario, actions)?;
    let n = scenario.fractions();
    let mut worst = 0.0f64;
    for (idx, &a) in actions.iter().enumerate() {
        let g = if idx == 0 {
            grad_w[0] - nu
        } else {
            let (_, dh) = scenario.trust(idx - 1, a)?;
            grad_w[idx] + nu * n[idx - 1] * dh
        };
        // Projected-step stationarity: |a − P(a + g)| vanishes both at
        // interior stationary points and when the gradient pushes against a
        // bound, without an active-set slack that misreads points a few ulp
        // inside the box.
        let stat = (a - (a + g).clamp(0.0, 1.0)).abs();
        worst = worst.max(stat);
    }
    let c = trust_slack(scenario, actions)?;
    worst = worst.max(c.max(0.0));
    worst = worst.max((nu * c).abs());
    Ok(worst)
}

/// Solve the welfare problem by augmented Lagrangian over the trust
/// constraint with a projected-gradient inner loop. Deterministic: fixed
/// starting point and iteration schedule.
pub fn solve_centralized(
    scenario: &Scenario,
    tolerance: f64,
) -> Result<CentralizedSolution, PlannerError> {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let dim = scenario.player_count();
    let mut actions = vec![0.5; dim];
    let mut mu = 0.0f64;
    let mut rho = 1.0f64;
    let mut last_residual = f64::INFINITY;
    for _ in 0..MAX_OUTER {
        inner_ascent(scenario, &mut actions, mu, rho, tolerance)?;
        let c = trust_slack(scenario, &actions)?;
        let nu = (mu + rho * c).max(0.0);
        // Candidate solution with the tiny residual infeasibility clamped
        // away before judging the KKT system.
        let mut cand = actions.clone();
        cand[0] = cand[0]
            .min(scenario.aggregate_trust(&cand[1..])?)
            .clamp(0.0, 1.0);
        let residual = kkt_residual(scenario, &cand, nu)?;
        if residual <= tolerance {
            return Ok(finish(scenario, cand, nu, residual)?);
        }
        last_residual = residual;
        mu = nu;
        rho = (rho * 10.0).min(PENALTY_CAP);
    }
    Err(PlannerError::NonConvergence {
        residual: last_residual,
    })
}

fn finish(
    scenario: &Scenario,
    actions: Vec<f64>,
    nu: f64,
    residual: f64,
) -> Result<CentralizedSolution, PlannerError> {
    let (welfare, grad_w) = welfare_grad(scenario, &actions)?;
    let n = scenario.fractions();
    let mut lower = vec![0.0; actions.len()];
    let mut upper = vec![0.0; actions.len()];
    for (idx, &a) in actions.iter().enumerate() {
        let g = if idx == 0 {
            grad_w[0] - nu
        } else {
            let (_, dh) = scenario.trust(idx - 1, a)?;
            grad_w[idx] + nu * n[idx - 1] * dh
        };
        if a <= 1e-9 {
            lower[idx] = (-g).max(0.0);
        } else if a >= 1.0 - 1e-9 {
            upper[idx] = g.max(0.0);
        }
    }
    let budget_binding = nu * actions[0] > scenario.government().budget + 1e-12;
    Ok(CentralizedSolution {
        welfare,
        multipliers: Multipliers {
            lower,
            upper,
            trust: nu,
            budget: 0.0,
        },
        kkt_residual: residual,
        budget_binding,
        actions,
    })
}

/// Exhaustive grid scan over the platform filters with the best feasible
/// lower bound filled in per point, followed by one refinement pass at a
/// tenth of the step around the incumbent. First-found incumbent wins ties
/// (lexicographic grid order), so the result is deterministic.
pub fn brute_force_centralized(
    scenario: &Scenario,
    grid_step: f64,
) -> Result<GridOptimum, PlannerError> {
    if scenario.player_count() > 5 {
        return Err(PlannerError::Scale {
            players: scenario.player_count(),
        });
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(PlannerError::GridStep(grid_step));
    }
    let coarse = scan_axes(
        scenario,
        grid_step,
        &vec![(0.0, 1.0); scenario.platform_count()],
    )?;
    // Refinement window: one coarse cell either side of the incumbent.
    let fine = grid_step / 10.0;
    let windows: Vec<(f64, f64)> = coarse.actions[1..]
        .iter()
        .map(|&a| ((a - grid_step).max(0.0), (a + grid_step).min(1.0)))
        .collect();
    let refined = scan_axes(scenario, fine, &windows)?;
    Ok(if refined.welfare > coarse.welfare {
        refined
    } else {
        coarse
    })
}

/// Scan the cartesian grid of the given per-platform windows at `step`,
/// choosing the government bound in closed form per point: welfare is
/// nondecreasing in a_0, so the best feasible bound is exactly
/// min(Σ n_i h_i, 1) (or 0 when the government is indifferent).
fn scan_axes(
    scenario: &Scenario,
    step: f64,
    windows: &[(f64, f64)],
) -> Result<GridOptimum, PlannerError> {
    let axes: Vec<Vec<f64>> = windows
        .iter()
        .map(|&(lo, hi)| {
            let start = (lo / step).ceil() as usize;
            let end = (hi / step + 1e-9).floor() as usize;
            (start..=end).map(|j| (j as f64 * step).min(1.0)).collect()
        })
        .collect();
    let n = scenario.fractions();
    // Per-axis trust contributions n_i·h_i.
    let trust_tab: Vec<Vec<f64>> = axes
        .iter()
        .enumerate()
        .map(|(i, axis)| {
            axis.iter()
                .map(|&a| Ok(n[i] * scenario.trust(i, a)?.0))
                .collect::<Result<Vec<f64>, ModelError>>()
        })
        .collect::<Result<_, _>>()?;
    // Separable fast path: with every valuation log-linear-quadratic the
    // platform part of welfare splits into per-coordinate terms.
    let value_tab: Option<Vec<Vec<f64>>> = if scenario.all_concave() {
        let mut weight_on = vec![0.0; scenario.platform_count()];
        for p in scenario.platforms() {
            for (&l, &w) in &p.valuation.cross_weights {
                weight_on[(l - 1) as usize] += w;
            }
        }
        Some(
            axes.iter()
                .enumerate()
                .map(|(i, axis)| {
                    let spec = &scenario.platform(i).valuation;
                    axis.iter()
                        .map(|&a| {
                            weight_on[i] * (1.0 + a).ln()
                                - spec.own_linear_cost * a
                                - spec.own_quadratic_cost * a * a
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };
    let gov_active = scenario.gov_strictly_increasing();
    let scan_first_axis = |j0: usize| -> Result<(f64, Vec<f64>), PlannerError> {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut idx = vec![0usize; axes.len()];
        idx[0] = j0;
        loop {
            let filters: Vec<f64> = idx.iter().zip(&axes).map(|(&j, ax)| ax[j]).collect();
            let trust: f64 = idx.iter().zip(&trust_tab).map(|(&j, t)| t[j]).sum();
            let a0 = if gov_active { trust.min(1.0) } else { 0.0 };
            let welfare = match &value_tab {
                Some(tabs) => {
                    idx.iter().zip(tabs).map(|(&j, t)| t[j]).sum::<f64>()
                        + scenario.gov_valuation(a0)?.0
                }
                None => {
                    let mut w = scenario.gov_valuation(a0)?.0;
                    for i in 0..scenario.platform_count() {
                        w += scenario.valuation_value(i, &filters)?;
                    }
                    w
                }
            };
            if welfare > best.0 {
                let mut actions = Vec::with_capacity(filters.len() + 1);
                actions.push(a0);
                actions.extend_from_slice(&filters);
                best = (welfare, actions);
            }
            // Odometer over axes 1.., keeping the first axis fixed.
            let mut k = axes.len() - 1;
            loop {
                if k == 0 {
                    return Ok(best);
                }
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
                k -= 1;
            }
        }
    };
    let per_first: Vec<(f64, Vec<f64>)> = (0..axes[0].len())
        .into_par_iter()
        .map(scan_first_axis)
        .collect::<Result<_, _>>()?;
    let best = per_first
        .into_iter()
        .reduce(|acc, cand| if cand.0 > acc.0 { cand } else { acc })
        .expect("grid has at least one point");
    Ok(GridOptimum {
        welfare: best.0,
        actions: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{gen_random_scenario, validate_scenario, Variant};

    #[test]
    fn welfare_examples() {
        let s = fixtures::tri_sym();
        assert_eq!(social_welfare(&s, &[0.0; 4]).unwrap(), 0.0);
        let w = social_welfare(&s, &[0.45, 0.5, 0.5, 0.5]).unwrap();
        let expected = 2.0 * 1.45f64.ln() + 3.0 * (2.0 * 1.5f64.ln() - 0.3125);
        assert!((w - expected).abs() < 1e-12);
        assert!(social_welfare(&s, &[0.45, 1.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn indifferent_scenario_solves_to_the_origin() {
        let s = fixtures::near_zero_benefit();
        let sol = solve_centralized(&s, 1e-8).unwrap();
        assert!(sol.actions.iter().all(|&a| a < 1e-6), "{:?}", sol.actions);
        let grid = brute_force_centralized(&s, 0.01).unwrap();
        assert_eq!(grid.actions, vec![0.0; 4]);
    }

    #[test]
    fn trust_constraint_is_tight_when_the_government_cares() {
        for seed in [1, 4, 6] {
            let s = gen_random_scenario(seed, 3, Variant::Standard);
            let sol = solve_centralized(&s, 1e-8).unwrap();
            let cap = s.aggregate_trust(&sol.actions[1..]).unwrap().min(1.0);
            assert!(
                (sol.actions[0] - cap).abs() < 1e-6,
                "seed {seed}: a_0 = {} cap = {cap}",
                sol.actions[0]
            );
        }
    }

    #[test]
    fn tri_sym_closed_form_and_oracle_agreement() {
        let s = fixtures::tri_sym();
        let sol = solve_centralized(&s, 1e-8).unwrap();
        // Interior stationarity 2/(1+a) = 1/2 + a/2 has root a = 1, so the
        // optimum sits at the all-ones corner with a_0 pinned by trust.
        for &a in &sol.actions {
            assert!((a - 1.0).abs() < 1e-6, "{:?}", sol.actions);
        }
        let expected = 8.0 * 2.0f64.ln() - 2.25;
        assert!((sol.welfare - expected).abs() < 1e-9);
        let grid = brute_force_centralized(&s, 0.01).unwrap();
        assert!(sol.welfare >= grid.welfare - 1e-6);
        for (a, b) in sol.actions.iter().zip(&grid.actions) {
            assert!((a - b).abs() <= 0.02);
        }
    }

    #[test]
    fn solver_beats_oracle_on_random_concave_scenarios() {
        for seed in [3, 11, 12, 19] {
            let s = gen_random_scenario(seed, 3, Variant::Standard);
            let sol = solve_centralized(&s, 1e-8).unwrap();
            let grid = brute_force_centralized(&s, 0.02).unwrap();
            assert!(
                sol.welfare >= grid.welfare - 1e-6,
                "seed {seed}: solver {} grid {}",
                sol.welfare,
                grid.welfare
            );
            for (a, b) in sol.actions.iter().zip(&grid.actions) {
                assert!((a - b).abs() <= 0.04, "seed {seed}: {:?} vs {:?}", sol.actions, grid.actions);
            }
        }
    }

    #[test]
    fn solution_satisfies_reported_invariants() {
        for seed in [2, 5] {
            let s = gen_random_scenario(seed, 4, Variant::Standard);
            let sol = solve_centralized(&s, 1e-8).unwrap();
            assert!(sol.kkt_residual <= 1e-8);
            assert!(sol.multipliers.trust >= 0.0);
            assert!(sol.multipliers.lower.iter().all(|&m| m >= 0.0));
            assert!(sol.multipliers.upper.iter().all(|&m| m >= 0.0));
            for &a in &sol.actions {
                assert!((0.0..=1.0).contains(&a));
            }
            let slack = sol.actions[0] - s.aggregate_trust(&sol.actions[1..]).unwrap();
            assert!(slack <= 1e-9);
        }
    }

    #[test]
    fn raising_the_government_weight_never_lowers_the_bound() {
        let mut prev = -1.0;
        for w0 in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let mut raw = gen_random_scenario(14, 3, Variant::Standard).raw();
            raw.government.valuation.weight = w0;
            let s = validate_scenario(raw).unwrap();
            let sol = solve_centralized(&s, 1e-8).unwrap();
            assert!(sol.actions[0] >= prev - 1e-9);
            prev = sol.actions[0];
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let s = gen_random_scenario(6, 4, Variant::Standard);
        let a = solve_centralized(&s, 1e-8).unwrap();
        let b = solve_centralized(&s, 1e-8).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.welfare, b.welfare);
    }

    #[test]
    fn grid_step_refinement_is_consistent() {
        let s = gen_random_scenario(8, 3, Variant::Standard);
        let coarse = brute_force_centralized(&s, 0.01).unwrap();
        let finer = brute_force_centralized(&s, 0.005).unwrap();
        for (a, b) in coarse.actions.iter().zip(&finer.actions) {
            assert!((a - b).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_out_of_scale_inputs() {
        let s = gen_random_scenario(1, 5, Variant::Standard);
        assert!(matches!(
            brute_force_centralized(&s, 0.05),
            Err(PlannerError::Scale { players: 6 })
        ));
        let s = gen_random_scenario(1, 3, Variant::Standard);
        assert!(matches!(
            brute_force_centralized(&s, 0.2),
            Err(PlannerError::GridStep(_))
        ));
    }
}
