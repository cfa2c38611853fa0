//! The planner's outcome function: filter and lower-bound allocation,
//! minimum-trust quotas, price allocation, and taxes, in both the standard
//! and the extended (duopoly-capable) price-allocation variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PlayerId, Scenario, Variant, GOVERNMENT};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("aggregate proposed trust is zero while the allocated lower bound is positive")]
    DegenerateTrust,
    #[error("platform {owner} has a two-member competitor set; the standard price allocation needs at least three")]
    Variant { owner: PlayerId },
    #[error("malformed message: {0}")]
    Message(String),
    #[error("allocation infeasible for player {player}; utility is unbounded below")]
    InfeasibleAllocation { player: PlayerId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Message of platform `i`: a claimed trust level, prices for every other
/// relevant player's allocation, and proposed filters for everyone in its
/// competitor set plus the government bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformMessage {
    /// Claimed own trust h̃_i >= 0.
    pub proposed_min_trust: f64,
    /// Price proposals keyed by the player whose allocation they price:
    /// competitors and the government (key 0). Under the extended variant a
    /// platform with exactly two competitors also prices itself.
    pub proposed_prices: BTreeMap<PlayerId, f64>,
    /// Filter proposals keyed by player: every competitor including itself,
    /// plus the government lower bound (key 0). Unbounded reals.
    pub proposed_filters: BTreeMap<PlayerId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernmentMessage {
    /// Announced price p̃_0 >= 0.
    pub proposed_price: f64,
    /// Proposed lower bound ã_0^0, an unbounded real.
    pub proposed_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageProfile {
    pub government: GovernmentMessage,
    /// One message per platform, in id order.
    pub platforms: Vec<PlatformMessage>,
}

/// Price allocation: payment prices keyed by (payer, owner), subsidy prices
/// keyed by (recipient, counterparty), and the government price.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prices {
    pub payment: BTreeMap<(PlayerId, PlayerId), f64>,
    pub subsidy: BTreeMap<(PlayerId, PlayerId), f64>,
    pub government: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    /// α_i per platform, in id order.
    pub filters: Vec<f64>,
    /// α_0.
    pub lower_bound: f64,
    /// η_i per platform.
    pub min_trust: Vec<f64>,
    /// π_l^i keyed (payer i, owner l).
    pub payment_prices: BTreeMap<(PlayerId, PlayerId), f64>,
    /// σ keyed (recipient i, counterparty l); equals the mirrored payment
    /// price under the standard variant.
    pub subsidy_prices: BTreeMap<(PlayerId, PlayerId), f64>,
    /// π_0.
    pub government_price: f64,
    /// τ_i per platform.
    pub taxes: Vec<f64>,
    pub government_tax: f64,
    /// α_i within [0, 1] and the platform's real trust meets its quota.
    pub feasible: Vec<bool>,
    /// True if any quota hit the clip at 1, which voids the quota identity.
    pub trust_clipped: bool,
}

pub fn validate_profile(profile: &MessageProfile, scenario: &Scenario) -> Result<(), MechanismError> {
    let n = scenario.platform_count();
    if profile.platforms.len() != n {
        return Err(MechanismError::Message(format!(
            "profile has {} platform messages, scenario has {} platforms",
            profile.platforms.len(),
            n
        )));
    }
    if !(profile.government.proposed_price >= 0.0) || !profile.government.proposed_lower_bound.is_finite() {
        return Err(MechanismError::Message(
            "government price must be a nonnegative finite number".into(),
        ));
    }
    for (idx, msg) in profile.platforms.iter().enumerate() {
        let id = idx as PlayerId + 1;
        if !(msg.proposed_min_trust >= 0.0) {
            return Err(MechanismError::Message(format!(
                "platform {id}: proposed trust must be nonnegative"
            )));
        }
        let comp = scenario.competitors_of(idx);
        let own_price = scenario.variant() == Variant::Extended && comp.len() == 2;
        let mut expected_prices: Vec<PlayerId> = comp
            .iter()
            .map(|&k| k as PlayerId + 1)
            .filter(|&k| k != id || own_price)
            .collect();
        expected_prices.push(GOVERNMENT);
        expected_prices.sort_unstable();
        let actual: Vec<PlayerId> = msg.proposed_prices.keys().copied().collect();
        if actual != expected_prices {
            return Err(MechanismError::Message(format!(
                "platform {id}: price keys {actual:?} do not match required {expected_prices:?}"
            )));
        }
        let mut expected_filters: Vec<PlayerId> =
            comp.iter().map(|&k| k as PlayerId + 1).collect();
        expected_filters.push(GOVERNMENT);
        expected_filters.sort_unstable();
        let actual: Vec<PlayerId> = msg.proposed_filters.keys().copied().collect();
        if actual != expected_filters {
            return Err(MechanismError::Message(format!(
                "platform {id}: filter keys {actual:?} do not match required {expected_filters:?}"
            )));
        }
        for (&l, &p) in &msg.proposed_prices {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(MechanismError::Message(format!(
                    "platform {id}: price for {l} must be nonnegative and finite"
                )));
            }
        }
        for (&l, &a) in &msg.proposed_filters {
            if !a.is_finite() {
                return Err(MechanismError::Message(format!(
                    "platform {id}: filter proposal for {l} must be finite"
                )));
            }
        }
    }
    Ok(())
}

/// α_i = mean of the proposals for i over C_i; α_0 = mean of the bound
/// proposals over all of J.
pub fn allocate_filters(profile: &MessageProfile, scenario: &Scenario) -> (Vec<f64>, f64) {
    let filters = (0..scenario.platform_count())
        .map(|i| {
            let comp = scenario.competitors_of(i);
            let sum: f64 = comp
                .iter()
                .map(|&k| profile.platforms[k].proposed_filters[&(i as PlayerId + 1)])
                .sum();
            sum / comp.len() as f64
        })
        .collect();
    let bound_sum: f64 = profile.government.proposed_lower_bound
        + profile
            .platforms
            .iter()
            .map(|m| m.proposed_filters[&GOVERNMENT])
            .sum::<f64>();
    (filters, bound_sum / scenario.player_count() as f64)
}

/// η_i = min(n_i h̃_i / Σ_k n_k h̃_k · α_0, 1). Returns the quotas and
/// whether any was clipped. A zero trust denominator is tolerated only when
/// the allocated bound is not positive, in which case every quota is zero.
pub fn allocate_min_trust(
    profile: &MessageProfile,
    scenario: &Scenario,
) -> Result<(Vec<f64>, bool), MechanismError> {
    let (_, alpha0) = allocate_filters(profile, scenario);
    min_trust_from(profile, scenario, alpha0)
}

fn min_trust_from(
    profile: &MessageProfile,
    scenario: &Scenario,
    alpha0: f64,
) -> Result<(Vec<f64>, bool), MechanismError> {
    let n = scenario.fractions();
    let denom: f64 = profile
        .platforms
        .iter()
        .enumerate()
        .map(|(i, m)| n[i] * m.proposed_min_trust)
        .sum();
    if denom <= 0.0 {
        if alpha0 > 0.0 {
            return Err(MechanismError::DegenerateTrust);
        }
        return Ok((vec![0.0; scenario.platform_count()], false));
    }
    let mut clipped = false;
    let quotas = profile
        .platforms
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let raw = n[i] * m.proposed_min_trust / denom * alpha0;
            if raw > 1.0 {
                clipped = true;
                1.0
            } else {
                raw
            }
        })
        .collect();
    Ok((quotas, clipped))
}

/// Payment prices π_l^i, subsidy prices σ, and the government price π_0.
pub fn allocate_prices(profile: &MessageProfile, scenario: &Scenario) -> Result<Prices, MechanismError> {
    let extended = scenario.variant() == Variant::Extended;
    let mut payment = BTreeMap::new();
    for i in 0..scenario.platform_count() {
        for &l in scenario.competitors_of(i) {
            if l == i {
                continue;
            }
            let owners = scenario.competitors_of(l);
            let price = if owners.len() == 2 {
                if !extended {
                    return Err(MechanismError::Variant {
                        owner: l as PlayerId + 1,
                    });
                }
                profile.platforms[l].proposed_prices[&(l as PlayerId + 1)]
            } else {
                let sum: f64 = owners
                    .iter()
                    .filter(|&&k| k != l && k != i)
                    .map(|&k| profile.platforms[k].proposed_prices[&(l as PlayerId + 1)])
                    .sum();
                sum / (owners.len() - 2) as f64
            };
            payment.insert((i as PlayerId + 1, l as PlayerId + 1), price);
        }
    }
    // Subsidy price for i's allocation in its relationship with l: the
    // mirrored payment price, except that a two-member set prices i's
    // allocation by l's direct proposal.
    let mut subsidy = BTreeMap::new();
    for i in 0..scenario.platform_count() {
        for &l in scenario.competitors_of(i) {
            if l == i {
                continue;
            }
            let price = if scenario.competitors_of(i).len() == 2 {
                profile.platforms[l].proposed_prices[&(i as PlayerId + 1)]
            } else {
                payment[&(l as PlayerId + 1, i as PlayerId + 1)]
            };
            subsidy.insert((i as PlayerId + 1, l as PlayerId + 1), price);
        }
    }
    let government = profile
        .platforms
        .iter()
        .map(|m| m.proposed_prices[&GOVERNMENT])
        .sum::<f64>()
        / scenario.platform_count() as f64;
    Ok(Prices {
        payment,
        subsidy,
        government,
    })
}

/// Mean proposal for platform `l` (0-based) excluding platform `i`'s.
fn peer_mean(profile: &MessageProfile, scenario: &Scenario, l: usize, i: usize) -> f64 {
    let comp = scenario.competitors_of(l);
    let sum: f64 = comp
        .iter()
        .filter(|&&k| k != i)
        .map(|&k| profile.platforms[k].proposed_filters[&(l as PlayerId + 1)])
        .sum();
    sum / (comp.len() - 1) as f64
}

/// Mean lower-bound proposal excluding platform `i`'s.
fn peer_mean_bound(profile: &MessageProfile, scenario: &Scenario, i: usize) -> f64 {
    let sum: f64 = profile.government.proposed_lower_bound
        + profile
            .platforms
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, m)| m.proposed_filters[&GOVERNMENT])
            .sum::<f64>();
    sum / (scenario.player_count() - 1) as f64
}

fn tax_of(
    profile: &MessageProfile,
    scenario: &Scenario,
    prices: &Prices,
    filters: &[f64],
    quotas: &[f64],
    i: usize,
) -> f64 {
    let id = i as PlayerId + 1;
    let msg = &profile.platforms[i];
    let extended = scenario.variant() == Variant::Extended;
    let mut tax = -profile.government.proposed_price * quotas[i];
    for &l in scenario.competitors_of(i) {
        if l == i {
            continue;
        }
        let lid = l as PlayerId + 1;
        tax -= prices.subsidy[&(id, lid)] * filters[i];
        tax += prices.payment[&(id, lid)] * filters[l];
        // Consistency penalty on i's proposal for l's filter.
        let dev = msg.proposed_filters[&lid] - peer_mean(profile, scenario, l, i);
        tax += msg.proposed_prices[&lid] * dev * dev;
        if extended {
            if scenario.competitors_of(i).len() == 2 {
                let d = msg.proposed_prices[&id] - profile.platforms[l].proposed_prices[&id];
                tax += d * d;
            }
            if scenario.competitors_of(l).len() == 2 {
                let d = msg.proposed_prices[&lid] - profile.platforms[l].proposed_prices[&lid];
                tax += d * d;
            }
        }
    }
    let dev0 = msg.proposed_filters[&GOVERNMENT] - peer_mean_bound(profile, scenario, i);
    tax += msg.proposed_prices[&GOVERNMENT] * dev0 * dev0;
    tax
}

pub fn platform_tax(
    profile: &MessageProfile,
    scenario: &Scenario,
    i: usize,
) -> Result<f64, MechanismError> {
    let (filters, alpha0) = allocate_filters(profile, scenario);
    let (quotas, _) = min_trust_from(profile, scenario, alpha0)?;
    let prices = allocate_prices(profile, scenario)?;
    Ok(tax_of(profile, scenario, &prices, &filters, &quotas, i))
}

/// τ_0 = π_0 α_0 + (p̃_0 − π_0)².
pub fn government_tax(profile: &MessageProfile, scenario: &Scenario) -> Result<f64, MechanismError> {
    let (_, alpha0) = allocate_filters(profile, scenario);
    let prices = allocate_prices(profile, scenario)?;
    let dev = profile.government.proposed_price - prices.government;
    Ok(prices.government * alpha0 + dev * dev)
}

pub fn outcome(profile: &MessageProfile, scenario: &Scenario) -> Result<Outcome, MechanismError> {
    validate_profile(profile, scenario)?;
    let (filters, lower_bound) = allocate_filters(profile, scenario);
    let (min_trust, trust_clipped) = min_trust_from(profile, scenario, lower_bound)?;
    let prices = allocate_prices(profile, scenario)?;
    let taxes: Vec<f64> = (0..scenario.platform_count())
        .map(|i| tax_of(profile, scenario, &prices, &filters, &min_trust, i))
        .collect();
    let gov_dev = profile.government.proposed_price - prices.government;
    let government_tax = prices.government * lower_bound + gov_dev * gov_dev;
    let feasible = (0..scenario.platform_count())
        .map(|i| {
            let a = filters[i];
            if !(-1e-9..=1.0 + 1e-9).contains(&a) {
                return false;
            }
            let h = scenario
                .trust(i, a.clamp(0.0, 1.0))
                .expect("clamped filter is in range")
                .0;
            scenario.fractions()[i] * h >= min_trust[i] - 1e-9
        })
        .collect();
    Ok(Outcome {
        filters,
        lower_bound,
        min_trust,
        payment_prices: prices.payment,
        subsidy_prices: prices.subsidy,
        government_price: prices.government,
        taxes,
        government_tax,
        feasible,
        trust_clipped,
    })
}

/// u_i = v_i(α) − τ_i for platforms (errors if i's allocation is outside its
/// feasible set), u_0 = v_0(α_0) − τ_0 for the government.
pub fn utility(scenario: &Scenario, out: &Outcome, player: PlayerId) -> Result<f64, MechanismError> {
    if player == GOVERNMENT {
        let v = scenario.gov_valuation(out.lower_bound.clamp(0.0, 1.0))?.0;
        return Ok(v - out.government_tax);
    }
    let i = (player - 1) as usize;
    if !out.feasible[i] {
        return Err(MechanismError::InfeasibleAllocation { player });
    }
    let clamped: Vec<f64> = out.filters.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let v = scenario.valuation_value(i, &clamped)?;
    Ok(v - out.taxes[i])
}

/// Build a profile in which everyone proposes the same filter vector and
/// lower bound. `price(owner, proposer)` supplies p̃_owner^proposer (both
/// 0-based platform indices; `owner == proposer` is queried only for
/// two-member sets under the extended variant). `gov_price_proposal(i)`
/// supplies p̃_0^i.
pub fn consistent_profile(
    scenario: &Scenario,
    filters: &[f64],
    lower_bound: f64,
    claimed_trust: &[f64],
    price: impl Fn(usize, usize) -> f64,
    gov_price_proposal: impl Fn(usize) -> f64,
    gov_price: f64,
) -> MessageProfile {
    let extended = scenario.variant() == Variant::Extended;
    let platforms = (0..scenario.platform_count())
        .map(|i| {
            let comp = scenario.competitors_of(i);
            let own_price = extended && comp.len() == 2;
            let mut proposed_prices: BTreeMap<PlayerId, f64> = comp
                .iter()
                .filter(|&&l| l != i || own_price)
                .map(|&l| (l as PlayerId + 1, price(l, i)))
                .collect();
            proposed_prices.insert(GOVERNMENT, gov_price_proposal(i));
            let mut proposed_filters: BTreeMap<PlayerId, f64> = comp
                .iter()
                .map(|&l| (l as PlayerId + 1, filters[l]))
                .collect();
            proposed_filters.insert(GOVERNMENT, lower_bound);
            PlatformMessage {
                proposed_min_trust: claimed_trust[i],
                proposed_prices,
                proposed_filters,
            }
        })
        .collect();
    MessageProfile {
        government: GovernmentMessage {
            proposed_price: gov_price,
            proposed_lower_bound: lower_bound,
        },
        platforms,
    }
}
