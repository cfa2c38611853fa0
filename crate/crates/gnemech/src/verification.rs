//! One property checker per guarantee of the mechanism: budget balance,
//! feasibility, price consistency, strong implementation, individual
//! rationality, Pareto efficiency, and the extended-variant price symmetry.
//! The test suites and the CLI `verify` command are thin wrappers over this
//! module.

use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, EquilibriumReport};
use crate::mechanism::{MessageProfile, Outcome};
use crate::model::{ModelError, Scenario, Variant, GOVERNMENT};
use crate::planner::{self, CentralizedSolution, PlannerError};

/// Algebraic identities (tax sums, feasibility slacks).
pub const TOL_ALGEBRAIC: f64 = 1e-9;
/// Stationarity/consistency gaps at a converged equilibrium.
pub const TOL_CONSISTENCY: f64 = 1e-6;
/// Allocation distance against the grid-refined oracle.
pub const TOL_ORACLE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum VerificationError {
    /// The checker's precondition does not hold (e.g. an unverified report
    /// passed to the strong-implementation check).
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    BudgetBalance,
    Feasibility,
    PriceConsistency,
    StrongImplementation,
    IndividualRationality,
    Pareto,
    ExtendedPriceSymmetry,
}

impl Property {
    pub fn name(self) -> &'static str {
        match self {
            Property::BudgetBalance => "budget_balance",
            Property::Feasibility => "feasibility",
            Property::PriceConsistency => "price_consistency",
            Property::StrongImplementation => "strong_implementation",
            Property::IndividualRationality => "individual_rationality",
            Property::Pareto => "pareto",
            Property::ExtendedPriceSymmetry => "extended_price_symmetry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    /// The property's hypotheses do not apply to this scenario (e.g. strong
    /// implementation on non-concave families).
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: Property,
    pub residual: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    /// Labeled breakdown (per player or per named component).
    pub details: Vec<(String, f64)>,
}

impl PropertyReport {
    fn from_residual(
        property: Property,
        residual: f64,
        tolerance: f64,
        details: Vec<(String, f64)>,
    ) -> Self {
        let status = if residual <= tolerance {
            CheckStatus::Passed
        } else {
            CheckStatus::Failed
        };
        PropertyReport {
            property,
            residual,
            tolerance,
            status,
            details,
        }
    }

    fn not_applicable(property: Property, tolerance: f64) -> Self {
        PropertyReport {
            property,
            residual: 0.0,
            tolerance,
            status: CheckStatus::NotApplicable,
            details: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Failed
    }
}

/// |Σ_{i∈J} τ_i|: all taxes and subsidies cancel. A hard equality only at a
/// (claimed) equilibrium; on arbitrary profiles the penalty terms show up in
/// the residual, which is informative rather than alarming.
pub fn check_budget_balance(outcome: &Outcome) -> PropertyReport {
    let mut details: Vec<(String, f64)> = vec![("0".into(), outcome.government_tax)];
    for (i, &tax) in outcome.taxes.iter().enumerate() {
        details.push(((i + 1).to_string(), tax));
    }
    let total: f64 = outcome.government_tax + outcome.taxes.iter().sum::<f64>();
    PropertyReport::from_residual(Property::BudgetBalance, total.abs(), TOL_ALGEBRAIC, details)
}

/// Box membership, the trust constraint α_0 ≤ Σ n_i h_i(α_i), and the quota
/// caps η_i ≤ n_i h_i(α_i); the residual is the worst violation.
pub fn check_feasibility(
    scenario: &Scenario,
    outcome: &Outcome,
) -> Result<PropertyReport, VerificationError> {
    let fractions = scenario.fractions();
    let mut details = Vec::new();
    let box_violation = |x: f64| (x - 1.0).max(-x).max(0.0);
    let mut worst = box_violation(outcome.lower_bound);
    details.push(("0_box".into(), box_violation(outcome.lower_bound)));
    // Trust terms are evaluated at the clamped filters; out-of-box values
    // are already counted as box violations.
    let clamped: Vec<f64> = outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let trust_slack = outcome.lower_bound - scenario.aggregate_trust(&clamped)?;
    details.push(("trust".into(), trust_slack));
    worst = worst.max(trust_slack);
    for (i, &a) in outcome.filters.iter().enumerate() {
        let id = i + 1;
        details.push((format!("{id}_box"), box_violation(a)));
        worst = worst.max(box_violation(a));
        let quota_slack =
            outcome.min_trust[i] - fractions[i] * scenario.trust(i, a.clamp(0.0, 1.0))?.0;
        details.push((format!("{id}_quota"), quota_slack));
        worst = worst.max(quota_slack);
    }
    Ok(PropertyReport::from_residual(
        Property::Feasibility,
        worst,
        TOL_ALGEBRAIC,
        details,
    ))
}

/// Maximum inter-proposal gap σ_l^i vs π_i^l across all subsidized pairs.
/// Identically zero under the standard variant (the subsidy mirrors the
/// payment by construction); under the extended variant this is the
/// two-member-set price agreement.
fn subsidy_payment_gap(outcome: &Outcome) -> (f64, Vec<(String, f64)>) {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (&(recipient, counterparty), &sigma) in &outcome.subsidy_prices {
        let pi = outcome
            .payment_prices
            .get(&(counterparty, recipient))
            .copied()
            .unwrap_or(0.0);
        let gap = (sigma - pi).abs();
        details.push((format!("{recipient}<-{counterparty}"), gap));
        worst = worst.max(gap);
    }
    (worst, details)
}

/// Equilibrium price identities: the government's proposal matches its
/// allocated price; filter proposals agree wherever the corresponding price
/// proposal is positive; and (extended variant only) subsidy prices match
/// the mirrored payment prices.
pub fn check_price_consistency(
    scenario: &Scenario,
    profile: &MessageProfile,
    outcome: &Outcome,
) -> PropertyReport {
    let mut details = Vec::new();
    let gov_gap = (profile.government.proposed_price - outcome.government_price).abs();
    details.push(("government_price".into(), gov_gap));
    let mut worst = gov_gap;
    // Proposal agreement: ã_l^i against the peer mean ã_l^{-i}, counted only
    // where proposer i prices owner l above the consistency threshold.
    for (i, msg) in profile.platforms.iter().enumerate() {
        let id = i as u32 + 1;
        for (&owner, &price) in &msg.proposed_prices {
            if owner == GOVERNMENT || owner == id || price <= TOL_CONSISTENCY {
                continue;
            }
            let own = msg.proposed_filters[&owner];
            let (sum, count) = profile
                .platforms
                .iter()
                .enumerate()
                .filter(|(k, other)| *k != i && other.proposed_filters.contains_key(&owner))
                .fold((0.0, 0usize), |(s, c), (_, other)| {
                    (s + other.proposed_filters[&owner], c + 1)
                });
            if count == 0 {
                continue;
            }
            let gap = (own - sum / count as f64).abs();
            details.push((format!("{id}->{owner}"), gap));
            worst = worst.max(gap);
        }
    }
    if scenario.variant() == Variant::Extended {
        let (gap, mut sub) = subsidy_payment_gap(outcome);
        details.append(&mut sub);
        worst = worst.max(gap);
    }
    PropertyReport::from_residual(Property::PriceConsistency, worst, TOL_CONSISTENCY, details)
}

/// ‖α(m*) − a*‖∞ against an independently computed centralized solution,
/// plus the relative welfare gap. Only meaningful on concave families and
/// for verified equilibria.
pub fn check_strong_implementation(
    scenario: &Scenario,
    report: &EquilibriumReport,
    oracle: &CentralizedSolution,
) -> Result<PropertyReport, VerificationError> {
    match report.max_deviation_gain {
        Some(gain) if gain <= TOL_CONSISTENCY => {}
        Some(gain) => {
            return Err(VerificationError::Precondition(format!(
                "profile is not an equilibrium: deviation gain {gain:e}"
            )))
        }
        None => {
            return Err(VerificationError::Precondition(
                "report has no deviation-search result".into(),
            ))
        }
    }
    if !scenario.all_concave() {
        return Ok(PropertyReport::not_applicable(
            Property::StrongImplementation,
            TOL_ORACLE,
        ));
    }
    let mut actions = vec![report.outcome.lower_bound];
    actions.extend_from_slice(&report.outcome.filters);
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (j, (&got, &want)) in actions.iter().zip(&oracle.actions).enumerate() {
        let gap = (got - want).abs();
        details.push((j.to_string(), gap));
        worst = worst.max(gap);
    }
    let clamped: Vec<f64> = actions.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let welfare = planner::social_welfare(scenario, &clamped)?;
    let rel = (welfare - oracle.welfare).abs() / oracle.welfare.abs().max(1.0);
    details.push(("welfare_rel_gap".into(), rel));
    let mut out =
        PropertyReport::from_residual(Property::StrongImplementation, worst, TOL_ORACLE, details);
    if rel > TOL_CONSISTENCY {
        out.status = CheckStatus::Failed;
    }
    Ok(out)
}

/// −min_i (u_i(m*) − v_i(0, …, 0)): negative when every platform weakly
/// prefers participating to opting out.
pub fn check_individual_rationality(
    scenario: &Scenario,
    report: &EquilibriumReport,
) -> Result<PropertyReport, VerificationError> {
    let margins = equilibrium::individual_rationality_margin(scenario, report)?;
    let details: Vec<(String, f64)> = margins
        .iter()
        .enumerate()
        .map(|(i, &m)| ((i + 1).to_string(), m))
        .collect();
    let worst = -margins.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    Ok(PropertyReport::from_residual(
        Property::IndividualRationality,
        worst,
        TOL_ALGEBRAIC,
        details,
    ))
}

/// Sampled Pareto-dominance test: passes when no feasible perturbation among
/// `samples` seeded draws improves one player's valuation by more than the
/// improvement threshold without hurting anyone.
pub fn check_pareto(
    scenario: &Scenario,
    report: &EquilibriumReport,
    samples: usize,
    seed: u64,
) -> Result<PropertyReport, VerificationError> {
    let witness = equilibrium::pareto_check(scenario, &report.outcome, samples, seed)?;
    match witness {
        None => Ok(PropertyReport::from_residual(
            Property::Pareto,
            0.0,
            TOL_CONSISTENCY,
            Vec::new(),
        )),
        Some(actions) => {
            // Quantify the witness: the best single-player valuation gain.
            let base_bound = report.outcome.lower_bound.clamp(0.0, 1.0);
            let base_filters: Vec<f64> = report
                .outcome
                .filters
                .iter()
                .map(|a| a.clamp(0.0, 1.0))
                .collect();
            let mut best =
                scenario.gov_valuation(actions[0])?.0 - scenario.gov_valuation(base_bound)?.0;
            for i in 0..scenario.platform_count() {
                let delta = scenario.valuation_value(i, &actions[1..])?
                    - scenario.valuation_value(i, &base_filters)?;
                best = best.max(delta);
            }
            let details = actions
                .iter()
                .enumerate()
                .map(|(j, &a)| (format!("witness_{j}"), a))
                .collect();
            Ok(PropertyReport::from_residual(
                Property::Pareto,
                best,
                TOL_CONSISTENCY,
                details,
            ))
        }
    }
}

/// Extended-variant subsidy/payment symmetry on its own: σ_l^i = π_i^l for
/// every subsidized pair. Not applicable under the standard variant, where
/// the identity holds by definition.
pub fn check_extended_price_symmetry(scenario: &Scenario, outcome: &Outcome) -> PropertyReport {
    if scenario.variant() != Variant::Extended {
        return PropertyReport::not_applicable(Property::ExtendedPriceSymmetry, TOL_CONSISTENCY);
    }
    let (worst, details) = subsidy_payment_gap(outcome);
    PropertyReport::from_residual(
        Property::ExtendedPriceSymmetry,
        worst,
        TOL_CONSISTENCY,
        details,
    )
}

/// The full checker battery for one equilibrium report. The oracle enables
/// the strong-implementation comparison; without it (or without a deviation
/// search in the report) that check is skipped.
pub fn run_battery(
    scenario: &Scenario,
    report: &EquilibriumReport,
    oracle: Option<&CentralizedSolution>,
    samples: usize,
    seed: u64,
) -> Result<Vec<PropertyReport>, VerificationError> {
    let mut out = vec![
        check_budget_balance(&report.outcome),
        check_feasibility(scenario, &report.outcome)?,
        check_price_consistency(scenario, &report.profile, &report.outcome),
    ];
    let verified = report.max_deviation_gain.is_some_and(|g| g <= TOL_CONSISTENCY);
    if let (Some(oracle), true) = (oracle, verified) {
        out.push(check_strong_implementation(scenario, report, oracle)?);
    }
    out.push(check_individual_rationality(scenario, report)?);
    out.push(check_pareto(scenario, report, samples, seed)?);
    out.push(check_extended_price_symmetry(scenario, &report.outcome));
    Ok(out)
}
