//! Acceptance gate: one test per headline guarantee, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gnemech::equilibrium::{
    self, construct_gne, iterate_dynamics, pareto_check, verify_gne, zero_profile,
    DynamicsParams, Method,
};
use gnemech::fixtures::{self, central_diff};
use gnemech::mechanism;
use gnemech::model::{
    gen_random_scenario, validate_scenario, GovValuationFamily, GovValuationSpec, GovernmentSpec,
    PlatformSpec, RawScenario, Scenario, TrustFamily, TrustSpec, ValuationFamily, ValuationSpec,
    Variant,
};
use gnemech::planner::{brute_force_centralized, solve_centralized};

fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

/// tri-sym plus twenty generated concave three-platform scenarios.
fn concave_suite() -> Vec<Scenario> {
    let mut suite = vec![fixtures::tri_sym()];
    suite.extend((0..20).map(|seed| gen_random_scenario(seed, 3, Variant::Standard)));
    suite
}

fn constructed_report(scenario: &Scenario) -> gnemech::equilibrium::EquilibriumReport {
    let sol = solve_centralized(scenario, 1e-8).expect("solver converges");
    let profile = construct_gne(scenario, &sol).expect("construction succeeds");
    let mut report =
        equilibrium::report(scenario, profile, Method::Constructed, 0, 0.0).expect("outcome");
    let search = verify_gne(scenario, &report.profile, 200).expect("search runs");
    report.max_deviation_gain = Some(search.max_gain);
    report
}

#[test]
fn criterion_1_budget_balance() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let s = gen_random_scenario(seed, 3 + (seed % 3) as usize, Variant::Standard);
        let sol = solve_centralized(&s, 1e-8).expect("solver converges");
        let profile = construct_gne(&s, &sol).expect("construction succeeds");
        let out = mechanism::outcome(&profile, &s).expect("outcome");
        let residual = (out.government_tax + out.taxes.iter().sum::<f64>()).abs();
        worst = worst.max(residual);
    }
    verdict(
        "1-budget-balance",
        worst <= 1e-9,
        &format!("worst |Σ τ| = {worst:e} over 100 scenarios"),
    );
}

#[test]
fn criterion_2_strong_implementation() {
    let mut worst_coord: f64 = 0.0;
    let mut worst_welfare: f64 = 0.0;
    for s in concave_suite() {
        let report = constructed_report(&s);
        let grid = brute_force_centralized(&s, 0.01).expect("grid oracle");
        let sol = solve_centralized(&s, 1e-8).expect("solver");
        let mut actions = vec![report.outcome.lower_bound];
        actions.extend_from_slice(&report.outcome.filters);
        let coord = actions
            .iter()
            .zip(&grid.actions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let clamped: Vec<f64> = actions.iter().map(|a| a.clamp(0.0, 1.0)).collect();
        let welfare = gnemech::planner::social_welfare(&s, &clamped).expect("welfare");
        let rel = (welfare - sol.welfare).abs() / sol.welfare.abs().max(1.0);
        worst_coord = worst_coord.max(coord);
        worst_welfare = worst_welfare.max(rel);
    }
    verdict(
        "2-strong-implementation",
        worst_coord <= 1e-3 && worst_welfare <= 1e-6,
        &format!("worst ‖α − a_grid‖∞ = {worst_coord:e}, worst rel welfare gap = {worst_welfare:e}"),
    );
}

#[test]
fn criterion_3_equilibrium_validity() {
    let mut worst: f64 = f64::NEG_INFINITY;
    for s in concave_suite() {
        let sol = solve_centralized(&s, 1e-8).expect("solver");
        let profile = construct_gne(&s, &sol).expect("construction");
        let search = verify_gne(&s, &profile, 200).expect("search");
        worst = worst.max(search.max_gain);
    }
    verdict(
        "3-equilibrium-validity",
        worst <= 1e-6,
        &format!("worst deviation gain = {worst:e} over 21 scenarios"),
    );
}

#[test]
fn criterion_4_individual_rationality() {
    let mut worst: f64 = f64::INFINITY;
    for s in concave_suite() {
        let report = constructed_report(&s);
        assert!(report.max_deviation_gain.unwrap() <= 1e-6, "unverified profile");
        let margins =
            equilibrium::individual_rationality_margin(&s, &report).expect("margins");
        worst = margins.into_iter().fold(worst, f64::min);
    }
    verdict(
        "4-individual-rationality",
        worst >= -1e-9,
        &format!("worst participation margin = {worst:e}"),
    );
}

#[test]
fn criterion_5_feasibility() {
    let mut worst_box: f64 = 0.0;
    let mut worst_trust: f64 = f64::NEG_INFINITY;
    for s in concave_suite() {
        let report = constructed_report(&s);
        assert!(report.max_deviation_gain.unwrap() <= 1e-6, "unverified profile");
        let mut actions = vec![report.outcome.lower_bound];
        actions.extend_from_slice(&report.outcome.filters);
        for a in &actions {
            worst_box = worst_box.max((-a).max(a - 1.0));
        }
        let clamped: Vec<f64> = report.outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)).collect();
        let cap = s.aggregate_trust(&clamped).expect("trust");
        worst_trust = worst_trust.max(report.outcome.lower_bound - cap);
    }
    verdict(
        "5-feasibility",
        worst_box <= 1e-12 && worst_trust <= 1e-9,
        &format!("worst box violation = {worst_box:e}, worst trust slack = {worst_trust:e}"),
    );
}

#[test]
fn criterion_6_price_consistency_under_dynamics() {
    let s = fixtures::tri_sym();
    let report = iterate_dynamics(&s, zero_profile(&s), &DynamicsParams::default())
        .expect("dynamics run");
    let converged = report.message_residual <= 1e-8 && report.iterations <= 500;
    let prices = mechanism::allocate_prices(&report.profile, &s).expect("prices");
    let gov_gap = (report.profile.government.proposed_price - prices.government).abs();
    // Proposal agreement wherever the proposer prices the owner.
    let mut proposal_gap: f64 = 0.0;
    for (i, msg) in report.profile.platforms.iter().enumerate() {
        for (&owner, &price) in &msg.proposed_prices {
            if owner == 0 || owner as usize == i + 1 || price <= 1e-6 {
                continue;
            }
            let peers: Vec<f64> = report
                .profile
                .platforms
                .iter()
                .enumerate()
                .filter(|&(k, m)| k != i && m.proposed_filters.contains_key(&owner))
                .map(|(_, m)| m.proposed_filters[&owner])
                .collect();
            let peer_mean = peers.iter().sum::<f64>() / peers.len() as f64;
            proposal_gap = proposal_gap.max((msg.proposed_filters[&owner] - peer_mean).abs());
        }
    }
    verdict(
        "6-price-consistency",
        converged && gov_gap <= 1e-6 && proposal_gap <= 1e-6,
        &format!(
            "residual = {:e} after {} sweeps, |p̃_0 − π_0| = {gov_gap:e}, proposal gap = {proposal_gap:e}",
            report.message_residual, report.iterations
        ),
    );
}

fn two_platform_extended() -> Scenario {
    let pair: BTreeSet<u32> = [1, 2].into();
    let platforms = (1..=2u32)
        .map(|id| PlatformSpec {
            id,
            users: 100 + 40 * (id as u64 - 1),
            competitors: pair.clone(),
            valuation: ValuationSpec {
                family: ValuationFamily::LogLinearQuadratic,
                cross_weights: pair
                    .iter()
                    .filter(|&&l| l != id)
                    .map(|&l| (l, 1.2))
                    .collect(),
                own_linear_cost: 0.4,
                own_quadratic_cost: 0.2,
            },
            trust: TrustSpec {
                family: TrustFamily::Power,
                exponent: 0.9,
            },
        })
        .collect();
    validate_scenario(RawScenario {
        variant: Variant::Extended,
        platforms,
        government: GovernmentSpec {
            budget: 10.0,
            valuation: GovValuationSpec {
                family: GovValuationFamily::Log,
                weight: 1.5,
                rho: 1.0,
            },
        },
    })
    .expect("valid duopoly")
}

#[test]
fn criterion_7_extended_mechanism() {
    let s = two_platform_extended();
    let report = constructed_report(&s);
    let budget = (report.outcome.government_tax + report.outcome.taxes.iter().sum::<f64>()).abs();
    let clamped: Vec<f64> = report.outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let trust_slack = report.outcome.lower_bound - s.aggregate_trust(&clamped).expect("trust");
    let ir = equilibrium::individual_rationality_margin(&s, &report)
        .expect("margins")
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut sigma_gap: f64 = 0.0;
    for (&(recipient, counterparty), &sigma) in &report.outcome.subsidy_prices {
        let pi = report.outcome.payment_prices[&(counterparty, recipient)];
        sigma_gap = sigma_gap.max((sigma - pi).abs());
    }
    // With every competitor set at three or more members, the extended
    // price rules degenerate to the standard ones bit for bit.
    let cliques = fixtures::paired_cliques();
    let sol = solve_centralized(&cliques, 1e-8).expect("solver");
    let profile = construct_gne(&cliques, &sol).expect("construction");
    let standard = mechanism::outcome(&profile, &cliques).expect("standard outcome");
    let extended_scenario = cliques.with_variant(Variant::Extended).expect("variant");
    let extended = mechanism::outcome(&profile, &extended_scenario).expect("extended outcome");
    let identical = standard == extended;
    verdict(
        "7-extended-mechanism",
        budget <= 1e-9
            && trust_slack <= 1e-9
            && ir >= -1e-9
            && sigma_gap <= 1e-6
            && identical,
        &format!(
            "budget = {budget:e}, trust slack = {trust_slack:e}, IR margin = {ir:e}, |σ − π| = {sigma_gap:e}, variants identical = {identical}"
        ),
    );
}

#[test]
fn criterion_8_pareto_efficiency() {
    let s = fixtures::tri_sym().with_valuation_family(ValuationFamily::QuasiConcaveExp);
    // Best-response dynamics seeded from the constructed profile: from the
    // origin they can settle on asymmetric rest points that are not
    // equilibria of the induced game.
    let sol = solve_centralized(&s, 1e-8).expect("solver converges");
    let init = construct_gne(&s, &sol).expect("construction succeeds");
    let report =
        iterate_dynamics(&s, init, &DynamicsParams::default()).expect("dynamics run");
    let converged = report.message_residual <= 1e-6;
    let witness =
        pareto_check(&s, &report.outcome, 10_000, 20_260_823).expect("sampling runs");
    verdict(
        "8-pareto-efficiency",
        converged && witness.is_none(),
        &format!(
            "residual = {:e} after {} sweeps, witness found = {}",
            report.message_residual,
            report.iterations,
            witness.is_some()
        ),
    );
}

#[test]
fn criterion_9_oracle_agreement() {
    let mut worst_welfare: f64 = 0.0;
    let mut worst_coord: f64 = 0.0;
    let step = 0.01;
    for s in concave_suite() {
        let sol = solve_centralized(&s, 1e-8).expect("solver");
        let grid = brute_force_centralized(&s, step).expect("grid oracle");
        worst_welfare = worst_welfare.max((sol.welfare - grid.welfare).abs());
        let coord = sol
            .actions
            .iter()
            .zip(&grid.actions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst_coord = worst_coord.max(coord);
    }
    // Gradient oracles for every function family at random points.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_grad: f64 = 0.0;
    let quasi = fixtures::tri_sym().with_valuation_family(ValuationFamily::QuasiConcaveExp);
    let mut complement_raw = fixtures::tri_sym().raw();
    for p in &mut complement_raw.platforms {
        p.trust = TrustSpec {
            family: TrustFamily::ComplementPower,
            exponent: 2.5,
        };
    }
    let complement = validate_scenario(complement_raw).expect("valid");
    let concave = fixtures::tri_sym();
    for _ in 0..100 {
        let filters: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let x = rng.random_range(0.05..0.95);
        for s in [&concave, &quasi] {
            let (_, grad) = s.valuation(0, &filters).expect("valuation");
            for &(l, d) in &grad {
                let fd = central_diff(
                    |v| {
                        let mut pt = filters.clone();
                        pt[l] = v;
                        s.valuation_value(0, &pt).expect("value")
                    },
                    filters[l],
                );
                worst_grad = worst_grad.max((d - fd).abs() / fd.abs().max(1.0));
            }
        }
        for s in [&concave, &complement] {
            let (_, dh) = s.trust(0, x).expect("trust");
            let fd = central_diff(|v| s.trust(0, v).expect("trust").0, x);
            worst_grad = worst_grad.max((dh - fd).abs() / fd.abs().max(1.0));
        }
        let (_, dv) = concave.gov_valuation(x).expect("gov valuation");
        let fd = central_diff(|v| concave.gov_valuation(v).expect("gov").0, x);
        worst_grad = worst_grad.max((dv - fd).abs() / fd.abs().max(1.0));
    }
    verdict(
        "9-oracle-agreement",
        worst_welfare <= 1e-6 && worst_coord <= 2.0 * step && worst_grad <= 1e-6,
        &format!(
            "welfare gap = {worst_welfare:e}, coordinate gap = {worst_coord:e}, gradient gap = {worst_grad:e}"
        ),
    );
}
