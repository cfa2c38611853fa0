//! Hand-checkable scenarios used by the test suite and the CLI's built-in
//! scenario names.

use std::collections::BTreeSet;

use crate::model::{
    validate_scenario, GovValuationFamily, GovValuationSpec, GovernmentSpec, PlatformSpec,
    RawScenario, Scenario, TrustFamily, TrustSpec, ValuationFamily, ValuationSpec, Variant,
};

/// Three identical platforms on a complete competition graph:
/// w = 1 toward both rivals, c = 1/2, q = 1/4, linear trust, equal users,
/// v_0(a_0) = 2 ln(1 + a_0), budget 10. The welfare optimum sits at the
/// all-ones corner and every quantity can be worked out by hand.
pub fn tri_sym() -> Scenario {
    symmetric_complete(3, 1.0, 0.5, 0.25, 2.0, 1.0, 10.0)
}

/// A symmetric complete-graph scenario with `n` platforms.
pub fn symmetric_complete(
    n: usize,
    cross_weight: f64,
    linear_cost: f64,
    quadratic_cost: f64,
    gov_weight: f64,
    gov_rho: f64,
    budget: f64,
) -> Scenario {
    let all: BTreeSet<u32> = (1..=n as u32).collect();
    let platforms = (1..=n as u32)
        .map(|id| PlatformSpec {
            id,
            users: 100,
            competitors: all.clone(),
            valuation: ValuationSpec {
                family: ValuationFamily::LogLinearQuadratic,
                cross_weights: all
                    .iter()
                    .filter(|&&l| l != id)
                    .map(|&l| (l, cross_weight))
                    .collect(),
                own_linear_cost: linear_cost,
                own_quadratic_cost: quadratic_cost,
            },
            trust: TrustSpec {
                family: TrustFamily::Power,
                exponent: 1.0,
            },
        })
        .collect();
    validate_scenario(RawScenario {
        variant: Variant::Standard,
        platforms,
        government: GovernmentSpec {
            budget,
            valuation: GovValuationSpec {
                family: GovValuationFamily::Log,
                weight: gov_weight,
                rho: gov_rho,
            },
        },
    })
    .expect("symmetric fixture is valid")
}

/// Two three-platform cliques {1,2,3} and {4,5,6}: an extended-variant case
/// where every competitor set has exactly three members, and a base for
/// two-member sets after trimming.
pub fn paired_cliques() -> Scenario {
    let cliques: [BTreeSet<u32>; 2] = [[1, 2, 3].into(), [4, 5, 6].into()];
    let platforms = (1..=6u32)
        .map(|id| {
            let clique = &cliques[if id <= 3 { 0 } else { 1 }];
            PlatformSpec {
                id,
                users: 100 + 10 * id as u64,
                competitors: clique.clone(),
                valuation: ValuationSpec {
                    family: ValuationFamily::LogLinearQuadratic,
                    cross_weights: clique
                        .iter()
                        .filter(|&&l| l != id)
                        .map(|&l| (l, 0.9))
                        .collect(),
                    own_linear_cost: 0.4,
                    own_quadratic_cost: 0.2,
                },
                trust: TrustSpec {
                    family: TrustFamily::Power,
                    exponent: 0.8,
                },
            }
        })
        .collect();
    validate_scenario(RawScenario {
        variant: Variant::Standard,
        platforms,
        government: GovernmentSpec {
            budget: 20.0,
            valuation: GovValuationSpec {
                family: GovValuationFamily::Log,
                weight: 1.5,
                rho: 1.0,
            },
        },
    })
    .expect("paired cliques fixture is valid")
}

/// Two two-platform duopolies {1,2} and {3,4}: only valid under the extended
/// variant.
pub fn duopoly_pair() -> Scenario {
    let pairs: [BTreeSet<u32>; 2] = [[1, 2].into(), [3, 4].into()];
    let platforms = (1..=4u32)
        .map(|id| {
            let pair = &pairs[if id <= 2 { 0 } else { 1 }];
            PlatformSpec {
                id,
                users: 80 + 20 * id as u64,
                competitors: pair.clone(),
                valuation: ValuationSpec {
                    family: ValuationFamily::LogLinearQuadratic,
                    cross_weights: pair
                        .iter()
                        .filter(|&&l| l != id)
                        .map(|&l| (l, 1.1))
                        .collect(),
                    own_linear_cost: 0.35,
                    own_quadratic_cost: 0.15,
                },
                trust: TrustSpec {
                    family: TrustFamily::Power,
                    exponent: 1.0,
                },
            }
        })
        .collect();
    validate_scenario(RawScenario {
        variant: Variant::Extended,
        platforms,
        government: GovernmentSpec {
            budget: 15.0,
            valuation: GovValuationSpec {
                family: GovValuationFamily::Log,
                weight: 1.2,
                rho: 1.5,
            },
        },
    })
    .expect("duopoly fixture is valid")
}

/// Look up a named built-in scenario.
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "tri-sym" => Some(tri_sym()),
        "paired-cliques" => Some(paired_cliques()),
        "duopoly-pair" => Some(duopoly_pair()),
        _ => None,
    }
}

/// tri-sym with negligible cross benefits and an indifferent government:
/// the welfare optimum is the origin.
pub fn near_zero_benefit() -> Scenario {
    let mut raw = tri_sym().raw();
    for p in &mut raw.platforms {
        for w in p.valuation.cross_weights.values_mut() {
            *w = 1e-9;
        }
    }
    raw.government.valuation.weight = 0.0;
    validate_scenario(raw).expect("still valid")
}

/// A deliberately broken scenario: platform 1 lists 2 as a competitor but
/// not vice versa.
pub fn asymmetric_raw() -> RawScenario {
    let mut raw = symmetric_complete(4, 1.0, 0.5, 0.25, 2.0, 1.0, 10.0).raw();
    // Platform 2 drops platform 1 from its set.
    raw.platforms[1].competitors = [2, 3, 4].into_iter().collect();
    raw.platforms[1].valuation.cross_weights = [(3, 1.0), (4, 1.0)].into_iter().collect();
    raw
}

/// Five-point central difference of `f` at `x` with a boundary-safe step.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5_f64.min(x.min(1.0 - x).abs() / 2.0).max(1e-8);
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}
