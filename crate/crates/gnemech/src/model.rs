//! Scenario domain types: platforms, government, and the parametric
//! valuation/trust function families, with validation of the structural
//! assumptions every downstream solver relies on.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Player index. `0` is always the government; platforms are `1..=I`.
pub type PlayerId = u32;

pub const GOVERNMENT: PlayerId = 0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("platform {id}: competitor set has {got} members, {variant:?} requires at least {min}")]
    Cardinality {
        id: PlayerId,
        got: usize,
        min: usize,
        variant: Variant,
    },
    #[error("competition is not symmetric: platform {i} lists {k}, but {k} does not list {i}")]
    Asymmetry { i: PlayerId, k: PlayerId },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("filter value {0} outside [0, 1]")]
    Domain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Every competitor set has at least three members.
    Standard,
    /// Competitor sets of two are allowed; price allocation switches to the
    /// payment/subsidy split with indicator penalties.
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationFamily {
    /// v_i(a) = sum_l w_il * ln(1 + a_l) - c_i * a_i - q_i * a_i^2
    LogLinearQuadratic,
    /// exp of the log-linear-quadratic base, minus one. Quasi-concave but
    /// not concave; exercises the relaxed-assumption analysis.
    QuasiConcaveExp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuationSpec {
    pub family: ValuationFamily,
    /// Weight on each competitor's filter, keyed by competitor id.
    pub cross_weights: BTreeMap<PlayerId, f64>,
    pub own_linear_cost: f64,
    pub own_quadratic_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustFamily {
    /// h(a) = a^gamma with 0 < gamma <= 1.
    Power,
    /// h(a) = 1 - (1 - a)^kappa with kappa >= 1.
    ComplementPower,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrustSpec {
    pub family: TrustFamily,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GovValuationFamily {
    /// v_0(a_0) = w_0 * ln(1 + rho * a_0)
    Log,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GovValuationSpec {
    pub family: GovValuationFamily,
    pub weight: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GovernmentSpec {
    pub budget: f64,
    pub valuation: GovValuationSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub id: PlayerId,
    pub users: u64,
    /// Competitor ids, including the platform itself.
    pub competitors: BTreeSet<PlayerId>,
    pub valuation: ValuationSpec,
    pub trust: TrustSpec,
}

/// Raw scenario tree as read from disk; `validate_scenario` turns it into a
/// [`Scenario`] or explains why it cannot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawScenario {
    pub variant: Variant,
    pub platforms: Vec<PlatformSpec>,
    pub government: GovernmentSpec,
}

/// A validated game description. Platform ids are contiguous `1..=I`, so id
/// `i` lives at index `i - 1` in every per-platform vector.
#[derive(Debug, Clone)]
pub struct Scenario {
    variant: Variant,
    platforms: Vec<PlatformSpec>,
    government: GovernmentSpec,
    fractions: Vec<f64>,
    /// Competitor positions (0-based) per platform, sorted, including self.
    comp_idx: Vec<Vec<usize>>,
}

impl Scenario {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn platform_count(&self) -> usize {
        self.platforms.len()
    }

    /// |J| = platforms plus the government.
    pub fn player_count(&self) -> usize {
        self.platforms.len() + 1
    }

    pub fn platforms(&self) -> &[PlatformSpec] {
        &self.platforms
    }

    pub fn platform(&self, idx: usize) -> &PlatformSpec {
        &self.platforms[idx]
    }

    pub fn government(&self) -> &GovernmentSpec {
        &self.government
    }

    /// User fractions n_i, in platform order.
    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Competitor positions of platform `idx`, including itself.
    pub fn competitors_of(&self, idx: usize) -> &[usize] {
        &self.comp_idx[idx]
    }

    pub fn raw(&self) -> RawScenario {
        RawScenario {
            variant: self.variant,
            platforms: self.platforms.clone(),
            government: self.government.clone(),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Result<Scenario, ModelError> {
        let mut raw = self.raw();
        raw.variant = variant;
        validate_scenario(raw)
    }

    /// Swap the valuation family of every platform, keeping all parameters.
    pub fn with_valuation_family(&self, family: ValuationFamily) -> Scenario {
        let mut raw = self.raw();
        for p in &mut raw.platforms {
            p.valuation.family = family;
        }
        validate_scenario(raw).expect("family swap preserves invariants")
    }

    /// Aggregate average trust sum_i n_i * h_i(a_i).
    pub fn aggregate_trust(&self, filters: &[f64]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for idx in 0..self.platforms.len() {
            total += self.fractions[idx] * self.trust(idx, filters[idx])?.0;
        }
        Ok(total)
    }

    /// Valuation value and gradient of platform `idx` at the given full
    /// filter vector. The gradient is returned as `(competitor position,
    /// partial derivative)` pairs covering exactly C_i.
    pub fn valuation(
        &self,
        idx: usize,
        filters: &[f64],
    ) -> Result<(f64, Vec<(usize, f64)>), ModelError> {
        let spec = &self.platforms[idx].valuation;
        let mut base = 0.0;
        let mut grad = Vec::with_capacity(self.comp_idx[idx].len());
        for &k in &self.comp_idx[idx] {
            let a = check_unit(filters[k])?;
            if k == idx {
                base += -spec.own_linear_cost * a - spec.own_quadratic_cost * a * a;
                grad.push((k, -spec.own_linear_cost - 2.0 * spec.own_quadratic_cost * a));
            } else {
                let w = spec.cross_weights[&self.platforms[k].id];
                base += w * (1.0 + a).ln();
                grad.push((k, w / (1.0 + a)));
            }
        }
        match spec.family {
            ValuationFamily::LogLinearQuadratic => Ok((base, grad)),
            ValuationFamily::QuasiConcaveExp => {
                let e = base.exp();
                for g in &mut grad {
                    g.1 *= e;
                }
                Ok((e - 1.0, grad))
            }
        }
    }

    pub fn valuation_value(&self, idx: usize, filters: &[f64]) -> Result<f64, ModelError> {
        Ok(self.valuation(idx, filters)?.0)
    }

    /// Trust value and derivative of platform `idx` at filter `a`.
    pub fn trust(&self, idx: usize, a: f64) -> Result<(f64, f64), ModelError> {
        let spec = &self.platforms[idx].trust;
        let a = check_unit(a)?;
        match spec.family {
            TrustFamily::Power => {
                let g = spec.exponent;
                // a^(g-1) diverges at 0 for g < 1; evaluate the derivative a
                // hair inside the boundary so gradients stay finite.
                let a_d = a.max(1e-12);
                Ok((a.powf(g), g * a_d.powf(g - 1.0)))
            }
            TrustFamily::ComplementPower => {
                let k = spec.exponent;
                Ok((1.0 - (1.0 - a).powf(k), k * (1.0 - a).powf(k - 1.0)))
            }
        }
    }

    /// Government valuation value and derivative at lower bound `a0`.
    pub fn gov_valuation(&self, a0: f64) -> Result<(f64, f64), ModelError> {
        let a0 = check_unit(a0)?;
        let GovValuationSpec { weight, rho, .. } = self.government.valuation;
        Ok((
            weight * (1.0 + rho * a0).ln(),
            weight * rho / (1.0 + rho * a0),
        ))
    }

    /// True if the government strictly values a higher lower bound.
    pub fn gov_strictly_increasing(&self) -> bool {
        self.government.valuation.weight * self.government.valuation.rho > 0.0
    }

    /// True if every platform uses a concave valuation family.
    pub fn all_concave(&self) -> bool {
        self.platforms
            .iter()
            .all(|p| p.valuation.family == ValuationFamily::LogLinearQuadratic)
    }
}

fn check_unit(a: f64) -> Result<f64, ModelError> {
    const SLACK: f64 = 1e-9;
    if !(-SLACK..=1.0 + SLACK).contains(&a) {
        return Err(ModelError::Domain(a));
    }
    Ok(a.clamp(0.0, 1.0))
}

pub fn validate_scenario(raw: RawScenario) -> Result<Scenario, ModelError> {
    let RawScenario {
        variant,
        platforms,
        government,
    } = raw;
    if platforms.is_empty() {
        return Err(ModelError::Parameter("scenario has no platforms".into()));
    }
    let count = platforms.len() as PlayerId;
    for (pos, p) in platforms.iter().enumerate() {
        if p.id != pos as PlayerId + 1 {
            return Err(ModelError::Parameter(format!(
                "platform ids must be contiguous 1..=I; found {} at position {}",
                p.id, pos
            )));
        }
        if p.users == 0 {
            return Err(ModelError::Parameter(format!(
                "platform {}: users must be >= 1",
                p.id
            )));
        }
        let min = match variant {
            Variant::Standard => 3,
            Variant::Extended => 2,
        };
        if p.competitors.len() < min {
            return Err(ModelError::Cardinality {
                id: p.id,
                got: p.competitors.len(),
                min,
                variant,
            });
        }
        if !p.competitors.contains(&p.id) {
            return Err(ModelError::Parameter(format!(
                "platform {}: competitor set must contain the platform itself",
                p.id
            )));
        }
        for &k in &p.competitors {
            if k == 0 || k > count {
                return Err(ModelError::Parameter(format!(
                    "platform {}: competitor id {} out of range",
                    p.id, k
                )));
            }
        }
        // Valuation parameters.
        let v = &p.valuation;
        if v.own_linear_cost < 0.0 || v.own_quadratic_cost < 0.0 {
            return Err(ModelError::Parameter(format!(
                "platform {}: own-filter costs must be nonnegative",
                p.id
            )));
        }
        if v.own_linear_cost + v.own_quadratic_cost <= 0.0 {
            return Err(ModelError::Parameter(format!(
                "platform {}: c_i + q_i must be positive so the valuation decreases in the own filter",
                p.id
            )));
        }
        let expected: BTreeSet<PlayerId> =
            p.competitors.iter().copied().filter(|&k| k != p.id).collect();
        let actual: BTreeSet<PlayerId> = v.cross_weights.keys().copied().collect();
        if expected != actual {
            return Err(ModelError::Parameter(format!(
                "platform {}: cross_weights keys must be exactly the competitors other than itself",
                p.id
            )));
        }
        for (&l, &w) in &v.cross_weights {
            if w <= 0.0 {
                return Err(ModelError::Parameter(format!(
                    "platform {}: cross weight toward {} must be strictly positive",
                    p.id, l
                )));
            }
        }
        // Trust parameters.
        match p.trust.family {
            TrustFamily::Power => {
                if !(p.trust.exponent > 0.0 && p.trust.exponent <= 1.0) {
                    return Err(ModelError::Parameter(format!(
                        "platform {}: power trust exponent must be in (0, 1]",
                        p.id
                    )));
                }
            }
            TrustFamily::ComplementPower => {
                if p.trust.exponent < 1.0 {
                    return Err(ModelError::Parameter(format!(
                        "platform {}: complement_power trust exponent must be >= 1",
                        p.id
                    )));
                }
            }
        }
    }
    // Symmetric competition.
    for p in &platforms {
        for &k in &p.competitors {
            if k == p.id {
                continue;
            }
            let other = &platforms[(k - 1) as usize];
            if !other.competitors.contains(&p.id) {
                return Err(ModelError::Asymmetry { i: p.id, k });
            }
        }
    }
    if government.budget < 0.0 {
        return Err(ModelError::Parameter("government budget must be >= 0".into()));
    }
    if government.valuation.weight < 0.0 || government.valuation.rho <= 0.0 {
        return Err(ModelError::Parameter(
            "government valuation needs weight >= 0 and rho > 0".into(),
        ));
    }

    let total_users: f64 = platforms.iter().map(|p| p.users as f64).sum();
    let fractions = platforms.iter().map(|p| p.users as f64 / total_users).collect();
    let comp_idx = platforms
        .iter()
        .map(|p| p.competitors.iter().map(|&k| (k - 1) as usize).collect())
        .collect();
    Ok(Scenario {
        variant,
        platforms,
        government,
        fractions,
        comp_idx,
    })
}

/// User fractions n_i = N_i / sum N_l.
pub fn fractions(users: &[u64]) -> Vec<f64> {
    let total: f64 = users.iter().map(|&n| n as f64).sum();
    users.iter().map(|&n| n as f64 / total).collect()
}

/// Deterministic random scenario with a complete competitor graph.
///
/// Cross weights toward a given platform are drawn within a narrow band
/// around a shared base so the equilibrium price construction stays solvable
/// in nonnegative prices for up to five platforms.
pub fn gen_random_scenario(seed: u64, num_platforms: usize, variant: Variant) -> Scenario {
    let min = match variant {
        Variant::Standard => 3,
        Variant::Extended => 2,
    };
    assert!(
        num_platforms >= min,
        "{variant:?} scenarios need at least {min} platforms"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: BTreeSet<PlayerId> = (1..=num_platforms as PlayerId).collect();
    // Per-target weight bases, shared across proposing platforms.
    let bases: Vec<f64> = (0..num_platforms)
        .map(|_| rng.random_range(0.55..=1.8))
        .collect();
    let platforms = (1..=num_platforms as PlayerId)
        .map(|id| {
            let users = rng.random_range(50..=500u64);
            let cross_weights = all
                .iter()
                .filter(|&&l| l != id)
                .map(|&l| {
                    let w = bases[(l - 1) as usize] * rng.random_range(0.95..=1.05);
                    (l, w.clamp(0.5, 2.0))
                })
                .collect();
            PlatformSpec {
                id,
                users,
                competitors: all.clone(),
                valuation: ValuationSpec {
                    family: ValuationFamily::LogLinearQuadratic,
                    cross_weights,
                    own_linear_cost: rng.random_range(0.1..=1.0),
                    own_quadratic_cost: rng.random_range(0.0..=0.5),
                },
                trust: TrustSpec {
                    family: TrustFamily::Power,
                    exponent: rng.random_range(0.5..=1.0),
                },
            }
        })
        .collect();
    let government = GovernmentSpec {
        budget: rng.random_range(5.0..=50.0),
        valuation: GovValuationSpec {
            family: GovValuationFamily::Log,
            weight: rng.random_range(0.5..=4.0),
            rho: rng.random_range(0.5..=2.0),
        },
    };
    validate_scenario(RawScenario {
        variant,
        platforms,
        government,
    })
    .expect("generated scenario satisfies the invariants by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tri_sym() -> Scenario {
        crate::fixtures::tri_sym()
    }

    #[test]
    fn accepts_complete_three_platform_scenario() {
        let s = tri_sym();
        assert_eq!(s.platform_count(), 3);
        assert_eq!(s.player_count(), 4);
    }

    #[test]
    fn rejects_small_competitor_set_in_standard() {
        let mut raw = tri_sym().raw();
        raw.platforms[0].competitors = [1, 2].into_iter().collect();
        raw.platforms[0].valuation.cross_weights = [(2, 1.0)].into_iter().collect();
        // Break symmetry consistently so only cardinality trips.
        match validate_scenario(raw) {
            Err(ModelError::Cardinality { id: 1, got: 2, min: 3, .. }) => {}
            other => panic!("expected CardinalityError, got {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_cross_weight() {
        let mut raw = tri_sym().raw();
        *raw.platforms[0].valuation.cross_weights.get_mut(&2).unwrap() = 0.0;
        assert!(matches!(validate_scenario(raw), Err(ModelError::Parameter(_))));
    }

    #[test]
    fn rejects_asymmetric_competition() {
        let raw = crate::fixtures::asymmetric_raw();
        assert!(matches!(validate_scenario(raw), Err(ModelError::Asymmetry { .. })));
    }

    #[test]
    fn fractions_examples() {
        assert_eq!(fractions(&[100, 100, 100]), vec![1.0 / 3.0; 3]);
        assert_eq!(fractions(&[300, 100, 100]), vec![0.6, 0.2, 0.2]);
        assert_eq!(fractions(&[1]), vec![1.0]);
    }

    #[test]
    fn fractions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let users: Vec<u64> = (0..rng.random_range(1..=8))
                .map(|_| rng.random_range(1..=10_000))
                .collect();
            let sum: f64 = fractions(&users).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn valuation_at_zero() {
        let s = tri_sym();
        let (v, grad) = s.valuation(0, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        let own = grad.iter().find(|g| g.0 == 0).unwrap().1;
        assert_eq!(own, -0.5);
    }

    #[test]
    fn valuation_midpoint_value() {
        let s = tri_sym();
        let v = s.valuation_value(0, &[0.5, 0.5, 0.5]).unwrap();
        let expected = 2.0 * 1.5f64.ln() - 0.3125;
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn valuation_rejects_out_of_range_filter() {
        let s = tri_sym();
        assert!(matches!(
            s.valuation(0, &[0.5, 1.2, 0.5]),
            Err(ModelError::Domain(_))
        ));
    }

    #[test]
    fn trust_examples() {
        let s = tri_sym(); // gamma = 1
        assert_eq!(s.trust(0, 0.7).unwrap().0, 0.7);

        let mut raw = s.raw();
        raw.platforms[0].trust.exponent = 0.5;
        let s = validate_scenario(raw).unwrap();
        assert!((s.trust(0, 0.25).unwrap().0 - 0.5).abs() < 1e-15);

        let mut raw = s.raw();
        raw.platforms[0].trust = TrustSpec {
            family: TrustFamily::ComplementPower,
            exponent: 2.0,
        };
        let s = validate_scenario(raw).unwrap();
        assert_eq!(s.trust(0, 0.0).unwrap().0, 0.0);
        assert_eq!(s.trust(0, 1.0).unwrap().0, 1.0);
    }

    #[test]
    fn generator_is_deterministic_and_seed_sensitive() {
        let a = gen_random_scenario(1, 3, Variant::Standard);
        let b = gen_random_scenario(1, 3, Variant::Standard);
        assert_eq!(
            serde_json::to_string(&a.raw()).unwrap(),
            serde_json::to_string(&b.raw()).unwrap()
        );
        let c = gen_random_scenario(2, 3, Variant::Standard);
        assert_ne!(
            serde_json::to_string(&a.raw()).unwrap(),
            serde_json::to_string(&c.raw()).unwrap()
        );
    }

    #[test]
    fn generated_scenarios_validate() {
        for seed in [7, 8, 9] {
            for n in [3, 4, 5] {
                let s = gen_random_scenario(seed, n, Variant::Standard);
                validate_scenario(s.raw()).unwrap();
            }
        }
        validate_scenario(gen_random_scenario(7, 2, Variant::Extended).raw()).unwrap();
    }

    #[test]
    fn monotonicity_at_sampled_interior_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let s = gen_random_scenario(seed, 4, Variant::Standard);
            for _ in 0..20 {
                let a: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
                for i in 0..4 {
                    let (_, grad) = s.valuation(i, &a).unwrap();
                    for (k, g) in grad {
                        if k == i {
                            assert!(g <= 0.0, "own-filter derivative must not be positive");
                        } else {
                            assert!(g > 0.0, "cross-filter derivative must be positive");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn midpoint_concavity_of_concave_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = gen_random_scenario(21, 3, Variant::Standard);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            for i in 0..3 {
                let fx = s.valuation_value(i, &x).unwrap();
                let fy = s.valuation_value(i, &y).unwrap();
                let fm = s.valuation_value(i, &mid).unwrap();
                assert!(fm >= 0.5 * (fx + fy) - 1e-12);
            }
            let (tx, ty) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            for i in 0..3 {
                let fx = s.trust(i, tx).unwrap().0;
                let fy = s.trust(i, ty).unwrap().0;
                let fm = s.trust(i, 0.5 * (tx + ty)).unwrap().0;
                assert!(fm >= 0.5 * (fx + fy) - 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..3 {
            let s = gen_random_scenario(seed, 3, Variant::Standard);
            let quasi = s.with_valuation_family(ValuationFamily::QuasiConcaveExp);
            for scen in [&s, &quasi] {
                for _ in 0..30 {
                    let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
                    for i in 0..3 {
                        let (_, grad) = scen.valuation(i, &a).unwrap();
                        for (k, g) in grad {
                            let fd = crate::fixtures::central_diff(|x| {
                                let mut b = a.clone();
                                b[k] = x;
                                scen.valuation_value(i, &b).unwrap()
                            }, a[k]);
                            let denom = g.abs().max(1.0);
                            assert!(
                                (g - fd).abs() / denom < 1e-6,
                                "valuation gradient mismatch: {g} vs {fd}"
                            );
                        }
                    }
                }
            }
            for _ in 0..30 {
                let a = rng.random_range(0.05..0.95);
                for i in 0..3 {
                    let (_, d) = s.trust(i, a).unwrap();
                    let fd = crate::fixtures::central_diff(|x| s.trust(i, x).unwrap().0, a);
                    assert!((d - fd).abs() / d.abs().max(1.0) < 1e-6);
                }
                let (_, d0) = s.gov_valuation(a).unwrap();
                let fd = crate::fixtures::central_diff(|x| s.gov_valuation(x).unwrap().0, a);
                assert!((d0 - fd).abs() / d0.abs().max(1.0) < 1e-6);
            }
        }
    }
}
