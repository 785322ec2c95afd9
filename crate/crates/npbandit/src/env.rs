//! Rewards, policies, policy sets, and the noisy query oracle.
//!
//! Everything here works on coefficient vectors in the eigenbases fixed by a
//! pair of [`Spectrum`]s and a [`LinearMap`] between them. A reward lives in
//! the reward space, a policy in the policy space, and the only way data
//! leaves the environment is through [`Oracle::query`], which returns
//! `F(pi, r*) + noise` for a caller-chosen policy.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::{LinearMap, Spectrum};

/// Coefficients of a reward function in the reward-space eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    coefficients: DVector<f64>,
}

impl RewardFunction {
    pub fn new(coefficients: DVector<f64>) -> Self {
        Self { coefficients }
    }

    pub fn from_vec(coefficients: Vec<f64>) -> Self {
        Self::new(DVector::from_vec(coefficients))
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Norm in the reward space whose metric is given by `spectrum`.
    pub fn norm(&self, spectrum: &Spectrum) -> f64 {
        spectrum.norm(&self.coefficients)
    }
}

/// Coefficients of a policy in the policy-space eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    coefficients: DVector<f64>,
}

impl Policy {
    pub fn new(coefficients: DVector<f64>) -> Self {
        Self { coefficients }
    }

    pub fn from_vec(coefficients: Vec<f64>) -> Self {
        Self::new(DVector::from_vec(coefficients))
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Norm in the policy space whose metric is given by `spectrum`.
    pub fn norm(&self, spectrum: &Spectrum) -> f64 {
        spectrum.norm(&self.coefficients)
    }
}

#[derive(Debug, Clone)]
enum SetKind {
    UnitBall,
    Finite {
        candidates: Vec<Policy>,
        spectrum: Spectrum,
    },
}

/// The comparator class for policy optimization: either the full unit ball of
/// the policy space or an explicit finite list of candidates inside it.
#[derive(Debug, Clone)]
pub struct PolicySet {
    kind: SetKind,
    collinearity_constant: Option<f64>,
}

impl PolicySet {
    /// The unit ball of the policy space.
    pub fn unit_ball() -> Self {
        Self {
            kind: SetKind::UnitBall,
            collinearity_constant: None,
        }
    }

    /// A finite candidate set. Every candidate must lie in the unit ball of
    /// `spectrum` up to a 1e-10 slack and have matching dimension.
    pub fn finite(candidates: Vec<Policy>, spectrum: Spectrum) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("finite policy set must be non-empty"));
        }
        for (i, pi) in candidates.iter().enumerate() {
            if pi.dim() != spectrum.dim() {
                return Err(Error::invalid(format!(
                    "candidate {i} has dimension {} but the policy spectrum has {}",
                    pi.dim(),
                    spectrum.dim()
                )));
            }
            let norm = pi.norm(&spectrum);
            if !norm.is_finite() || norm > 1.0 + 1e-10 {
                return Err(Error::invalid(format!(
                    "candidate {i} has policy norm {norm}, outside the unit ball"
                )));
            }
        }
        Ok(Self {
            kind: SetKind::Finite {
                candidates,
                spectrum,
            },
            collinearity_constant: None,
        })
    }

    /// Sets the collinearity constant used when matching designed query
    /// directions into this set. Must lie in (0, 1].
    pub fn with_collinearity_constant(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!(
                "collinearity constant must lie in (0, 1], got {c}"
            )));
        }
        self.collinearity_constant = Some(c);
        Ok(self)
    }

    pub fn collinearity_constant(&self) -> Option<f64> {
        self.collinearity_constant
    }

    pub fn is_unit_ball(&self) -> bool {
        matches!(self.kind, SetKind::UnitBall)
    }

    /// Candidate policies, or `None` for the unit ball.
    pub fn candidates(&self) -> Option<&[Policy]> {
        match &self.kind {
            SetKind::UnitBall => None,
            SetKind::Finite { candidates, .. } => Some(candidates),
        }
    }

    /// The policy spectrum the candidates were validated against, or `None`
    /// for the unit ball.
    pub fn spectrum(&self) -> Option<&Spectrum> {
        match &self.kind {
            SetKind::UnitBall => None,
            SetKind::Finite { spectrum, .. } => Some(spectrum),
        }
    }

    pub fn len(&self) -> Option<usize> {
        self.candidates().map(<[Policy]>::len)
    }
}

/// Evaluation functional `F(pi, r) = r^t S_r M pi`, the reward-space inner
/// product between `r` and `M pi`.
pub fn evaluate(policy: &Policy, reward: &RewardFunction, map: &LinearMap) -> Result<f64> {
    if policy.dim() != map.d_pi() {
        return Err(Error::invalid(format!(
            "policy has dimension {} but the map expects {}",
            policy.dim(),
            map.d_pi()
        )));
    }
    if reward.dim() != map.d_r() {
        return Err(Error::invalid(format!(
            "reward has dimension {} but the map expects {}",
            reward.dim(),
            map.d_r()
        )));
    }
    let image = map.apply(policy.coefficients());
    Ok(map.codomain().inner(reward.coefficients(), &image))
}

/// Noisy evaluation oracle around a fixed ground-truth reward.
///
/// Noise draws come from a ChaCha12 stream seeded with `seed`, so a given
/// (seed, query sequence) pair always reproduces the same observations. With
/// `tau_sq == 0` the oracle is deterministic and consumes no randomness.
#[derive(Debug, Clone)]
pub struct Oracle {
    reward: RewardFunction,
    map: LinearMap,
    tau_sq: f64,
    seed: u64,
    rng: ChaCha12Rng,
    noise: Option<Normal<f64>>,
    queries_issued: usize,
}

impl Oracle {
    /// Builds an oracle. The ground-truth reward must have unit norm in the
    /// reward space up to 1e-6; the framework normalizes all instances this
    /// way so that risk values are comparable across configurations.
    pub fn new(reward: RewardFunction, map: LinearMap, tau_sq: f64, seed: u64) -> Result<Self> {
        if reward.dim() != map.d_r() {
            return Err(Error::invalid(format!(
                "reward has dimension {} but the map expects {}",
                reward.dim(),
                map.d_r()
            )));
        }
        if !(tau_sq >= 0.0 && tau_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be finite and non-negative, got {tau_sq}"
            )));
        }
        let norm = reward.norm(map.codomain());
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "ground-truth reward must have unit norm, got {norm}"
            )));
        }
        let noise = if tau_sq > 0.0 {
            Some(Normal::new(0.0, tau_sq.sqrt()).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            reward,
            map,
            tau_sq,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
            noise,
            queries_issued: 0,
        })
    }

    pub fn reward(&self) -> &RewardFunction {
        &self.reward
    }

    pub fn map(&self) -> &LinearMap {
        &self.map
    }

    pub fn tau_sq(&self) -> f64 {
        self.tau_sq
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn queries_issued(&self) -> usize {
        self.queries_issued
    }

    /// Noiseless value of the ground truth at `policy`.
    pub fn value(&self, policy: &Policy) -> Result<f64> {
        evaluate(policy, &self.reward, &self.map)
    }

    /// One noisy observation `F(pi, r*) + eps`, `eps ~ N(0, tau_sq)`.
    pub fn query(&mut self, policy: &Policy) -> Result<f64> {
        let mean = self.value(policy)?;
        self.queries_issued += 1;
        match &self.noise {
            Some(noise) => Ok(mean + noise.sample(&mut self.rng)),
            None => Ok(mean),
        }
    }
}

/// Noisy evaluation of `policy` through `oracle`.
pub fn oracle_query(oracle: &mut Oracle, policy: &Policy) -> Result<f64> {
    oracle.query(policy)
}

/// Exact maximizer of `F(., reward)` over `set`.
///
/// On the unit ball the maximizer is the normalized adjoint image
/// `M* r / ||M* r||_pi`; on a finite set it is an exhaustive argmax with ties
/// broken toward the lowest index.
pub fn optimal_policy(reward: &RewardFunction, set: &PolicySet, map: &LinearMap) -> Result<Policy> {
    if reward.dim() != map.d_r() {
        return Err(Error::invalid(format!(
            "reward has dimension {} but the map expects {}",
            reward.dim(),
            map.d_r()
        )));
    }
    match set.candidates() {
        None => {
            let v = map.adjoint_apply(reward.coefficients());
            let norm = map.domain().norm(&v);
            if !norm.is_finite() {
                return Err(Error::numerical(
                    "adjoint image of the reward has non-finite policy norm",
                ));
            }
            if norm < 1e-150 {
                return Err(Error::DegenerateInstance(
                    "reward is orthogonal to the range of the map; every unit-ball policy is optimal"
                        .into(),
                ));
            }
            Ok(Policy::new(v / norm))
        }
        Some(candidates) => {
            let mut best_idx = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (i, pi) in candidates.iter().enumerate() {
                let val = evaluate(pi, reward, map)?;
                if val > best_val {
                    best_val = val;
                    best_idx = i;
                }
            }
            Ok(candidates[best_idx].clone())
        }
    }
}

/// Excess risk `Delta = F(pi*, r) - F(candidate, r)` of a candidate policy
/// against the optimum over `set`.
///
/// Tiny negative values in `[-1e-10, 0)` are rounded-off zeros and clamped.
pub fn excess_risk(
    candidate: &Policy,
    reward: &RewardFunction,
    set: &PolicySet,
    map: &LinearMap,
) -> Result<f64> {
    if set.is_unit_ball() {
        let norm = map.domain().norm(candidate.coefficients());
        if norm > 1.0 + 1e-8 {
            return Err(Error::invalid(format!(
                "candidate has policy norm {norm}, outside the unit ball"
            )));
        }
    }
    let star = optimal_policy(reward, set, map)?;
    let delta = evaluate(&star, reward, map)? - evaluate(candidate, reward, map)?;
    if (-1e-10..0.0).contains(&delta) {
        Ok(0.0)
    } else {
        Ok(delta)
    }
}

/// Draws a reward on the unit sphere of the reward space with the
/// direction weighted by the spectrum: whitened coordinate `j` gets
/// variance `mu_j` before normalization, so fast-decaying spectra put most
/// of the mass in the leading coordinates. An isotropic direction would
/// instead spread mass evenly and make the excess risk of any truncated
/// estimate nearly flat in the budget once `d` is large.
pub fn sample_reward(spectrum: &Spectrum, seed: u64) -> RewardFunction {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = spectrum.dim();
    loop {
        let eps = DVector::from_fn(d, |j, _| {
            spectrum.mu(j).sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let norm = eps.norm();
        if norm > 1e-150 {
            return RewardFunction::new(DVector::from_fn(d, |j, _| {
                spectrum.mu(j).sqrt() * eps[j] / norm
            }));
        }
    }
}

/// Draws a policy uniformly on the unit sphere of the policy space from an
/// existing generator. Used by randomized baselines and tests.
pub fn sample_policy_on_sphere(spectrum: &Spectrum, rng: &mut impl Rng) -> Policy {
    Policy::new(sphere_point(spectrum, rng))
}

fn sphere_point(spectrum: &Spectrum, rng: &mut impl Rng) -> DVector<f64> {
    let d = spectrum.dim();
    loop {
        let w = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = w.norm();
        if norm > 1e-12 {
            let scaled =
                DVector::from_fn(d, |j, _| spectrum.mu(j).sqrt() * w[j] / norm);
            return scaled;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_power_law_spectrum;
    use approx::assert_relative_eq;

    fn toy_map() -> LinearMap {
        // d = 2, mu_pi = mu_r = (1, 1/2), M = diag(1, 1/2).
        let pi = build_power_law_spectrum(1.0, 2).unwrap();
        let r = build_power_law_spectrum(1.0, 2).unwrap();
        LinearMap::diagonal(DVector::from_vec(vec![1.0, 0.5]), pi, r).unwrap()
    }

    #[test]
    fn evaluate_weights_by_inverse_eigenvalues() {
        let map = toy_map();
        // r = (0, 1), pi = (0, 1): F = (1 * 0.5) / (1/2) = 1.
        let r = RewardFunction::from_vec(vec![0.0, 1.0]);
        let pi = Policy::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!(evaluate(&pi, &r, &map).unwrap(), 1.0, epsilon = 1e-15);
        // Cross terms vanish: r = (1, 0) against the same policy.
        let r2 = RewardFunction::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(evaluate(&pi, &r2, &map).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 0.0]);
        let pi = Policy::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(evaluate(&pi, &r, &map).is_err());
    }

    #[test]
    fn evaluate_is_bounded_by_norm_product_times_top_singular_value() {
        let spec = build_power_law_spectrum(1.5, 6).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let cap = crate::spectral::boundedness_value(&map).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r = sample_policy_on_sphere(&spec, &mut rng);
            let pi = sample_policy_on_sphere(&spec, &mut rng);
            let r = RewardFunction::new(r.coefficients().clone());
            let f = evaluate(&pi, &r, &map).unwrap();
            assert!(f.abs() <= cap + 1e-10, "|F| = {} exceeds {}", f.abs(), cap);
        }
    }

    #[test]
    fn alignment_gap_is_controlled_by_squared_distance() {
        // For nonzero x, y: <x, x/|x| - y/|y|> <= |x - y|^2 / (2 |y|),
        // everything in the H_pi inner product. This is the pivot between
        // gradient error and excess risk, so it gets a dense random sweep.
        let spec = build_power_law_spectrum(1.25, 12).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..1000 {
            let draw = |rng: &mut ChaCha12Rng| {
                DVector::from_iterator(12, (0..12).map(|_| normal.sample(rng)))
            };
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            let (nx, ny) = (spec.norm(&x), spec.norm(&y));
            if nx < 1e-12 || ny < 1e-12 {
                continue;
            }
            let lhs = spec.inner(&x, &(&x / nx - &y / ny));
            let rhs = spec.norm(&(&x - &y)).powi(2) / (2.0 * ny);
            assert!(lhs <= rhs + 1e-10, "lhs = {lhs}, rhs = {rhs}");
        }
    }

    #[test]
    fn unit_ball_optimum_is_normalized_adjoint_image() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 1.0]);
        let star = optimal_policy(&r, &PolicySet::unit_ball(), &map).unwrap();
        assert_relative_eq!(star.norm(map.domain()), 1.0, epsilon = 1e-12);
        // The optimum dominates random unit-ball policies.
        let best = evaluate(&star, &r, &map).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            let pi = sample_policy_on_sphere(map.domain(), &mut rng);
            assert!(evaluate(&pi, &r, &map).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn degenerate_reward_direction_is_reported() {
        // M kills the second coordinate; a reward supported there has zero
        // adjoint image.
        let pi = build_power_law_spectrum(1.0, 2).unwrap();
        let r_spec = build_power_law_spectrum(1.0, 2).unwrap();
        let map = LinearMap::diagonal(DVector::from_vec(vec![1.0, 0.0]), pi, r_spec).unwrap();
        let r = RewardFunction::from_vec(vec![0.0, 1.0]);
        let err = optimal_policy(&r, &PolicySet::unit_ball(), &map).unwrap_err();
        assert!(matches!(err, Error::DegenerateInstance(_)));
    }

    #[test]
    fn finite_set_argmax_breaks_ties_low() {
        let spec = build_power_law_spectrum(1.0, 2).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let r = RewardFunction::from_vec(vec![1.0, 0.0]);
        // Candidates 0 and 2 achieve the same value.
        let set = PolicySet::finite(
            vec![
                Policy::from_vec(vec![0.5, 0.0]),
                Policy::from_vec(vec![0.0, 0.5]),
                Policy::from_vec(vec![0.5, 0.0]),
            ],
            spec,
        )
        .unwrap();
        let star = optimal_policy(&r, &set, &map).unwrap();
        assert_eq!(star, set.candidates().unwrap()[0]);
    }

    #[test]
    fn excess_risk_clamps_rounding_noise_and_is_zero_at_optimum() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 1.0]);
        let set = PolicySet::unit_ball();
        let star = optimal_policy(&r, &set, &map).unwrap();
        let delta = excess_risk(&star, &r, &set, &map).unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn excess_risk_rejects_candidates_outside_the_ball() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 0.0]);
        let fat = Policy::from_vec(vec![2.0, 0.0]);
        assert!(excess_risk(&fat, &r, &PolicySet::unit_ball(), &map).is_err());
    }

    #[test]
    fn finite_set_rejects_candidates_outside_the_ball() {
        let spec = build_power_law_spectrum(1.0, 2).unwrap();
        let err = PolicySet::finite(vec![Policy::from_vec(vec![0.0, 1.0])], spec).unwrap_err();
        // mu_2 = 1/2 so ||(0,1)||^2 = 2.
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn oracle_requires_unit_norm_reward() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![2.0, 0.0]);
        assert!(Oracle::new(r, map, 0.0, 1).is_err());
    }

    #[test]
    fn oracle_is_deterministic_per_seed_and_noiseless_at_zero_variance() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 0.0]);
        let pi = Policy::from_vec(vec![1.0, 0.0]);
        let mut clean = Oracle::new(r.clone(), map.clone(), 0.0, 42).unwrap();
        assert_eq!(clean.query(&pi).unwrap(), 1.0);
        assert_eq!(clean.query(&pi).unwrap(), 1.0);

        let mut a = Oracle::new(r.clone(), map.clone(), 0.25, 42).unwrap();
        let mut b = Oracle::new(r.clone(), map.clone(), 0.25, 42).unwrap();
        let mut c = Oracle::new(r, map, 0.25, 43).unwrap();
        let ya: Vec<f64> = (0..5).map(|_| a.query(&pi).unwrap()).collect();
        let yb: Vec<f64> = (0..5).map(|_| b.query(&pi).unwrap()).collect();
        let yc: Vec<f64> = (0..5).map(|_| c.query(&pi).unwrap()).collect();
        assert_eq!(ya, yb);
        assert_ne!(ya, yc);
    }

    #[test]
    fn oracle_noise_matches_declared_variance() {
        let map = toy_map();
        let r = RewardFunction::from_vec(vec![1.0, 0.0]);
        let pi = Policy::from_vec(vec![0.0, 0.0]);
        let tau_sq = 0.09;
        let mut oracle = Oracle::new(r, map, tau_sq, 9).unwrap();
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| oracle.query(&pi).unwrap()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        // Standard error of the sample variance is about tau_sq * sqrt(2/n).
        assert!(mean.abs() < 4.0 * (tau_sq / n as f64).sqrt());
        assert!((var - tau_sq).abs() < 6.0 * tau_sq * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn sampled_rewards_live_on_the_unit_sphere() {
        let spec = build_power_law_spectrum(0.7, 12).unwrap();
        for seed in 0..50 {
            let r = sample_reward(&spec, seed);
            assert_relative_eq!(r.norm(&spec), 1.0, epsilon = 1e-10);
        }
        // Distinct seeds give distinct draws.
        assert_ne!(sample_reward(&spec, 0), sample_reward(&spec, 1));
    }

    #[test]
    fn excess_risk_decomposes_against_arbitrary_unit_vectors() {
        // For any unit-ball candidate pi and unit reward r on the identity
        // map, Delta = ||M* r||_pi - <M* r, pi>_pi >= 0 with equality only at
        // the normalized adjoint image.
        let spec = build_power_law_spectrum(1.2, 8).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let set = PolicySet::unit_ball();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = RewardFunction::new(
                sample_policy_on_sphere(map.codomain(), &mut rng)
                    .coefficients()
                    .clone(),
            );
            let pi = sample_policy_on_sphere(&spec, &mut rng);
            let adj = map.adjoint_apply(r.coefficients());
            let expected = spec.norm(&adj) - spec.inner(&adj, pi.coefficients());
            let got = excess_risk(&pi, &r, &set, &map).unwrap();
            assert_relative_eq!(got, expected.max(0.0), max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}
