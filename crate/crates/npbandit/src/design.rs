//! Passive query design: schedule selection and construction of the designed
//! query plan along the top whitened directions.
//!
//! The planner is non-adaptive. Given a budget `n` and a decay exponent
//! `beta` it picks a truncation level `J` and a ridge weight, spreads the
//! budget evenly over the top `J` composite directions, and hands leftover
//! queries to the directions with the largest composite eigenvalues.

use nalgebra::DVector;

use crate::env::{Policy, PolicySet};
use crate::error::{Error, Result};
use crate::spectral::{Spectrum, WhitenedDecomposition};

/// Schedule derived from the query budget and spectral decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    /// Number of designed directions.
    pub j: usize,
    /// Ridge weight for the downstream estimator.
    pub lambda_reg: f64,
    /// Decay exponent the schedule was derived from.
    pub beta: f64,
}

/// Budget-indexed schedule: `J = round(n^{1/(beta+2)})` clamped to `[1, n]`
/// and `lambda_reg = n^{-(beta+1)/(beta+2)}`.
pub fn choose_params(n: usize, beta: f64) -> Result<DesignParams> {
    if n == 0 {
        return Err(Error::invalid("query budget must be at least 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "decay exponent must be positive and finite, got {beta}"
        )));
    }
    let nf = n as f64;
    let j = nf.powf(1.0 / (beta + 2.0)).round().max(1.0) as usize;
    let j = j.min(n);
    let lambda_reg = nf.powf(-(beta + 1.0) / (beta + 2.0));
    Ok(DesignParams { j, lambda_reg, beta })
}

/// A designed batch of queries: `directions[k]` asked `repeats[k]` times.
#[derive(Debug, Clone)]
pub struct QueryPlan {
    directions: Vec<Policy>,
    repeats: Vec<usize>,
    n: usize,
}

impl QueryPlan {
    /// Builds a plan from parallel direction/repeat lists. Lengths must
    /// match and every direction must be queried at least once.
    pub fn new(directions: Vec<Policy>, repeats: Vec<usize>) -> Result<Self> {
        if directions.is_empty() || directions.len() != repeats.len() {
            return Err(Error::invalid(
                "plan needs equally many directions and repeat counts, at least one of each",
            ));
        }
        if repeats.iter().any(|&r| r == 0) {
            return Err(Error::invalid("every planned direction needs at least one query"));
        }
        let n = repeats.iter().sum();
        Ok(Self {
            directions,
            repeats,
            n,
        })
    }

    pub fn directions(&self) -> &[Policy] {
        &self.directions
    }

    pub fn repeats(&self) -> &[usize] {
        &self.repeats
    }

    /// Number of distinct directions.
    pub fn j(&self) -> usize {
        self.directions.len()
    }

    /// Total query count, the sum of all repeats.
    pub fn total_queries(&self) -> usize {
        self.n
    }

    /// Queries in execution order: direction 0 `repeats[0]` times, then
    /// direction 1, and so on.
    pub fn iter_queries(&self) -> impl Iterator<Item = (usize, &Policy)> {
        self.directions
            .iter()
            .enumerate()
            .flat_map(move |(k, pi)| std::iter::repeat((k, pi)).take(self.repeats[k]))
    }
}

/// Spreads `n` queries over the top `j` whitened directions.
///
/// Direction `k` is the unit policy `S_pi^{-1/2} phi_k` with coefficients
/// `sqrt(mu_pi) .* phi_k`. Each direction gets `floor(n / j)` queries; the
/// `n mod j` leftovers go one each to the directions with the largest
/// composite eigenvalues, which are the first ones in sorted order.
pub fn design_queries(
    n: usize,
    decomp: &WhitenedDecomposition,
    policy_spectrum: &Spectrum,
    j: usize,
) -> Result<QueryPlan> {
    let d_pi = decomp.num_directions();
    if policy_spectrum.dim() != d_pi {
        return Err(Error::invalid(format!(
            "policy spectrum has dimension {} but the decomposition has {}",
            policy_spectrum.dim(),
            d_pi
        )));
    }
    if j == 0 || j > d_pi || j > n {
        return Err(Error::invalid(format!(
            "direction count must satisfy 1 <= j <= min(n, d_pi); got j = {j}, n = {n}, d_pi = {d_pi}"
        )));
    }
    let base = n / j;
    let leftover = n - base * j;
    let mut directions = Vec::with_capacity(j);
    let mut repeats = Vec::with_capacity(j);
    for k in 0..j {
        let phi = decomp.direction(k);
        let coeffs = DVector::from_fn(d_pi, |i, _| policy_spectrum.mu(i).sqrt() * phi[i]);
        directions.push(Policy::new(coeffs));
        repeats.push(base + usize::from(k < leftover));
    }
    QueryPlan::new(directions, repeats)
}

/// Result of projecting a designed direction into a policy set.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    /// The policy to actually query.
    pub policy: Policy,
    /// Squared cosine between the designed direction and the matched policy
    /// in the policy inner product; 1 on the unit ball.
    pub collinearity: f64,
}

/// Replaces a designed direction by the most collinear member of `set`.
///
/// On the unit ball the direction is already feasible and comes back
/// unchanged. On a finite set the candidate maximizing the squared cosine in
/// the policy inner product wins; if even the best falls below the set's
/// collinearity constant (default 0.5) the design assumption fails and the
/// error reports `direction_index`.
pub fn match_to_policy_set(
    direction: &Policy,
    set: &PolicySet,
    direction_index: usize,
) -> Result<MatchOutcome> {
    let threshold = set.collinearity_constant().unwrap_or(0.5);
    match set.candidates() {
        None => Ok(MatchOutcome {
            policy: direction.clone(),
            collinearity: 1.0,
        }),
        Some(candidates) => {
            let spectrum = set
                .spectrum()
                .expect("finite sets always carry their validation spectrum");
            if direction.dim() != spectrum.dim() {
                return Err(Error::invalid(format!(
                    "direction has dimension {} but the set expects {}",
                    direction.dim(),
                    spectrum.dim()
                )));
            }
            let dir_norm_sq = spectrum.norm_sq(direction.coefficients());
            if dir_norm_sq <= 0.0 {
                return Err(Error::invalid("cannot match a zero direction"));
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, pi) in candidates.iter().enumerate() {
                let cand_norm_sq = spectrum.norm_sq(pi.coefficients());
                if cand_norm_sq <= 0.0 {
                    continue;
                }
                let dot = spectrum.inner(direction.coefficients(), pi.coefficients());
                let cos_sq = (dot * dot / (dir_norm_sq * cand_norm_sq)).min(1.0);
                let better = match best {
                    None => true,
                    Some((_, b)) => cos_sq > b,
                };
                if better {
                    best = Some((i, cos_sq));
                }
            }
            let (idx, cos_sq) = best.ok_or_else(|| {
                Error::invalid("policy set contains only zero policies; nothing to match")
            })?;
            if cos_sq < threshold {
                return Err(Error::AssumptionViolated {
                    index: direction_index,
                    achieved: cos_sq,
                    threshold,
                });
            }
            Ok(MatchOutcome {
                policy: candidates[idx].clone(),
                collinearity: cos_sq,
            })
        }
    }
}

/// Least-squares fit of a power-law exponent to a composite spectrum:
/// regresses `ln zeta_j` on `ln j` and returns the negated slope.
pub fn fit_decay_exponent(zeta: &[f64]) -> Result<f64> {
    if zeta.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 eigenvalues to fit a decay exponent, got {}",
            zeta.len()
        )));
    }
    if zeta.iter().any(|&z| !(z > 0.0) || !z.is_finite()) {
        return Err(Error::invalid(
            "decay fit requires strictly positive finite eigenvalues",
        ));
    }
    let n = zeta.len() as f64;
    let xs = (1..=zeta.len()).map(|j| (j as f64).ln());
    let ys = zeta.iter().map(|&z| z.ln());
    let mean_x = xs.clone().sum::<f64>() / n;
    let mean_y = ys.clone().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= 0.0 {
        return Err(Error::invalid("degenerate abscissa in decay fit"));
    }
    Ok(-(sxy / sxx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_power_law_spectrum, whiten, LinearMap};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn schedule_examples() {
        // beta = 0.75: J = round(n^{1/2.75}), lambda = n^{-1.75/2.75}.
        let p = choose_params(4096, 0.75).unwrap();
        assert_eq!(p.j, 21);
        assert_relative_eq!(p.lambda_reg, 5.026034757849343e-3, max_relative = 1e-12);

        let p = choose_params(256, 0.75).unwrap();
        assert_eq!(p.j, 8);
        assert_relative_eq!(p.lambda_reg, 2.9341590958178323e-2, max_relative = 1e-12);
    }

    #[test]
    fn schedule_degenerate_budget() {
        let p = choose_params(1, 2.0).unwrap();
        assert_eq!(p.j, 1);
        assert_eq!(p.lambda_reg, 1.0);
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(choose_params(0, 1.0).is_err());
        assert!(choose_params(16, 0.0).is_err());
        assert!(choose_params(16, -1.0).is_err());
        assert!(choose_params(16, f64::NAN).is_err());
    }

    fn power_law_decomp(d: usize) -> (WhitenedDecomposition, Spectrum) {
        let pi = build_power_law_spectrum(1.0, d).unwrap();
        let r = build_power_law_spectrum(0.5, d).unwrap();
        let map = LinearMap::identity(pi.clone(), r).unwrap();
        (whiten(&map).unwrap(), pi)
    }

    #[test]
    fn even_split_with_no_leftovers() {
        let (decomp, spec) = power_law_decomp(8);
        let plan = design_queries(100, &decomp, &spec, 4).unwrap();
        assert_eq!(plan.repeats(), &[25, 25, 25, 25]);
        assert_eq!(plan.total_queries(), 100);
        assert_eq!(plan.j(), 4);
    }

    #[test]
    fn leftovers_go_to_the_top_directions() {
        let (decomp, spec) = power_law_decomp(8);
        let plan = design_queries(10, &decomp, &spec, 4).unwrap();
        assert_eq!(plan.repeats(), &[3, 3, 2, 2]);
    }

    #[test]
    fn directions_are_unit_and_orthogonal_in_the_policy_space() {
        let (decomp, spec) = power_law_decomp(8);
        let plan = design_queries(12, &decomp, &spec, 4).unwrap();
        for (a, pa) in plan.directions().iter().enumerate() {
            for (b, pb) in plan.directions().iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                let got = spec.inner(pa.coefficients(), pb.coefficients());
                assert_relative_eq!(got, target, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn designed_covariance_is_diagonal_with_planned_mass() {
        // Identity map: zeta_j = mu_pi_j / mu_r_j; with beta_pi = 1,
        // beta_r = 0.5 the composite order matches the coordinate order.
        let (decomp, spec) = power_law_decomp(6);
        let n = 10;
        let plan = design_queries(n, &decomp, &spec, 3).unwrap();
        let d = spec.dim();
        let mut sigma_q = DMatrix::zeros(d, d);
        for (k, pi) in plan.directions().iter().enumerate() {
            let w = plan.repeats()[k] as f64 / n as f64;
            let c = pi.coefficients();
            sigma_q += c * c.transpose() * w;
        }
        let mut nonzero = 0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    assert!(sigma_q[(i, j)].abs() < 1e-15);
                }
            }
            if sigma_q[(i, i)] > 0.0 {
                nonzero += 1;
                let rep = plan.repeats()[i] as f64;
                assert_relative_eq!(
                    sigma_q[(i, i)],
                    spec.mu(i) * rep / n as f64,
                    epsilon = 1e-15
                );
            }
        }
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn dense_map_directions_are_orthonormal() {
        let d = 5;
        let entries = DMatrix::from_fn(d, d, |i, j| ((i * 7 + j * 3 + 1) as f64).sin());
        let domain = build_power_law_spectrum(1.2, d).unwrap();
        let codomain = build_power_law_spectrum(0.8, d).unwrap();
        let map = LinearMap::dense(entries, domain.clone(), codomain).unwrap();
        let decomp = whiten(&map).unwrap();
        let plan = design_queries(15, &decomp, &domain, 5).unwrap();
        for (a, pa) in plan.directions().iter().enumerate() {
            for (b, pb) in plan.directions().iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                let got = domain.inner(pa.coefficients(), pb.coefficients());
                assert_relative_eq!(got, target, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn plan_preconditions() {
        let (decomp, spec) = power_law_decomp(4);
        assert!(design_queries(10, &decomp, &spec, 0).is_err());
        assert!(design_queries(10, &decomp, &spec, 5).is_err());
        assert!(design_queries(3, &decomp, &spec, 4).is_err());
    }

    #[test]
    fn matching_on_the_unit_ball_is_identity() {
        let set = crate::env::PolicySet::unit_ball();
        let dir = Policy::from_vec(vec![0.3, 0.4]);
        let out = match_to_policy_set(&dir, &set, 0).unwrap();
        assert_eq!(out.policy, dir);
        assert_eq!(out.collinearity, 1.0);
    }

    #[test]
    fn matching_picks_the_most_collinear_candidate() {
        let spec = build_power_law_spectrum(1.0, 2).unwrap();
        let dir = Policy::from_vec(vec![1.0, 0.0]);
        let aligned = Policy::from_vec(vec![0.5, 0.0]);
        let sideways = Policy::from_vec(vec![0.0, 0.5]);
        let set =
            crate::env::PolicySet::finite(vec![sideways.clone(), aligned.clone()], spec).unwrap();
        let out = match_to_policy_set(&dir, &set, 0).unwrap();
        assert_eq!(out.policy, aligned);
        assert_relative_eq!(out.collinearity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matching_reports_assumption_violations_with_the_index() {
        let spec = build_power_law_spectrum(1.0, 2).unwrap();
        let dir = Policy::from_vec(vec![1.0, 0.0]);
        let sideways = Policy::from_vec(vec![0.0, 0.5]);
        let set = crate::env::PolicySet::finite(vec![sideways], spec).unwrap();
        match match_to_policy_set(&dir, &set, 7) {
            Err(crate::error::Error::AssumptionViolated {
                index,
                achieved,
                threshold,
            }) => {
                assert_eq!(index, 7);
                assert_eq!(achieved, 0.0);
                assert_eq!(threshold, 0.5);
            }
            other => panic!("expected an assumption violation, got {other:?}"),
        }
    }

    #[test]
    fn matching_honors_a_custom_collinearity_constant() {
        let spec = build_power_law_spectrum(1.0, 2).unwrap();
        let dir = Policy::from_vec(vec![1.0, 0.0]);
        // cos^2 between dir and this candidate is 1/2 in the policy metric:
        // <dir, c> = 1/2, ||dir||^2 = 1, ||c||^2 = 1/4 + 2 * 1/8 = 1/2.
        let diag = Policy::from_vec(vec![0.5, 0.5 / std::f64::consts::SQRT_2]);
        let set = crate::env::PolicySet::finite(vec![diag], spec.clone()).unwrap();
        let relaxed = set.clone().with_collinearity_constant(0.4).unwrap();
        let out = match_to_policy_set(&dir, &relaxed, 0).unwrap();
        assert_relative_eq!(out.collinearity, 0.5, epsilon = 1e-12);
        let strict = set.with_collinearity_constant(0.9).unwrap();
        assert!(match_to_policy_set(&dir, &strict, 0).is_err());
    }

    #[test]
    fn decay_fit_recovers_exact_power_laws() {
        let zeta: Vec<f64> = (1..=40).map(|j| (j as f64).powf(-0.75)).collect();
        assert_relative_eq!(fit_decay_exponent(&zeta).unwrap(), 0.75, epsilon = 1e-12);
        let zeta: Vec<f64> = (1..=10).map(|j| (j as f64).powf(-2.5)).collect();
        assert_relative_eq!(fit_decay_exponent(&zeta).unwrap(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn decay_fit_rejects_bad_input() {
        assert!(fit_decay_exponent(&[1.0, 0.5]).is_err());
        assert!(fit_decay_exponent(&[1.0, 0.5, 0.0]).is_err());
        assert!(fit_decay_exponent(&[1.0, -0.5, 0.25]).is_err());
    }
}
