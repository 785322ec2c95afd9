//! Ridge estimation of the reward from designed queries and the plug-in
//! policy built from the estimate.
//!
//! The regularized system is `A = M Sigma_Q M^t S_r + lambda I` with
//! `Sigma_Q = (1/n) sum pi_i pi_i^t`. `A` itself is not symmetric, but
//! `B = M Sigma_Q M^t + lambda diag(mu_r)` is symmetric positive definite and
//! `A = B S_r`, so one Cholesky factorization of `B` solves every system in
//! `A`: `A^{-1} v = diag(mu_r) B^{-1} v`. Plans whose queries all lie on
//! coordinate axes of a diagonal map keep `B` diagonal, which is what makes
//! the large-dimension scaling runs cheap.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::design::{design_queries, match_to_policy_set, DesignParams, QueryPlan};
use crate::env::{excess_risk, optimal_policy, Oracle, Policy, PolicySet, RewardFunction};
use crate::error::{Error, Result};
use crate::risk::{decomposition_with_factor, rate_exponent_for_set, risk_bound_unit_ball};
use crate::risk::RiskReport;
use crate::spectral::{whiten, LinearMap};

/// Smallest ridge weight the solver accepts; anything lower is floored here
/// to keep the system positive definite.
pub const LAMBDA_FLOOR: f64 = 1e-12;

const CONDITION_LIMIT: f64 = 1e14;

/// Factorization of the regularized system, reusable for every `A^{-1} v`.
#[derive(Debug, Clone)]
pub(crate) enum SystemFactor {
    /// `B` is diagonal: entries of `B` and of `mu_r`.
    Diagonal {
        b_diag: DVector<f64>,
        mu_r: DVector<f64>,
    },
    /// Dense `B` with its Cholesky factor.
    Dense {
        chol: Cholesky<f64, Dyn>,
        mu_r: DVector<f64>,
    },
}

impl SystemFactor {
    /// Applies `A^{-1} = diag(mu_r) B^{-1}`.
    pub(crate) fn solve_a(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SystemFactor::Diagonal { b_diag, mu_r } => {
                DVector::from_fn(rhs.len(), |j, _| mu_r[j] * rhs[j] / b_diag[j])
            }
            SystemFactor::Dense { chol, mu_r } => {
                let x = chol.solve(rhs);
                DVector::from_fn(rhs.len(), |j, _| mu_r[j] * x[j])
            }
        }
    }

    /// Cheap condition estimate for `A`. Exact for the diagonal path; the
    /// dense path multiplies the squared Cholesky-diagonal ratio of `B` by
    /// the condition of `S_r`.
    fn condition_estimate(&self) -> f64 {
        match self {
            SystemFactor::Diagonal { b_diag, mu_r } => ratio_of_extremes(
                (0..b_diag.len()).map(|j| b_diag[j] / mu_r[j]),
            ),
            SystemFactor::Dense { chol, mu_r } => {
                let l_ratio = ratio_of_extremes(chol.l_dirty().diagonal().iter().copied());
                l_ratio * l_ratio * ratio_of_extremes(mu_r.iter().copied())
            }
        }
    }
}

fn ratio_of_extremes(values: impl Iterator<Item = f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in values {
        let v = v.abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Builds the factorization of `A` for a weighted query set: `policies[k]`
/// queried `counts[k]` times out of `n` total. Also materializes `A` itself.
pub(crate) fn build_system(
    policies: &[Policy],
    counts: &[usize],
    n: usize,
    map: &LinearMap,
    lambda: f64,
) -> Result<(SystemFactor, DMatrix<f64>)> {
    let d_pi = map.d_pi();
    let d_r = map.d_r();
    if policies.is_empty() || policies.len() != counts.len() {
        return Err(Error::invalid(
            "system needs equally many policies and counts, at least one of each",
        ));
    }
    for pi in policies {
        if pi.dim() != d_pi {
            return Err(Error::invalid(format!(
                "query policy has dimension {} but the map expects {d_pi}",
                pi.dim()
            )));
        }
        if pi.coefficients().iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("query policies must have finite coefficients"));
        }
    }
    let mu_r = DVector::from_iterator(d_r, map.codomain().eigenvalues().iter().copied());

    // Axis-aligned queries against a diagonal map keep everything diagonal.
    let diagonal_path = map.is_diagonal()
        && policies
            .iter()
            .all(|pi| pi.coefficients().iter().filter(|&&c| c != 0.0).count() <= 1);

    let factor = if diagonal_path {
        let sigma = map
            .diagonal_entries()
            .expect("diagonal path requires a diagonal map");
        let mut b_diag = DVector::from_fn(d_r, |j, _| lambda * mu_r[j]);
        for (pi, &count) in policies.iter().zip(counts) {
            let w = count as f64 / n as f64;
            for (j, &c) in pi.coefficients().iter().enumerate() {
                if c != 0.0 {
                    b_diag[j] += w * sigma[j] * sigma[j] * c * c;
                }
            }
        }
        SystemFactor::Diagonal { b_diag, mu_r }
    } else {
        let mut sigma_q = DMatrix::zeros(d_pi, d_pi);
        for (pi, &count) in policies.iter().zip(counts) {
            let w = count as f64 / n as f64;
            sigma_q.ger(w, pi.coefficients(), pi.coefficients(), 1.0);
        }
        let m = map.to_dense();
        let mut b = &m * sigma_q * m.transpose();
        for j in 0..d_r {
            b[(j, j)] += lambda * mu_r[j];
        }
        let chol = b.cholesky().ok_or_else(|| {
            Error::numerical(
                "regularized system is not positive definite; increase the ridge weight",
            )
        })?;
        SystemFactor::Dense { chol, mu_r }
    };

    let cond = factor.condition_estimate();
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::numerical(format!(
            "regularized system condition estimate {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; \
             increase the ridge weight"
        )));
    }

    // Materialize A = B S_r for inspection.
    let a = match &factor {
        SystemFactor::Diagonal { b_diag, mu_r } => {
            let mut a = DMatrix::zeros(d_r, d_r);
            for j in 0..d_r {
                a[(j, j)] = b_diag[j] / mu_r[j];
            }
            a
        }
        SystemFactor::Dense { chol, mu_r } => {
            let l = chol.l();
            let mut a = &l * l.transpose();
            for j in 0..d_r {
                let inv = 1.0 / mu_r[j];
                for i in 0..d_r {
                    a[(i, j)] *= inv;
                }
            }
            a
        }
    };
    Ok((factor, a))
}

/// Output of the closed-form ridge solve.
#[derive(Debug, Clone)]
pub struct RidgeEstimate {
    reward_hat: RewardFunction,
    lambda_reg: f64,
    system_matrix: DMatrix<f64>,
    n: usize,
    pub(crate) factor: SystemFactor,
}

impl RidgeEstimate {
    pub fn reward_hat(&self) -> &RewardFunction {
        &self.reward_hat
    }

    /// Effective ridge weight after flooring at [`LAMBDA_FLOOR`].
    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    /// The regularized system `A = M Sigma_Q M^t S_r + lambda I`.
    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.system_matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Closed-form ridge estimate from raw (policy, observation) pairs.
///
/// `r_hat = A^{-1} (1/n) sum y_i M pi_i`. Runs of identical consecutive
/// policies are grouped, so plans that repeat each designed direction cost
/// `O(J)` rank-one updates rather than `O(n)`.
pub fn ridge_estimate(
    queries: &[(Policy, f64)],
    map: &LinearMap,
    lambda_reg: f64,
) -> Result<RidgeEstimate> {
    if queries.is_empty() {
        return Err(Error::invalid("ridge estimation needs at least one query"));
    }
    if queries.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::invalid("observations must be finite"));
    }
    let mut policies: Vec<Policy> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut y_sums: Vec<f64> = Vec::new();
    for (pi, y) in queries {
        match policies.last() {
            Some(last) if last == pi => {
                *counts.last_mut().expect("non-empty") += 1;
                *y_sums.last_mut().expect("non-empty") += y;
            }
            _ => {
                policies.push(pi.clone());
                counts.push(1);
                y_sums.push(*y);
            }
        }
    }
    ridge_from_groups(&policies, &counts, &y_sums, queries.len(), map, lambda_reg)
}

pub(crate) fn ridge_from_groups(
    policies: &[Policy],
    counts: &[usize],
    y_sums: &[f64],
    n: usize,
    map: &LinearMap,
    lambda_reg: f64,
) -> Result<RidgeEstimate> {
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge weight must be finite and non-negative, got {lambda_reg}"
        )));
    }
    let lambda = lambda_reg.max(LAMBDA_FLOOR);
    let (factor, system_matrix) = build_system(policies, counts, n, map, lambda)?;
    let mut rhs = DVector::zeros(map.d_r());
    for (pi, &y_sum) in policies.iter().zip(y_sums) {
        rhs += map.apply(pi.coefficients()) * (y_sum / n as f64);
    }
    let coeffs = factor.solve_a(&rhs);
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::numerical("ridge solution has non-finite coefficients"));
    }
    Ok(RidgeEstimate {
        reward_hat: RewardFunction::new(coeffs),
        lambda_reg: lambda,
        system_matrix,
        n,
        factor,
    })
}

/// Policy optimization against the estimated reward: exact maximizer of
/// `F(., r_hat)` over `set`.
pub fn plugin_policy(estimate: &RidgeEstimate, set: &PolicySet, map: &LinearMap) -> Result<Policy> {
    optimal_policy(&estimate.reward_hat, set, map)
}

/// End-to-end passive run: design, query, estimate, optimize, and report.
///
/// The direction count from `params` is clamped to `[1, min(n, d_pi)]`. For
/// finite sets every designed direction is first matched to its most
/// collinear member, and a failed match aborts the run with the direction
/// index. The report carries the realized excess risk, the exact bias and
/// variance of the value gradient, and (on the unit ball) the theoretical
/// bound evaluated on the composite spectrum.
pub fn run_pipeline(
    oracle: &mut Oracle,
    set: &PolicySet,
    n: usize,
    params: &DesignParams,
) -> Result<(Policy, RiskReport)> {
    let (policy, report, _) = run_pipeline_full(oracle, set, n, params)?;
    Ok((policy, report))
}

/// [`run_pipeline`] variant that also hands back the executed plan, for
/// callers that account for every query (the explore-then-commit baseline).
pub(crate) fn run_pipeline_full(
    oracle: &mut Oracle,
    set: &PolicySet,
    n: usize,
    params: &DesignParams,
) -> Result<(Policy, RiskReport, QueryPlan)> {
    if n == 0 {
        return Err(Error::invalid("query budget must be at least 1"));
    }
    let map = oracle.map().clone();
    let decomp = whiten(&map)?;
    let j_eff = params.j.max(1).min(n).min(map.d_pi());
    let plan = design_queries(n, &decomp, map.domain(), j_eff)?;
    let plan = if set.is_unit_ball() {
        plan
    } else {
        let mut matched = Vec::with_capacity(plan.j());
        for (k, dir) in plan.directions().iter().enumerate() {
            matched.push(match_to_policy_set(dir, set, k)?.policy);
        }
        QueryPlan::new(matched, plan.repeats().to_vec())?
    };

    let mut y_sums = vec![0.0; plan.j()];
    for (k, pi) in plan.iter_queries() {
        y_sums[k] += oracle.query(pi)?;
    }
    let estimate = ridge_from_groups(
        plan.directions(),
        plan.repeats(),
        &y_sums,
        n,
        &map,
        params.lambda_reg,
    )?;
    let policy = plugin_policy(&estimate, set, &map)?;
    let delta = excess_risk(&policy, oracle.reward(), set, &map)?;
    let (bias_sq, variance) = decomposition_with_factor(
        &estimate.factor,
        oracle.reward(),
        &plan,
        &map,
        estimate.lambda_reg(),
        oracle.tau_sq(),
    );
    let bound_value = if set.is_unit_ball() {
        Some(risk_bound_unit_ball(
            decomp.zeta(),
            j_eff,
            estimate.lambda_reg(),
            oracle.tau_sq(),
            n,
        ))
    } else {
        None
    };
    let report = RiskReport {
        realized_delta: delta,
        bias_sq: Some(bias_sq),
        variance: Some(variance),
        bound_value,
        rate_exponent: Some(rate_exponent_for_set(params.beta, set)),
        n,
        j: j_eff,
        lambda_reg: estimate.lambda_reg(),
        seed: oracle.seed(),
        beta: params.beta,
    };
    Ok((policy, report, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::choose_params;
    use crate::env::sample_reward;
    use crate::spectral::{build_power_law_spectrum, Spectrum};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_map() -> LinearMap {
        let s = Spectrum::new(vec![1.0]).unwrap();
        LinearMap::identity(s.clone(), s).unwrap()
    }

    #[test]
    fn single_scalar_query_has_the_textbook_solution() {
        // d = 1, M = I, mu = 1: r_hat = y / (1 + lambda).
        let map = scalar_map();
        let queries = vec![(Policy::from_vec(vec![1.0]), 2.0)];
        let est = ridge_estimate(&queries, &map, 0.5).unwrap();
        assert_relative_eq!(est.reward_hat().coefficients()[0], 4.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(est.system_matrix()[(0, 0)], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn zero_ridge_weight_is_floored_and_recorded() {
        let map = scalar_map();
        let queries = vec![(Policy::from_vec(vec![1.0]), 2.0)];
        let est = ridge_estimate(&queries, &map, 0.0).unwrap();
        assert_eq!(est.lambda_reg(), LAMBDA_FLOOR);
        assert_relative_eq!(est.reward_hat().coefficients()[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_full_rank_design_recovers_the_reward() {
        let d = 6;
        let spec = build_power_law_spectrum(1.0, d).unwrap();
        let r_spec = build_power_law_spectrum(0.5, d).unwrap();
        let map = LinearMap::identity(spec.clone(), r_spec.clone()).unwrap();
        let truth = sample_reward(&r_spec, 5);
        let mut oracle = Oracle::new(truth.clone(), map.clone(), 0.0, 5).unwrap();
        let decomp = whiten(&map).unwrap();
        let plan = crate::design::design_queries(2 * d, &decomp, &spec, d).unwrap();
        let queries: Vec<(Policy, f64)> = plan
            .iter_queries()
            .map(|(_, pi)| (pi.clone(), oracle.query(pi).unwrap()))
            .collect();
        let est = ridge_estimate(&queries, &map, 0.0).unwrap();
        for j in 0..d {
            assert_relative_eq!(
                est.reward_hat().coefficients()[j],
                truth.coefficients()[j],
                max_relative = 1e-6,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn repeated_queries_average_their_observations() {
        let map = scalar_map();
        let pi = Policy::from_vec(vec![1.0]);
        let twice = vec![(pi.clone(), 1.0), (pi.clone(), 3.0)];
        let once = vec![(pi.clone(), 2.0)];
        // Same Sigma_Q, same averaged right-hand side, so identical systems
        // up to the different n in the (1/n) sums, which cancels.
        let a = ridge_estimate(&twice, &map, 0.25).unwrap();
        let b = ridge_estimate(&once, &map, 0.25).unwrap();
        assert_relative_eq!(
            a.reward_hat().coefficients()[0],
            b.reward_hat().coefficients()[0],
            epsilon = 1e-14
        );
    }

    #[test]
    fn query_order_does_not_change_the_estimate() {
        let d = 4;
        let spec = build_power_law_spectrum(1.0, d).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let pis: Vec<Policy> = (0..d)
            .map(|j| {
                let mut c = vec![0.0; d];
                c[j] = spec.mu(j).sqrt();
                Policy::from_vec(c)
            })
            .collect();
        let ys = [0.3, -0.7, 1.1, 0.2];
        let sorted: Vec<(Policy, f64)> = (0..d)
            .flat_map(|j| std::iter::repeat((pis[j].clone(), ys[j])).take(2))
            .collect();
        let interleaved: Vec<(Policy, f64)> = (0..2)
            .flat_map(|_| (0..d).map(|j| (pis[j].clone(), ys[j])).collect::<Vec<_>>())
            .collect();
        let a = ridge_estimate(&sorted, &map, 0.1).unwrap();
        let b = ridge_estimate(&interleaved, &map, 0.1).unwrap();
        for j in 0..d {
            assert_relative_eq!(
                a.reward_hat().coefficients()[j],
                b.reward_hat().coefficients()[j],
                epsilon = 1e-12
            );
        }
    }

    /// Direct dense reference: assemble A and the right-hand side with plain
    /// matrix algebra and solve with LU.
    fn naive_ridge(queries: &[(Policy, f64)], map: &LinearMap, lambda: f64) -> DVector<f64> {
        let n = queries.len() as f64;
        let d_pi = map.d_pi();
        let d_r = map.d_r();
        let m = map.to_dense();
        let mut sigma_q = DMatrix::zeros(d_pi, d_pi);
        let mut rhs = DVector::zeros(d_r);
        for (pi, y) in queries {
            sigma_q.ger(1.0 / n, pi.coefficients(), pi.coefficients(), 1.0);
            rhs += &m * pi.coefficients() * (*y / n);
        }
        let s_r = DMatrix::from_diagonal(&DVector::from_iterator(
            d_r,
            map.codomain().inverse_eigenvalues(),
        ));
        let a = &m * sigma_q * m.transpose() * s_r + DMatrix::identity(d_r, d_r) * lambda;
        a.lu().solve(&rhs).expect("reference system is invertible")
    }

    #[test]
    fn diagonal_fast_path_matches_the_naive_dense_solve() {
        let d = 5;
        let spec = build_power_law_spectrum(1.2, d).unwrap();
        let r_spec = build_power_law_spectrum(0.6, d).unwrap();
        let map = LinearMap::diagonal(
            DVector::from_fn(d, |j, _| 1.0 / (1.0 + j as f64)),
            spec.clone(),
            r_spec,
        )
        .unwrap();
        let mut queries = Vec::new();
        for j in 0..d {
            let mut c = vec![0.0; d];
            c[j] = spec.mu(j).sqrt();
            queries.push((Policy::from_vec(c), (j as f64).sin()));
        }
        let est = ridge_estimate(&queries, &map, 0.3).unwrap();
        let reference = naive_ridge(&queries, &map, 0.3);
        for j in 0..d {
            assert_relative_eq!(
                est.reward_hat().coefficients()[j],
                reference[j],
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn dense_map_solve_matches_the_naive_dense_solve() {
        let d = 4;
        let spec = build_power_law_spectrum(0.9, d).unwrap();
        let entries = DMatrix::from_fn(d, d, |i, j| ((2 * i + 3 * j + 1) as f64).cos());
        let map = LinearMap::dense(entries, spec.clone(), spec.clone()).unwrap();
        let mut rng_state = 1u64;
        let mut queries = Vec::new();
        for _ in 0..9 {
            // Cheap deterministic pseudo-random coefficients.
            let coeffs: Vec<f64> = (0..d)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((rng_state >> 33) as f64 / 2f64.powi(31)) - 1.0
                })
                .collect();
            let y = coeffs.iter().sum::<f64>();
            queries.push((Policy::from_vec(coeffs), y));
        }
        let est = ridge_estimate(&queries, &map, 0.2).unwrap();
        let reference = naive_ridge(&queries, &map, 0.2);
        for j in 0..d {
            assert_relative_eq!(
                est.reward_hat().coefficients()[j],
                reference[j],
                max_relative = 1e-9,
                epsilon = 1e-12
            );
        }
        // The materialized system matrix agrees with the definition too.
        let m = map.to_dense();
        let mut sigma_q = DMatrix::zeros(d, d);
        for (pi, _) in &queries {
            sigma_q.ger(1.0 / 9.0, pi.coefficients(), pi.coefficients(), 1.0);
        }
        let s_r = DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            map.codomain().inverse_eigenvalues(),
        ));
        let a_ref = &m * sigma_q * m.transpose() * s_r + DMatrix::identity(d, d) * 0.2;
        for i in 0..d {
            for j in 0..d {
                assert_relative_eq!(
                    est.system_matrix()[(i, j)],
                    a_ref[(i, j)],
                    max_relative = 1e-9,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn ill_conditioned_systems_are_rejected() {
        // Only the first coordinate is observed and the map wildly rescales
        // it, so cond(A) is about 1e16 at the floored ridge weight.
        let spec = Spectrum::new(vec![1.0, 1.0]).unwrap();
        let map = LinearMap::diagonal(
            DVector::from_vec(vec![100.0, 1.0]),
            spec.clone(),
            spec,
        )
        .unwrap();
        let queries = vec![(Policy::from_vec(vec![1.0, 0.0]), 1.0)];
        let err = ridge_estimate(&queries, &map, 0.0).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure(_)));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let map = scalar_map();
        let pi = Policy::from_vec(vec![1.0]);
        assert!(ridge_estimate(&[], &map, 0.1).is_err());
        assert!(ridge_estimate(&[(pi.clone(), f64::NAN)], &map, 0.1).is_err());
        assert!(ridge_estimate(&[(pi.clone(), 1.0)], &map, -0.1).is_err());
        assert!(ridge_estimate(&[(pi.clone(), 1.0)], &map, f64::NAN).is_err());
        let long = Policy::from_vec(vec![1.0, 2.0]);
        assert!(ridge_estimate(&[(long, 1.0)], &map, 0.1).is_err());
    }

    #[test]
    fn plugin_policy_is_the_normalized_adjoint_image_on_the_ball() {
        let d = 3;
        let spec = build_power_law_spectrum(1.0, d).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let queries: Vec<(Policy, f64)> = (0..d)
            .map(|j| {
                let mut c = vec![0.0; d];
                c[j] = spec.mu(j).sqrt();
                (Policy::from_vec(c), 1.0 + j as f64)
            })
            .collect();
        let est = ridge_estimate(&queries, &map, 0.1).unwrap();
        let pi = plugin_policy(&est, &PolicySet::unit_ball(), &map).unwrap();
        let adj = map.adjoint_apply(est.reward_hat().coefficients());
        let expected = &adj / spec.norm(&adj);
        for j in 0..d {
            assert_relative_eq!(pi.coefficients()[j], expected[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn pipeline_recovers_the_optimum_without_noise() {
        let d = 8;
        let spec = build_power_law_spectrum(1.0, d).unwrap();
        let r_spec = build_power_law_spectrum(0.5, d).unwrap();
        let map = LinearMap::identity(spec, r_spec.clone()).unwrap();
        let truth = sample_reward(&r_spec, 11);
        let mut oracle = Oracle::new(truth, map, 0.0, 11).unwrap();
        let params = DesignParams {
            j: d,
            lambda_reg: 0.0,
            beta: 1.0,
        };
        let set = PolicySet::unit_ball();
        let (_, report) = run_pipeline(&mut oracle, &set, 2 * d, &params).unwrap();
        assert!(report.realized_delta < 1e-8, "delta = {}", report.realized_delta);
        assert_eq!(report.variance, Some(0.0));
        assert_eq!(report.j, d);
        assert_eq!(report.n, 2 * d);
    }

    #[test]
    fn pipeline_is_deterministic_per_seed() {
        let d = 6;
        let spec = build_power_law_spectrum(1.5, d).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        let truth = sample_reward(&spec, 3);
        let params = choose_params(40, 1.5).unwrap();
        let set = PolicySet::unit_ball();
        let mut o1 = Oracle::new(truth.clone(), map.clone(), 0.5, 3).unwrap();
        let mut o2 = Oracle::new(truth, map, 0.5, 3).unwrap();
        let (p1, r1) = run_pipeline(&mut o1, &set, 40, &params).unwrap();
        let (p2, r2) = run_pipeline(&mut o2, &set, 40, &params).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.realized_delta, r2.realized_delta);
        assert_eq!(r1.bias_sq, r2.bias_sq);
        assert_eq!(r1.variance, r2.variance);
        assert!(r1.realized_delta >= 0.0);
        assert!(r1.bias_sq.unwrap() >= 0.0);
        assert!(r1.variance.unwrap() >= 0.0);
        assert!(r1.bound_value.is_some());
    }

    #[test]
    fn pipeline_matches_directions_into_finite_sets() {
        let d = 3;
        let spec = build_power_law_spectrum(1.0, d).unwrap();
        let map = LinearMap::identity(spec.clone(), spec.clone()).unwrap();
        // Candidates proportional to each designed direction, so matching
        // succeeds with collinearity 1 and the pipeline queries candidates.
        let candidates: Vec<Policy> = (0..d)
            .map(|j| {
                let mut c = vec![0.0; d];
                c[j] = 0.9 * spec.mu(j).sqrt();
                Policy::from_vec(c)
            })
            .collect();
        let set = PolicySet::finite(candidates, spec.clone()).unwrap();
        let truth = sample_reward(&spec, 21);
        let mut oracle = Oracle::new(truth, map, 0.0, 21).unwrap();
        let params = DesignParams {
            j: d,
            lambda_reg: 1e-9,
            beta: 1.0,
        };
        let (policy, report) = run_pipeline(&mut oracle, &set, 9, &params).unwrap();
        assert!(set.candidates().unwrap().contains(&policy));
        assert!(report.realized_delta >= 0.0);
        assert!(report.bound_value.is_none());
    }
}
