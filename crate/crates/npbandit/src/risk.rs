//! Exact risk accounting and theoretical reference quantities: the
//! bias/variance decomposition of the ridge value gradient, the spectral
//! risk bound, power-law rates, and water-filling information gain.

use crate::design::QueryPlan;
use crate::env::{PolicySet, RewardFunction};
use crate::error::{Error, Result};
use crate::estimate::{build_system, SystemFactor, LAMBDA_FLOOR};
use crate::spectral::LinearMap;

/// Everything a single passive run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    /// Realized excess risk of the plug-in policy.
    pub realized_delta: f64,
    /// Exact squared bias of the value gradient.
    pub bias_sq: Option<f64>,
    /// Exact variance of the value gradient.
    pub variance: Option<f64>,
    /// Spectral risk bound with unit constant, when applicable.
    pub bound_value: Option<f64>,
    /// Theoretical rate exponent `e` in `n^{-e}` for this configuration.
    pub rate_exponent: Option<f64>,
    pub n: usize,
    pub j: usize,
    pub lambda_reg: f64,
    pub seed: u64,
    pub beta: f64,
}

/// Exact mean-squared error split of the estimated value gradient.
///
/// Writing `G = M* A^{-1}`, the ridge estimate satisfies
/// `r_hat = r* - lambda A^{-1} r* + A^{-1} (1/n) sum eps_i M pi_i`, so
///
/// `E || M*(r_hat - r*) ||_pi^2 = lambda^2 ||G r*||_pi^2
///     + (tau^2/n) tr[S_pi (G M) Sigma_Q (G M)^t]`
///
/// and both terms come out of one factorization of the system matrix. The
/// ridge weight is floored exactly like the estimator floors it.
pub fn exact_risk_decomposition(
    reward: &RewardFunction,
    plan: &QueryPlan,
    map: &LinearMap,
    lambda_reg: f64,
    tau_sq: f64,
) -> Result<(f64, f64)> {
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge weight must be finite and non-negative, got {lambda_reg}"
        )));
    }
    if !(tau_sq >= 0.0 && tau_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be finite and non-negative, got {tau_sq}"
        )));
    }
    if reward.dim() != map.d_r() {
        return Err(Error::invalid(format!(
            "reward has dimension {} but the map expects {}",
            reward.dim(),
            map.d_r()
        )));
    }
    let lambda = lambda_reg.max(LAMBDA_FLOOR);
    let (factor, _) = build_system(
        plan.directions(),
        plan.repeats(),
        plan.total_queries(),
        map,
        lambda,
    )?;
    Ok(decomposition_with_factor(
        &factor, reward, plan, map, lambda, tau_sq,
    ))
}

/// Decomposition core reusing an existing factorization of the system.
pub(crate) fn decomposition_with_factor(
    factor: &SystemFactor,
    reward: &RewardFunction,
    plan: &QueryPlan,
    map: &LinearMap,
    lambda: f64,
    tau_sq: f64,
) -> (f64, f64) {
    let x = factor.solve_a(reward.coefficients());
    let g = map.adjoint_apply(&x);
    let bias_sq = lambda * lambda * map.domain().norm_sq(&g);

    let variance = if tau_sq == 0.0 {
        0.0
    } else {
        // tr[S_pi (G M) Sigma_Q (G M)^t] = sum_k w_k ||G M pi_k||_pi^2.
        let n = plan.total_queries() as f64;
        let mut acc = 0.0;
        for (k, pi) in plan.directions().iter().enumerate() {
            let u = map.apply(pi.coefficients());
            let x = factor.solve_a(&u);
            let g = map.adjoint_apply(&x);
            let w = plan.repeats()[k] as f64 / n;
            acc += w * map.domain().norm_sq(&g);
        }
        tau_sq / n * acc
    };
    (bias_sq, variance)
}

/// Spectral excess-risk bound for unit-ball optimization, with unit leading
/// constant:
///
/// `(1 + tau^2 / (n lambda^2)) * max( sup_{j <= J} lambda^2 J^2 zeta_j /
///  (zeta_j^2 + lambda^2 J^2), sup_{j > J} zeta_j )`.
///
/// An empty tail contributes zero. Preconditions (`1 <= j <= zeta.len()`,
/// positive `lambda_reg`) are programming errors and assert.
pub fn risk_bound_unit_ball(
    zeta: &[f64],
    j: usize,
    lambda_reg: f64,
    tau_sq: f64,
    n: usize,
) -> f64 {
    assert!(j >= 1 && j <= zeta.len(), "need 1 <= j <= zeta.len()");
    assert!(lambda_reg > 0.0, "ridge weight must be positive");
    assert!(n >= 1, "need at least one query");
    let lj_sq = lambda_reg * lambda_reg * (j * j) as f64;
    let head = zeta[..j]
        .iter()
        .map(|&z| lj_sq * z / (z * z + lj_sq))
        .fold(0.0, f64::max);
    let tail = zeta[j..].iter().copied().fold(0.0, f64::max);
    let prefactor = 1.0 + tau_sq / (n as f64 * lambda_reg * lambda_reg);
    prefactor * head.max(tail)
}

/// General-set version of the bound: the square root of the unit-ball
/// quantity, again with unit constant.
pub fn risk_bound_general(zeta: &[f64], j: usize, lambda_reg: f64, tau_sq: f64, n: usize) -> f64 {
    risk_bound_unit_ball(zeta, j, lambda_reg, tau_sq, n).sqrt()
}

/// Which optimization class a rate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateCase {
    /// Optimizing over the unit ball of the policy space.
    UnitBall,
    /// Optimizing over an arbitrary subset of the ball.
    General,
}

/// Rate exponent `e` such that the excess risk scales as `n^{-e}`.
pub fn rate_exponent(beta: f64, case: RateCase) -> f64 {
    match case {
        RateCase::UnitBall => beta / (beta + 2.0),
        RateCase::General => beta / (2.0 * (beta + 2.0)),
    }
}

pub(crate) fn rate_exponent_for_set(beta: f64, set: &PolicySet) -> f64 {
    let case = if set.is_unit_ball() {
        RateCase::UnitBall
    } else {
        RateCase::General
    };
    rate_exponent(beta, case)
}

/// Theoretical excess-risk scale `n^{-e}` for a power-law instance with
/// decay exponent `beta`.
pub fn power_law_rate(beta: f64, n: usize, case: RateCase) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "decay exponent must be positive and finite, got {beta}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("query budget must be at least 1"));
    }
    Ok((n as f64).powf(-rate_exponent(beta, case)))
}

/// Cumulative-regret scale `n^{-(beta-1)/(2(beta+1))}` of the kernelized
/// confidence-bound baseline. Only meaningful for `beta > 1`; flatter
/// spectra make the guarantee vacuous and are rejected.
pub fn gp_ucb_rate(beta: f64, n: usize) -> Result<f64> {
    if !beta.is_finite() || beta <= 1.0 {
        return Err(Error::invalid(format!(
            "confidence-bound rate needs a decay exponent above 1, got {beta}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok((n as f64).powf(-(beta - 1.0) / (2.0 * (beta + 1.0))))
}

/// Water-filling solution for the maximal information gain at horizon `t`.
#[derive(Debug, Clone)]
pub struct InformationGain {
    /// `gamma_T = (1/2) sum_j ln(1 + m_j lambda_j)`.
    pub gamma: f64,
    /// Optimal per-direction sample allocation, summing to `t`.
    pub allocation: Vec<f64>,
    /// The water level: on the support, `lambda_j / (1 + m_j lambda_j)`
    /// equals this value.
    pub level: f64,
}

/// Maximal information gain of a kernel spectrum over `t` rounds.
///
/// Solves `m_j = max(1/level - 1/lambda_j, 0)` with `sum m_j = t` by
/// bisection on the level, to an absolute tolerance of 1e-9 on the sum.
pub fn information_gain(eigenvalues: &[f64], t: usize) -> Result<InformationGain> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("information gain needs at least one eigenvalue"));
    }
    if t == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid(
            "information gain requires strictly positive finite eigenvalues",
        ));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("eigenvalues must be non-increasing"));
    }
    let target = t as f64;
    let lam_max = eigenvalues[0];
    let lam_min = *eigenvalues.last().expect("non-empty");
    let mass = |level: f64| -> f64 {
        eigenvalues
            .iter()
            .map(|&l| (1.0 / level - 1.0 / l).max(0.0))
            .sum()
    };
    // mass(lam_max) = 0 <= target; extend the lower bracket until it holds
    // at least `target` mass.
    let mut lo = lam_min * 1e-6;
    let mut guard = 0;
    while mass(lo) < target {
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::numerical(
                "water-filling bracket failed to capture the target mass",
            ));
        }
    }
    let mut hi = lam_max;
    let mut level = lo;
    for _ in 0..300 {
        level = 0.5 * (lo + hi);
        let m = mass(level);
        if (m - target).abs() <= 1e-9 {
            break;
        }
        if m > target {
            lo = level;
        } else {
            hi = level;
        }
    }
    if (mass(level) - target).abs() > 1e-9 {
        return Err(Error::numerical(
            "water-filling bisection did not reach the 1e-9 mass tolerance",
        ));
    }
    let allocation: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| (1.0 / level - 1.0 / l).max(0.0))
        .collect();
    let gamma = allocation
        .iter()
        .zip(eigenvalues)
        .map(|(&m, &l)| (1.0 + m * l).ln())
        .sum::<f64>()
        * 0.5;
    Ok(InformationGain {
        gamma,
        allocation,
        level,
    })
}
