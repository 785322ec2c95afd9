//! Sequential baselines: a kernelized confidence-bound learner, a generic
//! explore-then-commit wrapper around the passive pipeline, and a
//! random-query control for the designed plan.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::design::{choose_params, DesignParams};
use crate::env::{
    optimal_policy, sample_policy_on_sphere, Oracle, Policy, PolicySet,
};
use crate::error::{Error, Result};
use crate::estimate::{ridge_estimate, run_pipeline_full};
use crate::risk::RiskReport;

/// Jitter added to the posterior Gram diagonal, on top of the noise
/// variance, so that noiseless runs stay factorizable.
const GRAM_JITTER: f64 = 1e-10;

/// Stream id deriving the random-baseline generator from the oracle seed,
/// keeping it independent of the oracle's own noise stream.
const RANDOM_BASELINE_STREAM: u64 = 0x72616e64;

/// Round-by-round record of a sequential run.
///
/// `cumulative_regret[t]` sums `reference - per_round_values[s]` for
/// `s <= t`, where the reference is the best value in the comparator set, so
/// the trace is non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    per_round_values: Vec<f64>,
    cumulative_regret: Vec<f64>,
    chosen_arms: Vec<i64>,
}

impl RegretTrace {
    /// Assembles a trace from true per-round values and the comparator
    /// optimum. `chosen_arms` uses -1 for rounds that played something
    /// outside an indexed arm list. Per-round shortfalls below -1e-9
    /// indicate the reference was not actually the set optimum and are
    /// rejected; smaller negatives are rounding and clamp to zero.
    pub fn from_rounds(
        per_round_values: Vec<f64>,
        chosen_arms: Vec<i64>,
        reference: f64,
    ) -> Result<Self> {
        if per_round_values.is_empty() || per_round_values.len() != chosen_arms.len() {
            return Err(Error::invalid(
                "trace needs equally many values and arm ids, at least one round",
            ));
        }
        let mut cumulative_regret = Vec::with_capacity(per_round_values.len());
        let mut acc = 0.0;
        for &v in &per_round_values {
            if !v.is_finite() {
                return Err(Error::invalid("per-round values must be finite"));
            }
            let gap = reference - v;
            if gap < -1e-9 {
                return Err(Error::invalid(format!(
                    "round value {v} exceeds the reference optimum {reference}"
                )));
            }
            acc += gap.max(0.0);
            cumulative_regret.push(acc);
        }
        Ok(Self {
            per_round_values,
            cumulative_regret,
            chosen_arms,
        })
    }

    pub fn horizon(&self) -> usize {
        self.per_round_values.len()
    }

    pub fn per_round_values(&self) -> &[f64] {
        &self.per_round_values
    }

    pub fn cumulative_regret(&self) -> &[f64] {
        &self.cumulative_regret
    }

    pub fn chosen_arms(&self) -> &[i64] {
        &self.chosen_arms
    }

    pub fn final_regret(&self) -> f64 {
        *self
            .cumulative_regret
            .last()
            .expect("traces have at least one round")
    }
}

/// Incrementally maintained Gaussian-process posterior over a fixed arm set.
///
/// Maintains, for the sequence of observed arms, the rows `w_a = L^{-1} k_a`
/// of the whitened cross-covariance for every arm `a` plus the whitened
/// observations `u = L^{-1} y`, where `L` is the Cholesky factor of the
/// observed Gram plus `noise + jitter` on the diagonal. One observation
/// costs `O(t A)` and never refactorizes.
#[derive(Debug, Clone)]
pub(crate) struct IncrementalGp {
    k_arms: DMatrix<f64>,
    noise: f64,
    w: Vec<Vec<f64>>,
    u: Vec<f64>,
}

impl IncrementalGp {
    pub(crate) fn new(k_arms: DMatrix<f64>, noise_variance: f64) -> Self {
        let a = k_arms.nrows();
        Self {
            k_arms,
            noise: noise_variance + GRAM_JITTER,
            w: vec![Vec::new(); a],
            u: Vec::new(),
        }
    }

    /// Posterior mean and variance at arm `a`.
    pub(crate) fn mean_var(&self, a: usize) -> (f64, f64) {
        let w = &self.w[a];
        let mean = dot(w, &self.u);
        let var = (self.k_arms[(a, a)] - dot(w, w)).max(0.0);
        (mean, var)
    }

    /// Folds in one observation `y` at arm `arm`.
    pub(crate) fn observe(&mut self, arm: usize, y: f64) {
        let l = self.w[arm].clone();
        let diag_sq = self.k_arms[(arm, arm)] + self.noise - dot(&l, &l);
        // A non-positive pivot would mean the jittered Gram lost positive
        // definiteness to round-off; flooring keeps the update finite.
        let diag = diag_sq.max(1e-12).sqrt();
        for (a, w_a) in self.w.iter_mut().enumerate() {
            let next = (self.k_arms[(a, arm)] - dot(w_a, &l)) / diag;
            w_a.push(next);
        }
        let next_u = (y - dot(&self.u, &l)) / diag;
        self.u.push(next_u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernelized upper-confidence-bound run over a finite arm set.
///
/// The kernel between arms is the reward-space inner product of their images,
/// `k(pi_a, pi_b) = <M pi_a, M pi_b>_r`. Each round plays the arm maximizing
/// `mean + confidence_scale * std`, ties toward the lowest index; the final
/// recommendation is the arm with the highest posterior mean. Returns the
/// recommendation and the true-regret trace against the best arm.
pub fn gp_ucb_run(
    oracle: &mut Oracle,
    arms: &[Policy],
    horizon: usize,
    confidence_scale: f64,
) -> Result<(Policy, RegretTrace)> {
    if arms.is_empty() {
        return Err(Error::invalid("confidence-bound runs need at least one arm"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if !(confidence_scale > 0.0 && confidence_scale.is_finite()) {
        return Err(Error::invalid(format!(
            "confidence scale must be positive and finite, got {confidence_scale}"
        )));
    }
    let map = oracle.map();
    let a_count = arms.len();
    let mut images = Vec::with_capacity(a_count);
    for arm in arms {
        if arm.dim() != map.d_pi() {
            return Err(Error::invalid(format!(
                "arm has dimension {} but the map expects {}",
                arm.dim(),
                map.d_pi()
            )));
        }
        images.push(map.apply(arm.coefficients()));
    }
    let k_arms = DMatrix::from_fn(a_count, a_count, |i, j| {
        map.codomain().inner(&images[i], &images[j])
    });
    let true_values: Vec<f64> = arms
        .iter()
        .map(|arm| oracle.value(arm))
        .collect::<Result<_>>()?;
    let reference = true_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut gp = IncrementalGp::new(k_arms, oracle.tau_sq());
    let mut chosen_arms = Vec::with_capacity(horizon);
    let mut round_values = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..a_count {
            let (mean, var) = gp.mean_var(a);
            let score = mean + confidence_scale * var.sqrt();
            if score > best_score {
                best_score = score;
                best = a;
            }
        }
        let y = oracle.query(&arms[best])?;
        gp.observe(best, y);
        chosen_arms.push(best as i64);
        round_values.push(true_values[best]);
    }

    let mut rec = 0;
    let mut rec_mean = f64::NEG_INFINITY;
    for a in 0..a_count {
        let (mean, _) = gp.mean_var(a);
        if mean > rec_mean {
            rec_mean = mean;
            rec = a;
        }
    }
    let trace = RegretTrace::from_rounds(round_values, chosen_arms, reference)?;
    Ok((arms[rec].clone(), trace))
}

/// Explore-then-commit: spend `ceil(horizon^{1/(1+alpha)})` rounds on an
/// exploration routine, then play its recommendation for the rest.
///
/// `explore` receives the oracle, the comparator set, and the exploration
/// budget; it returns the committed policy and the exact sequence of
/// policies it queried, which must all lie in the comparator set so that
/// regret against the set optimum is well defined.
pub fn explore_then_commit<F>(
    oracle: &mut Oracle,
    set: &PolicySet,
    horizon: usize,
    alpha: f64,
    explore: F,
) -> Result<(Policy, RegretTrace)>
where
    F: FnOnce(&mut Oracle, &PolicySet, usize) -> Result<(Policy, Vec<Policy>)>,
{
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "commit exponent must be positive and finite, got {alpha}"
        )));
    }
    let n0 = ((horizon as f64).powf(1.0 / (1.0 + alpha)).ceil() as usize).min(horizon);
    let star = optimal_policy(oracle.reward(), set, oracle.map())?;
    let reference = oracle.value(&star)?;

    let (committed, explored) = explore(oracle, set, n0)?;
    if explored.len() != n0 {
        return Err(Error::invalid(format!(
            "exploration returned {} queries but was budgeted {n0}",
            explored.len()
        )));
    }
    let arm_index = |pi: &Policy| -> i64 {
        set.candidates()
            .and_then(|cands| cands.iter().position(|c| c == pi))
            .map_or(-1, |i| i as i64)
    };
    let mut values = Vec::with_capacity(horizon);
    let mut arms = Vec::with_capacity(horizon);
    for pi in &explored {
        values.push(oracle.value(pi)?);
        arms.push(arm_index(pi));
    }
    let committed_value = oracle.value(&committed)?;
    let committed_arm = arm_index(&committed);
    for _ in n0..horizon {
        values.push(committed_value);
        arms.push(committed_arm);
    }
    let trace = RegretTrace::from_rounds(values, arms, reference)?;
    Ok((committed, trace))
}

/// Exploration routine running the passive pipeline with the
/// budget-indexed schedule for decay exponent `beta`. Plug this into
/// [`explore_then_commit`].
pub fn passive_explorer(
    beta: f64,
) -> impl FnOnce(&mut Oracle, &PolicySet, usize) -> Result<(Policy, Vec<Policy>)> {
    move |oracle, set, n| {
        let params = choose_params(n, beta)?;
        let (policy, _, plan) = run_pipeline_full(oracle, set, n, &params)?;
        let queried: Vec<Policy> = plan.iter_queries().map(|(_, pi)| pi.clone()).collect();
        Ok((policy, queried))
    }
}

/// Control run replacing the designed plan with undirected queries: uniform
/// sphere policies on the unit ball, or uniformly drawn candidates on a
/// finite set. Estimation, plug-in, and reporting mirror the pipeline.
///
/// Randomness derives from the oracle seed on a dedicated stream, so the
/// control is reproducible alongside the designed run without disturbing
/// the oracle's noise sequence.
pub fn random_query_baseline(
    oracle: &mut Oracle,
    set: &PolicySet,
    n: usize,
    params: &DesignParams,
) -> Result<(Policy, RiskReport)> {
    if n == 0 {
        return Err(Error::invalid("query budget must be at least 1"));
    }
    let map = oracle.map().clone();
    let mut rng = ChaCha12Rng::seed_from_u64(oracle.seed());
    rng.set_stream(RANDOM_BASELINE_STREAM);
    let mut queries = Vec::with_capacity(n);
    for _ in 0..n {
        let pi = match set.candidates() {
            None => sample_policy_on_sphere(map.domain(), &mut rng),
            Some(cands) => cands[rng.gen_range(0..cands.len())].clone(),
        };
        let y = oracle.query(&pi)?;
        queries.push((pi, y));
    }
    let estimate = ridge_estimate(&queries, &map, params.lambda_reg)?;
    let policy = crate::estimate::plugin_policy(&estimate, set, &map)?;
    let delta = crate::env::excess_risk(&policy, oracle.reward(), set, &map)?;
    let plan = crate::design::QueryPlan::new(
        queries.iter().map(|(pi, _)| pi.clone()).collect(),
        vec![1; n],
    )?;
    let (bias_sq, variance) = crate::risk::exact_risk_decomposition(
        oracle.reward(),
        &plan,
        &map,
        params.lambda_reg,
        oracle.tau_sq(),
    )?;
    Ok((
        policy,
        RiskReport {
            realized_delta: delta,
            bias_sq: Some(bias_sq),
            variance: Some(variance),
            bound_value: None,
            rate_exponent: None,
            n,
            j: n,
            lambda_reg: estimate.lambda_reg(),
            seed: oracle.seed(),
            beta: params.beta,
        },
    ))
}
