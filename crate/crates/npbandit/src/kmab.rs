//! Kernel multi-armed bandits on an epsilon-cover of the unit ball.
//!
//! A unit-diagonal distance kernel induces two nested Hilbert spaces on the
//! cover values: a reward space with Gram metric `K^{-1}` and a query space
//! with metric `K^{-2}`, connected by the identity map. Eigendecomposing the
//! jittered Gram `K = U diag(lambda) U^T` aligns both to the coefficient
//! convention used by the rest of the crate: `mu_pi = lambda^2`,
//! `mu_r = lambda`, composite eigenvalues `zeta_j = lambda_j`. The cover
//! columns `k_i` become exactly orthonormal query-space arms, and the
//! bilinear reward of arm `i` under the embedded function equals the
//! function value at cover point `i` with no approximation, so excess risk
//! on the cover is an ordinary function-value gap.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::design::{choose_params, fit_decay_exponent, design_queries, DesignParams};
use crate::env::{excess_risk, optimal_policy, Oracle, Policy, PolicySet, RewardFunction};
use crate::error::{Error, Result};
use crate::estimate::{ridge_from_groups, LAMBDA_FLOOR};
use crate::risk::{decomposition_with_factor, rate_exponent, RateCase, RiskReport};
use crate::spectral::{whiten, LinearMap, Spectrum};

/// Modified Bessel function of the second kind at 1, orders 1/2, 3/2, 5/2.
/// These feed the smoothness-dependent prefactor of the Lipschitz bound.
const BESSEL_K_HALF_AT_ONE: f64 = 0.461068504447894558;
const BESSEL_K_THREE_HALVES_AT_ONE: f64 = 0.922137008895789117;
const BESSEL_K_FIVE_HALVES_AT_ONE: f64 = 3.227479531135261909;

const LIPSCHITZ_GRID: usize = 10_000;

const COVER_BATCH: usize = 256;
const COVER_PROBES: usize = 1000;
const COVER_MAX_ROUNDS: usize = 512;
const DEFAULT_MAX_POINTS: usize = 4096;

const COVER_STREAM: u64 = 0x636f_7665;
const REFINE_STREAM: u64 = 0x7266_6e65;
const SYNTH_STREAM: u64 = 0x7379_6e74;
const PROBE_STREAM: u64 = 0x7072_6f62;

/// Relative floor below which Gram eigenvalues are treated as jitter noise
/// and excluded from the decay fit.
const DECAY_FIT_FLOOR: f64 = 1e-8;

/// Supported kernel families; the Matern variants are the half-integer
/// smoothness orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Matern32,
    Matern52,
    Matern72,
    Rbf,
}

impl KernelFamily {
    /// Smoothness order `nu`, `None` for the squared exponential.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            KernelFamily::Matern32 => Some(1.5),
            KernelFamily::Matern52 => Some(2.5),
            KernelFamily::Matern72 => Some(3.5),
            KernelFamily::Rbf => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern72 => "matern72",
            KernelFamily::Rbf => "rbf",
        }
    }
}

/// A kernel family together with its length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    length_scale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "length scale must be positive and finite, got {length_scale}"
            )));
        }
        Ok(Self { family, length_scale })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Parses a family name at unit length scale, the form the CLI accepts.
    fn from_str(s: &str) -> Result<Self> {
        let family = match s {
            "matern32" => KernelFamily::Matern32,
            "matern52" => KernelFamily::Matern52,
            "matern72" => KernelFamily::Matern72,
            "rbf" => KernelFamily::Rbf,
            other => {
                return Err(Error::invalid(format!(
                    "unknown kernel '{other}'; expected matern32, matern52, matern72, or rbf"
                )))
            }
        };
        KernelSpec::new(family, 1.0)
    }
}

/// Kernel value at Euclidean distance `r`, normalized so `k(0) = 1`.
pub fn kernel_eval(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel distance must be non-negative and finite, got {r}"
        )));
    }
    let s = r / spec.length_scale;
    Ok(match spec.family {
        KernelFamily::Matern32 => {
            let t = 3f64.sqrt() * s;
            (1.0 + t) * (-t).exp()
        }
        KernelFamily::Matern52 => {
            let t = 5f64.sqrt() * s;
            (1.0 + t + t * t / 3.0) * (-t).exp()
        }
        KernelFamily::Matern72 => {
            let t = 7f64.sqrt() * s;
            (1.0 + t + 2.0 * t * t / 5.0 + t * t * t / 15.0) * (-t).exp()
        }
        KernelFamily::Rbf => (-s * s / 2.0).exp(),
    })
}

fn matern_prefactor(family: KernelFamily) -> Option<(f64, f64, f64)> {
    // (nu, K_{nu-1}(1), Gamma(nu)).
    let root_pi = std::f64::consts::PI.sqrt();
    match family {
        KernelFamily::Matern32 => Some((1.5, BESSEL_K_HALF_AT_ONE, root_pi / 2.0)),
        KernelFamily::Matern52 => Some((2.5, BESSEL_K_THREE_HALVES_AT_ONE, 3.0 * root_pi / 4.0)),
        KernelFamily::Matern72 => Some((3.5, BESSEL_K_FIVE_HALVES_AT_ONE, 15.0 * root_pi / 8.0)),
        KernelFamily::Rbf => None,
    }
}

pub(crate) fn lipschitz_on_grid(family: KernelFamily, grid: usize) -> Option<f64> {
    let (nu, bessel, gamma) = matern_prefactor(family)?;
    let scale = std::f64::consts::E * 2f64.powf(2.0 - nu) * nu * bessel / gamma;
    let decay = (2.0 * nu).sqrt();
    let mut best = 0.0f64;
    for i in 1..=grid {
        let r = i as f64 / (grid + 1) as f64;
        best = best.max(scale * r * (-decay * r).exp());
    }
    Some(best)
}

/// Lipschitz constant of the associated canonical feature map, from the
/// spectral-moment bound for Matern kernels.
///
/// Evaluates `sup_{r in (0,1)} e 2^{2-nu} nu K_{nu-1}(1) / Gamma(nu) *
/// r exp(-sqrt(2 nu) r)` on a dense grid and rescales by the length scale.
/// The bound's derivation needs `nu > 3/2`; `nu = 3/2` sits on the boundary
/// and is accepted with the same formula. At `nu = 7/2` the constant dips
/// below kernel secants near `r = 1.3`, so treat it as a local (small
/// distance) constant there. The squared exponential has no finite constant
/// of this form and is rejected.
pub fn lipschitz_constant(spec: &KernelSpec) -> Result<f64> {
    match lipschitz_on_grid(spec.family, LIPSCHITZ_GRID) {
        Some(sup) => Ok(sup / spec.length_scale),
        None => Err(Error::invalid(format!(
            "no closed-form Lipschitz constant for the {} kernel; use a Matern family",
            spec.family.label()
        ))),
    }
}

/// An epsilon-cover of the Euclidean unit ball, produced by greedy packing
/// and certified by a random probe audit.
#[derive(Debug, Clone)]
pub struct Cover {
    points: Vec<DVector<f64>>,
    epsilon: f64,
    dimension: usize,
    seed: u64,
}

impl Cover {
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Distance from `x` to the nearest cover point.
    pub fn min_distance_to(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| (p - x).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

fn sample_ball(d: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let dir = DVector::from_iterator(d, (0..d).map(|_| normal.sample(rng)));
        let norm = dir.norm();
        if norm > 1e-12 {
            let radius: f64 = rng.gen::<f64>().powf(1.0 / d as f64);
            return dir * (radius / norm);
        }
    }
}

fn check_cover_args(epsilon: f64, d: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::invalid(format!(
            "cover radius must lie in (0, 2], got {epsilon}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("cover dimension must be at least 1"));
    }
    Ok(())
}

/// Grows `points` until a full round of probes lands within `epsilon`.
/// Probes that fall outside are themselves valid packing points and are
/// recycled into the cover, which is what makes termination fast.
fn grow_cover(
    mut points: Vec<DVector<f64>>,
    epsilon: f64,
    d: usize,
    rng: &mut ChaCha12Rng,
    max_points: usize,
) -> Result<Vec<DVector<f64>>> {
    let far = |points: &[DVector<f64>], x: &DVector<f64>| {
        points.iter().all(|p| (p - x).norm() > epsilon)
    };
    for _ in 0..COVER_MAX_ROUNDS {
        for _ in 0..COVER_BATCH {
            let x = sample_ball(d, rng);
            if far(&points, &x) {
                points.push(x);
                if points.len() > max_points {
                    return Err(Error::CoverageFailure(format!(
                        "cover exceeded the {max_points}-point budget at radius {epsilon} in dimension {d}"
                    )));
                }
            }
        }
        let mut failures = Vec::new();
        for _ in 0..COVER_PROBES {
            let p = sample_ball(d, rng);
            if far(&points, &p) {
                failures.push(p);
            }
        }
        if failures.is_empty() && !points.is_empty() {
            return Ok(points);
        }
        for p in failures {
            if far(&points, &p) {
                points.push(p);
                if points.len() > max_points {
                    return Err(Error::CoverageFailure(format!(
                        "cover exceeded the {max_points}-point budget at radius {epsilon} in dimension {d}"
                    )));
                }
            }
        }
    }
    Err(Error::CoverageFailure(format!(
        "cover audit did not stabilize within {COVER_MAX_ROUNDS} rounds at radius {epsilon} in dimension {d}"
    )))
}

/// Builds an epsilon-cover of the unit ball with the default point budget.
pub fn build_cover(epsilon: f64, d: usize, seed: u64) -> Result<Cover> {
    build_cover_with_budget(epsilon, d, seed, DEFAULT_MAX_POINTS)
}

/// [`build_cover`] with an explicit point budget; exceeding it is a
/// coverage failure rather than a silent truncation.
pub fn build_cover_with_budget(
    epsilon: f64,
    d: usize,
    seed: u64,
    max_points: usize,
) -> Result<Cover> {
    check_cover_args(epsilon, d)?;
    if max_points == 0 {
        return Err(Error::invalid("cover point budget must be at least 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(COVER_STREAM);
    let points = grow_cover(Vec::new(), epsilon, d, &mut rng, max_points)?;
    Ok(Cover {
        points,
        epsilon,
        dimension: d,
        seed,
    })
}

/// Tightens an existing cover to a smaller radius, keeping every base point.
/// The result is a superset of the base, so maxima over the refined cover
/// dominate maxima over the base by construction.
pub fn refine_cover(base: &Cover, epsilon: f64, seed: u64) -> Result<Cover> {
    check_cover_args(epsilon, base.dimension)?;
    if epsilon > base.epsilon {
        return Err(Error::invalid(format!(
            "refinement radius {epsilon} exceeds the base radius {}",
            base.epsilon
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(REFINE_STREAM);
    let points = grow_cover(
        base.points.clone(),
        epsilon,
        base.dimension,
        &mut rng,
        DEFAULT_MAX_POINTS,
    )?;
    Ok(Cover {
        points,
        epsilon,
        dimension: base.dimension,
        seed,
    })
}

/// Probe locations for audits and suboptimality checks: a dense symmetric
/// grid on `[-1, 1]` in one dimension, seeded ball draws otherwise.
pub fn probe_points(d: usize, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if d == 0 || count == 0 {
        return Err(Error::invalid("probe sets need d >= 1 and count >= 1"));
    }
    if d == 1 {
        if count == 1 {
            return Ok(vec![DVector::from_vec(vec![0.0])]);
        }
        let step = 2.0 / (count - 1) as f64;
        return Ok((0..count)
            .map(|i| DVector::from_vec(vec![-1.0 + step * i as f64]))
            .collect());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(PROBE_STREAM);
    Ok((0..count).map(|_| sample_ball(d, &mut rng)).collect())
}

pub(crate) struct JitteredKernel {
    pub(crate) matrix: DMatrix<f64>,
    pub(crate) jitter: f64,
    /// Sorted descending; strictly positive by construction.
    pub(crate) eigenvalues: Vec<f64>,
    /// Columns follow the eigenvalue order.
    pub(crate) basis: DMatrix<f64>,
}

/// Gram matrix of the cover under `spec`, nudged to positive definiteness.
/// The jitter starts at `1e-10 tr(K)/N` and doubles at most six times; a
/// spectrum that stays non-positive past that is a numerical failure.
pub(crate) fn jittered_kernel(points: &[DVector<f64>], spec: &KernelSpec) -> Result<JitteredKernel> {
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("kernel matrix needs at least one point"));
    }
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_eval(spec, (&points[i] - &points[j]).norm())?;
            raw[(i, j)] = v;
            raw[(j, i)] = v;
        }
    }
    let mut jitter = 1e-10 * raw.trace() / n as f64;
    for _ in 0..7 {
        let mut matrix = raw.clone();
        for i in 0..n {
            matrix[(i, i)] += jitter;
        }
        let eig = matrix
            .clone()
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or_else(|| {
                Error::numerical(format!("symmetric eigensolver did not converge on the {n}x{n} Gram"))
            })?;
        let mut pairs: Vec<(usize, f64)> = eig.eigenvalues.iter().copied().enumerate().collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        if pairs.last().expect("non-empty").1 > 0.0 {
            let eigenvalues: Vec<f64> = pairs.iter().map(|&(_, lam)| lam).collect();
            let mut basis = DMatrix::zeros(n, n);
            for (k, &(orig, _)) in pairs.iter().enumerate() {
                basis.set_column(k, &eig.eigenvectors.column(orig));
            }
            return Ok(JitteredKernel {
                matrix,
                jitter,
                eigenvalues,
                basis,
            });
        }
        jitter *= 2.0;
    }
    Err(Error::numerical(format!(
        "Gram matrix stayed indefinite after six jitter doublings (final jitter {jitter:e})"
    )))
}

/// Squared interpolation norm of `values` over `points`: the norm of the
/// minimum-norm kernel interpolant, `v^T K^{-1} v` with the jittered Gram.
/// Monotone in the point set: adding interpolation constraints can only
/// raise it.
pub fn interpolation_norm_sq(
    values: &[f64],
    points: &[DVector<f64>],
    spec: &KernelSpec,
) -> Result<f64> {
    if values.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} values against {} points",
            values.len(),
            points.len()
        )));
    }
    let jk = jittered_kernel(points, spec)?;
    let v = DVector::from_column_slice(values);
    let aligned = jk.basis.tr_mul(&v);
    Ok(aligned
        .iter()
        .zip(&jk.eigenvalues)
        .map(|(c, lam)| c * c / lam)
        .sum())
}

/// A cover problem translated into coefficient form.
///
/// `policy_embeddings` hold the raw Gram columns; their aligned images are
/// exactly orthonormal in the query metric, so the arm set lies on the unit
/// sphere of `H_pi` and plug-in optimization over it is well posed.
#[derive(Debug, Clone)]
pub struct EmbeddedInstance {
    kernel_matrix: DMatrix<f64>,
    reward_embedding: RewardFunction,
    policy_embeddings: Vec<Policy>,
    jitter: f64,
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
}

impl EmbeddedInstance {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The jittered Gram matrix.
    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.kernel_matrix
    }

    /// Cover values of the embedded function, in raw coordinates.
    pub fn reward_embedding(&self) -> &RewardFunction {
        &self.reward_embedding
    }

    /// Raw arm vectors, one Gram column per cover point.
    pub fn policy_embeddings(&self) -> &[Policy] {
        &self.policy_embeddings
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Gram eigenvalues, descending; these are the composite eigenvalues
    /// `zeta_j` of the aligned instance.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Identity map between the aligned spaces, `mu_pi = lambda^2` over
    /// `mu_r = lambda`.
    pub fn aligned_map(&self) -> Result<LinearMap> {
        let pi = Spectrum::new(self.eigenvalues.iter().map(|l| l * l).collect())?;
        let r = Spectrum::new(self.eigenvalues.clone())?;
        LinearMap::identity(pi, r)
    }

    /// The embedded function in aligned coordinates; unit `H_r` norm when
    /// it came from [`synth_function`].
    pub fn aligned_reward(&self) -> RewardFunction {
        RewardFunction::new(self.basis.tr_mul(self.reward_embedding.coefficients()))
    }

    /// Aligned arm coefficients, one policy per cover point.
    pub fn aligned_arms(&self) -> Vec<Policy> {
        let aligned = self.basis.tr_mul(&self.kernel_matrix);
        (0..aligned.ncols())
            .map(|i| Policy::new(aligned.column(i).into_owned()))
            .collect()
    }

    /// Reward-space inner product of raw vectors, `a^T K^{-1} b`.
    pub fn inner_r(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (ta, tb) = (self.basis.tr_mul(a), self.basis.tr_mul(b));
        ta.iter()
            .zip(tb.iter())
            .zip(&self.eigenvalues)
            .map(|((x, y), lam)| x * y / lam)
            .sum()
    }

    /// Query-space inner product of raw vectors, `a^T K^{-2} b`.
    pub fn inner_pi(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (ta, tb) = (self.basis.tr_mul(a), self.basis.tr_mul(b));
        ta.iter()
            .zip(tb.iter())
            .zip(&self.eigenvalues)
            .map(|((x, y), lam)| x * y / (lam * lam))
            .sum()
    }
}

/// Embeds cover values of a function into the coefficient framework.
pub fn embed_problem(values: &[f64], cover: &Cover, spec: &KernelSpec) -> Result<EmbeddedInstance> {
    if values.len() != cover.len() {
        return Err(Error::invalid(format!(
            "{} values against a {}-point cover",
            values.len(),
            cover.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cover values must be finite"));
    }
    let jk = jittered_kernel(cover.points(), spec)?;
    let policy_embeddings = (0..cover.len())
        .map(|i| Policy::new(jk.matrix.column(i).into_owned()))
        .collect();
    Ok(EmbeddedInstance {
        kernel_matrix: jk.matrix,
        reward_embedding: RewardFunction::new(DVector::from_column_slice(values)),
        policy_embeddings,
        jitter: jk.jitter,
        eigenvalues: jk.eigenvalues,
        basis: jk.basis,
    })
}

/// A random function in the kernel's native space, `f = sum_i alpha_i
/// k(., x_i)`, scaled to unit interpolation norm on its cover.
///
/// The cover values stored here use the jittered Gram, so the embedded norm
/// is exactly one; off-cover evaluation uses the raw kernel, under which the
/// function's native norm is at most one.
#[derive(Debug, Clone)]
pub struct SynthFunction {
    spec: KernelSpec,
    points: Vec<DVector<f64>>,
    alpha: DVector<f64>,
    values: Vec<f64>,
}

impl SynthFunction {
    /// Values at the cover points the function was synthesized on.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Pointwise evaluation anywhere in the ball.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.points[0].len() {
            return Err(Error::invalid(format!(
                "point has dimension {} but the function lives in dimension {}",
                x.len(),
                self.points[0].len()
            )));
        }
        let mut acc = 0.0;
        for (a, p) in self.alpha.iter().zip(&self.points) {
            acc += a * kernel_eval(&self.spec, (p - x).norm())?;
        }
        Ok(acc)
    }
}

/// Draws a unit-norm member of the kernel space supported on the cover.
pub fn synth_function(cover: &Cover, spec: &KernelSpec, seed: u64) -> Result<SynthFunction> {
    let jk = jittered_kernel(cover.points(), spec)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(SYNTH_STREAM);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let alpha = DVector::from_iterator(cover.len(), (0..cover.len()).map(|_| normal.sample(&mut rng)));
    let values = &jk.matrix * &alpha;
    // alpha^T K alpha, the squared norm of the interpolant.
    let norm_sq = alpha.dot(&values);
    if norm_sq <= 1e-300 {
        return Err(Error::DegenerateInstance(
            "synthesized coefficients have vanishing kernel norm".into(),
        ));
    }
    let scale = norm_sq.sqrt().recip();
    Ok(SynthFunction {
        spec: *spec,
        points: cover.points().to_vec(),
        alpha: alpha * scale,
        values: (values * scale).iter().copied().collect(),
    })
}

/// Gap between the best probe value and the best cover value of `f`,
/// checked against the covering bound `sqrt(2 L_K epsilon)`.
///
/// Both maxima evaluate `f` pointwise, so a probe set containing the cover
/// can only widen the gap and refining the cover can only shrink it. A gap
/// beyond the bound (plus `1e-6` slack) is reported as a lemma violation.
pub fn cover_suboptimality_check(
    cover: &Cover,
    f: &SynthFunction,
    l_k: f64,
    probes: &[DVector<f64>],
) -> Result<f64> {
    if !(l_k > 0.0 && l_k.is_finite()) {
        return Err(Error::invalid(format!(
            "Lipschitz constant must be positive and finite, got {l_k}"
        )));
    }
    if probes.is_empty() {
        return Err(Error::invalid("suboptimality check needs at least one probe"));
    }
    let best_over = |points: &[DVector<f64>]| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for p in points {
            best = best.max(f.eval(p)?);
        }
        Ok(best)
    };
    let gap = best_over(probes)? - best_over(cover.points())?;
    let bound = (2.0 * l_k * cover.epsilon()).sqrt() + 1e-6;
    if gap > bound {
        return Err(Error::LemmaViolation {
            observed: gap,
            bound,
        });
    }
    Ok(gap)
}

/// One designed-plan run on a synthesized cover problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KmabReport {
    pub risk: RiskReport,
    pub cover_size: usize,
    /// Index of the recommended cover point.
    pub chosen_arm: usize,
}

/// End-to-end kernel bandit run: cover, synthesize, embed, design, estimate,
/// and recommend an arm.
///
/// The decay exponent is fitted from the Gram eigenvalues above the jitter
/// floor rather than assumed. With a noiseless oracle the schedule
/// short-circuits to every direction at the minimal ridge weight, which is
/// the exact-recovery regime; otherwise `choose_params` runs on the fitted
/// exponent unless `params` overrides it. The reported excess risk compares
/// the recommendation against the best cover point.
pub fn kmab_experiment(
    spec: &KernelSpec,
    d: usize,
    epsilon: f64,
    n: usize,
    tau_sq: f64,
    seed: u64,
    params: Option<DesignParams>,
) -> Result<KmabReport> {
    if n == 0 {
        return Err(Error::invalid("query budget must be at least 1"));
    }
    let cover = build_cover(epsilon, d, seed)?;
    let f = synth_function(&cover, spec, seed)?;
    let instance = embed_problem(f.values(), &cover, spec)?;

    let lambdas = instance.eigenvalues();
    let head: Vec<f64> = lambdas
        .iter()
        .copied()
        .take_while(|&l| l >= lambdas[0] * DECAY_FIT_FLOOR)
        .collect();
    let beta_hat = if head.len() >= 3 {
        fit_decay_exponent(&head)?
    } else {
        1.0
    };

    let params = match params {
        Some(p) => p,
        None if tau_sq == 0.0 => DesignParams {
            j: instance.len(),
            lambda_reg: LAMBDA_FLOOR,
            beta: beta_hat,
        },
        None => choose_params(n, beta_hat)?,
    };

    let map = instance.aligned_map()?;
    let mut oracle = Oracle::new(instance.aligned_reward(), map.clone(), tau_sq, seed)?;
    let decomp = whiten(&map)?;
    let j_eff = params.j.max(1).min(n).min(map.d_pi());
    let plan = design_queries(n, &decomp, map.domain(), j_eff)?;
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

    let arms = instance.aligned_arms();
    let set = PolicySet::finite(arms.clone(), map.domain().clone())?;
    let chosen = optimal_policy(estimate.reward_hat(), &set, &map)?;
    let chosen_arm = arms
        .iter()
        .position(|a| *a == chosen)
        .expect("recommendation is a member of the arm set");
    let delta = excess_risk(&chosen, oracle.reward(), &set, &map)?;
    let (bias_sq, variance) = decomposition_with_factor(
        &estimate.factor,
        oracle.reward(),
        &plan,
        &map,
        estimate.lambda_reg(),
        tau_sq,
    );
    Ok(KmabReport {
        risk: RiskReport {
            realized_delta: delta,
            bias_sq: Some(bias_sq),
            variance: Some(variance),
            bound_value: None,
            rate_exponent: Some(rate_exponent(params.beta, RateCase::General)),
            n,
            j: j_eff,
            lambda_reg: estimate.lambda_reg(),
            seed,
            beta: params.beta,
        },
        cover_size: cover.len(),
        chosen_arm,
    })
}
