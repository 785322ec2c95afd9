//! Truncated RKHS spectra, the evaluation map `M`, and its whitened form.
//!
//! Both the policy space and the reward space are represented in coefficient
//! form: a function is a vector of coefficients in the eigenbasis of its
//! space, and the space itself is summarized by its eigenvalue sequence
//! `mu_1 >= mu_2 >= ... > 0`. The inner product in a space with eigenvalues
//! `mu_j` is `<a, b> = sum_j a_j b_j / mu_j`, so the scaling matrix
//! `S = diag(1/mu_j)` is a derived view of the spectrum, never stored.
//!
//! The map `M` sends policy coefficients to reward-space coefficients. Its
//! whitened form `Mt = S_r^{1/2} M S_pi^{-1/2}` has the same operator norm as
//! `M` viewed between the two Hilbert geometries, and the eigenvalues
//! `zeta_j` of `Mt' Mt` are the composite quantities that govern every risk
//! bound in this library. For a diagonal map with entries `sigma_j`,
//! `zeta_j = sigma_j^2 mu_{pi,j} / mu_{r,j}` exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below `-ZETA_CLAMP` from the symmetric eigensolver are treated
/// as genuine failures; values in `[-ZETA_CLAMP, 0)` are round-off and clamp to 0.
const ZETA_CLAMP: f64 = 1e-12;

/// Truncated eigenvalue sequence of an RKHS, positive and non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    decay_exponent: Option<f64>,
}

impl Spectrum {
    /// Builds a spectrum from explicit eigenvalues.
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum must have at least one eigenvalue"));
        }
        for (j, &mu) in eigenvalues.iter().enumerate() {
            if !mu.is_finite() || mu <= 0.0 {
                return Err(Error::invalid(format!(
                    "eigenvalue {} at position {j} must be finite and positive",
                    mu
                )));
            }
            if j > 0 && mu > eigenvalues[j - 1] {
                return Err(Error::invalid(format!(
                    "eigenvalues must be non-increasing; position {j} rises to {mu}"
                )));
            }
        }
        Ok(Spectrum {
            eigenvalues,
            decay_exponent: None,
        })
    }

    /// Power-law spectrum `mu_j = j^(-beta)` for `j = 1..=dim`.
    pub fn power_law(beta: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("spectrum dimension must be at least 1"));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!(
                "power-law decay exponent must be positive, got {beta}"
            )));
        }
        let eigenvalues = (1..=dim).map(|j| (j as f64).powf(-beta)).collect();
        Ok(Spectrum {
            eigenvalues,
            decay_exponent: Some(beta),
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalue `mu_j` with zero-based index.
    pub fn mu(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    pub fn decay_exponent(&self) -> Option<f64> {
        self.decay_exponent
    }

    /// Entries of the derived scaling matrix `S = diag(1/mu_j)`.
    pub fn inverse_eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(|&mu| 1.0 / mu)
    }

    /// Inner product `sum_j a_j b_j / mu_j` of this space.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        assert_eq!(a.len(), self.dim(), "vector length must match spectrum dim");
        assert_eq!(b.len(), self.dim(), "vector length must match spectrum dim");
        a.iter()
            .zip(b.iter())
            .zip(&self.eigenvalues)
            .map(|((&x, &y), &mu)| x * y / mu)
            .sum()
    }

    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v)
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.norm_sq(v).sqrt()
    }
}

/// The known linear map from policy coefficients to reward coefficients.
///
/// Carries both spectra so that callers can form adjoints and whitened views
/// without threading the spaces separately.
#[derive(Debug, Clone)]
pub struct LinearMap {
    kind: MapKind,
    domain: Spectrum,
    codomain: Spectrum,
}

#[derive(Debug, Clone)]
enum MapKind {
    /// Entries `sigma_j` on the diagonal; requires d_r = d_pi.
    Diagonal(DVector<f64>),
    /// Dense d_r x d_pi matrix.
    Dense(DMatrix<f64>),
}

impl LinearMap {
    /// Identity map; requires matching dimensions.
    pub fn identity(domain: Spectrum, codomain: Spectrum) -> Result<Self> {
        let d = domain.dim();
        Self::diagonal(DVector::repeat(d, 1.0), domain, codomain)
    }

    pub fn diagonal(sigma: DVector<f64>, domain: Spectrum, codomain: Spectrum) -> Result<Self> {
        if domain.dim() != codomain.dim() {
            return Err(Error::invalid(format!(
                "diagonal map requires d_r = d_pi, got {} and {}",
                codomain.dim(),
                domain.dim()
            )));
        }
        if sigma.len() != domain.dim() {
            return Err(Error::invalid("diagonal entries must match dimension"));
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("map entries must be finite"));
        }
        Ok(LinearMap {
            kind: MapKind::Diagonal(sigma),
            domain,
            codomain,
        })
    }

    pub fn dense(entries: DMatrix<f64>, domain: Spectrum, codomain: Spectrum) -> Result<Self> {
        if entries.nrows() != codomain.dim() || entries.ncols() != domain.dim() {
            return Err(Error::invalid(format!(
                "dense map must be d_r x d_pi = {} x {}, got {} x {}",
                codomain.dim(),
                domain.dim(),
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("map entries must be finite"));
        }
        Ok(LinearMap {
            kind: MapKind::Dense(entries),
            domain,
            codomain,
        })
    }

    pub fn domain(&self) -> &Spectrum {
        &self.domain
    }

    pub fn codomain(&self) -> &Spectrum {
        &self.codomain
    }

    pub fn d_pi(&self) -> usize {
        self.domain.dim()
    }

    pub fn d_r(&self) -> usize {
        self.codomain.dim()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.kind, MapKind::Diagonal(_))
    }

    /// Diagonal entries if this map is diagonal.
    pub fn diagonal_entries(&self) -> Option<&DVector<f64>> {
        match &self.kind {
            MapKind::Diagonal(sigma) => Some(sigma),
            MapKind::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            MapKind::Diagonal(sigma) => DMatrix::from_diagonal(sigma),
            MapKind::Dense(m) => m.clone(),
        }
    }

    /// `M pi`: policy coefficients to reward coefficients.
    pub fn apply(&self, pi: &DVector<f64>) -> DVector<f64> {
        assert_eq!(pi.len(), self.d_pi(), "policy length must match d_pi");
        match &self.kind {
            MapKind::Diagonal(sigma) => sigma.component_mul(pi),
            MapKind::Dense(m) => m * pi,
        }
    }

    /// `M^t v` without forming the adjoint.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.d_r(), "vector length must match d_r");
        match &self.kind {
            MapKind::Diagonal(sigma) => sigma.component_mul(v),
            MapKind::Dense(m) => m.tr_mul(v),
        }
    }

    /// `M* r = S_pi^{-1} M^t S_r r`, the Hermitian adjoint applied to reward
    /// coefficients. Satisfies `<r, M pi>_r = <M* r, pi>_pi`.
    pub fn adjoint_apply(&self, r: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_iterator(
            self.d_r(),
            r.iter()
                .zip(self.codomain.eigenvalues())
                .map(|(&x, &mu)| x / mu),
        );
        let back = self.apply_transpose(&scaled);
        DVector::from_iterator(
            self.d_pi(),
            back.iter()
                .zip(self.domain.eigenvalues())
                .map(|(&x, &mu)| x * mu),
        )
    }
}

/// Builds `mu_j = j^(-beta)`.
pub fn build_power_law_spectrum(beta: f64, dim: usize) -> Result<Spectrum> {
    Spectrum::power_law(beta, dim)
}

/// Dense adjoint matrix `M* = S_pi^{-1} M^t S_r` (d_pi x d_r).
pub fn adjoint(map: &LinearMap) -> DMatrix<f64> {
    let mt = map.to_dense().transpose();
    let mut out = mt;
    // Row scale by mu_pi, column scale by 1/mu_r.
    for (i, mu_pi) in map.domain.eigenvalues().iter().enumerate() {
        for (j, mu_r) in map.codomain.eigenvalues().iter().enumerate() {
            out[(i, j)] *= mu_pi / mu_r;
        }
    }
    out
}

/// Eigenvector storage for the whitened decomposition.
///
/// Diagonal maps produce axis-aligned eigenvectors; storing the permutation
/// keeps the large-dimension experiments free of d x d dense allocations.
#[derive(Debug, Clone)]
pub enum Directions {
    /// `axes[k]` is the coordinate carrying the k-th largest zeta.
    Axes(Vec<usize>),
    /// Columns are orthonormal eigenvectors sorted by descending zeta.
    Dense(DMatrix<f64>),
}

/// Eigen-structure of `Mt' Mt` with `Mt = S_r^{1/2} M S_pi^{-1/2}`.
#[derive(Debug, Clone)]
pub struct WhitenedDecomposition {
    zeta: Vec<f64>,
    directions: Directions,
    whitened_map: LinearMap,
}

impl WhitenedDecomposition {
    /// Composite eigenvalues, non-increasing.
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn num_directions(&self) -> usize {
        self.zeta.len()
    }

    /// Eigenvector `phi_j` (zero-based, sorted by descending zeta).
    pub fn direction(&self, j: usize) -> DVector<f64> {
        match &self.directions {
            Directions::Axes(axes) => {
                let mut v = DVector::zeros(axes.len());
                v[axes[j]] = 1.0;
                v
            }
            Directions::Dense(cols) => cols.column(j).into_owned(),
        }
    }

    pub fn directions(&self) -> &Directions {
        &self.directions
    }

    /// The whitened map `Mt` itself (diagonal storage for diagonal `M`).
    pub fn whitened_map(&self) -> &LinearMap {
        &self.whitened_map
    }
}

/// Eigen-decomposition of `Mt' Mt`.
///
/// Diagonal maps use the closed form `zeta_j = sigma_j^2 mu_{pi,j} / mu_{r,j}`;
/// dense maps go through a symmetric eigensolver. Ties in zeta break by
/// ascending original index so the ordering is deterministic.
pub fn whiten(map: &LinearMap) -> Result<WhitenedDecomposition> {
    // Flat unit spectra make Mt share M's storage shape.
    let flat_pi = Spectrum::new(vec![1.0; map.d_pi()])?;
    let flat_r = Spectrum::new(vec![1.0; map.d_r()])?;
    match &map.kind {
        MapKind::Diagonal(sigma) => {
            let d = map.d_pi();
            let mut zeta: Vec<f64> = (0..d)
                .map(|j| sigma[j] * sigma[j] * map.domain.mu(j) / map.codomain.mu(j))
                .collect();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| {
                zeta[b]
                    .partial_cmp(&zeta[a])
                    .expect("zeta values are finite")
                    .then(a.cmp(&b))
            });
            zeta.sort_by(|a, b| b.partial_cmp(a).expect("zeta values are finite"));
            let mt = DVector::from_iterator(
                d,
                (0..d).map(|j| sigma[j] * (map.domain.mu(j) / map.codomain.mu(j)).sqrt()),
            );
            Ok(WhitenedDecomposition {
                zeta,
                directions: Directions::Axes(order),
                whitened_map: LinearMap::diagonal(mt, flat_pi, flat_r)?,
            })
        }
        MapKind::Dense(m) => {
            let mut mt = m.clone();
            for (i, mu_r) in map.codomain.eigenvalues().iter().enumerate() {
                for (j, mu_pi) in map.domain.eigenvalues().iter().enumerate() {
                    mt[(i, j)] *= (mu_pi / mu_r).sqrt();
                }
            }
            let gram = mt.tr_mul(&mt);
            let eig = gram
                .clone()
                .try_symmetric_eigen(f64::EPSILON, 0)
                .ok_or_else(|| {
                    Error::numerical(format!(
                        "symmetric eigensolver did not converge on the {}x{} whitened Gram",
                        gram.nrows(),
                        gram.ncols()
                    ))
                })?;
            let d = gram.nrows();
            let mut pairs: Vec<(usize, f64)> = eig.eigenvalues.iter().copied().enumerate().collect();
            for (j, lam) in pairs.iter_mut() {
                if *lam < 0.0 {
                    if *lam < -ZETA_CLAMP {
                        return Err(Error::numerical(format!(
                            "whitened Gram has eigenvalue {lam} below the round-off clamp at index {j}"
                        )));
                    }
                    *lam = 0.0;
                }
            }
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
            let zeta: Vec<f64> = pairs.iter().map(|&(_, lam)| lam).collect();
            let mut cols = DMatrix::zeros(d, d);
            for (k, &(orig, _)) in pairs.iter().enumerate() {
                cols.set_column(k, &eig.eigenvectors.column(orig));
            }
            Ok(WhitenedDecomposition {
                zeta,
                directions: Directions::Dense(cols),
                whitened_map: LinearMap::dense(mt, flat_pi, flat_r)?,
            })
        }
    }
}

/// Operator norm of the whitened map, `sqrt(zeta_1)`.
///
/// Finite for every truncated instance; callers compare it across truncation
/// levels to judge whether the underlying pair of spaces is compatible.
pub fn boundedness_value(map: &LinearMap) -> Result<f64> {
    let decomp = whiten(map)?;
    Ok(decomp.zeta().first().copied().unwrap_or(0.0).sqrt())
}

fn check_orthonormal(basis: &DMatrix<f64>, name: &str) -> Result<()> {
    if basis.nrows() != basis.ncols() {
        return Err(Error::invalid(format!("{name} basis must be square")));
    }
    let gram = basis.tr_mul(basis);
    let d = gram.nrows();
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > 1e-10 {
                return Err(Error::invalid(format!(
                    "{name} basis is not orthonormal: Gram entry ({i},{j}) = {}",
                    gram[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Rotates the map into bases aligned with the standard coordinates:
/// `M' = Phi_r^t M Phi_pi`. Coefficients transform as `r' = Phi_r^t r`,
/// `pi' = Phi_pi^t pi`, preserving all inner products and the value
/// `<r, M pi>`.
pub fn align_bases(
    reward_basis: &DMatrix<f64>,
    policy_basis: &DMatrix<f64>,
    map: &LinearMap,
) -> Result<LinearMap> {
    check_orthonormal(reward_basis, "reward")?;
    check_orthonormal(policy_basis, "policy")?;
    if reward_basis.nrows() != map.d_r() || policy_basis.nrows() != map.d_pi() {
        return Err(Error::invalid("basis dimensions must match the map"));
    }
    let aligned = reward_basis.tr_mul(&map.to_dense()) * policy_basis;
    LinearMap::dense(aligned, map.domain.clone(), map.codomain.clone())
}
