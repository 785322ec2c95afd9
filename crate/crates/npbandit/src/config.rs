//! Flat key-value experiment configuration.
//!
//! One experiment per file, `key = value` per line, `#` starts a comment
//! line. Unknown and duplicate keys are errors rather than warnings: a
//! typoed key silently falling back to a default would corrupt a sweep.
//! Every field has a canonical rendering, and the configuration hash is
//! taken over that rendering, so two files that parse to the same effective
//! configuration stamp their outputs identically.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kmab::{KernelFamily, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Scaling,
    DimSweep,
    Kmab,
    CompareBaselines,
    Bounds,
}

impl ExperimentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::DimSweep => "dim_sweep",
            ExperimentKind::Kmab => "kmab",
            ExperimentKind::CompareBaselines => "compare_baselines",
            ExperimentKind::Bounds => "bounds",
        }
    }

    /// Whether the experiment schedules queries from the composite decay
    /// exponent `beta_pi - beta_r` and therefore needs it positive.
    fn needs_composite_beta(&self) -> bool {
        !matches!(self, ExperimentKind::Kmab)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(ExperimentKind::Scaling),
            "dim_sweep" => Ok(ExperimentKind::DimSweep),
            "kmab" => Ok(ExperimentKind::Kmab),
            "compare_baselines" => Ok(ExperimentKind::CompareBaselines),
            "bounds" => Ok(ExperimentKind::Bounds),
            other => Err(Error::config(format!(
                "unknown experiment '{other}'; expected scaling, dim_sweep, kmab, compare_baselines, or bounds"
            ))),
        }
    }
}

/// Effective experiment parameters after defaults are applied.
///
/// Defaults reproduce the reference instance: power-law exponents 1.75 and
/// 1.0, dimension 2048, noise 0.01, budgets 256 through 4096, ten seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub beta_pi: f64,
    pub beta_r: f64,
    pub d: usize,
    pub tau_sq: f64,
    pub kernel: KernelSpec,
    pub epsilon: f64,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub arm_count: usize,
    pub confidence_scale: f64,
    pub output_dir: PathBuf,
}

fn default_config(experiment: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        experiment,
        beta_pi: 1.75,
        beta_r: 1.0,
        d: 2048,
        tau_sq: 0.01,
        kernel: KernelSpec::new(KernelFamily::Matern52, 1.0).expect("unit scale"),
        epsilon: 0.2,
        n_grid: vec![256, 512, 1024, 2048, 4096],
        d_grid: vec![32, 256, 2048],
        seeds: (0..10).collect(),
        arm_count: 64,
        confidence_scale: 2.0,
        output_dir: PathBuf::from("out"),
    }
}

/// Seed lists come as an inclusive range `a..b` or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad seed range start '{lo}'")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad seed range end '{hi}'")))?;
        if hi < lo {
            return Err(Error::config(format!("empty seed range {lo}..{hi}")));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(text, "seeds")
}

fn parse_list<T: FromStr>(text: &str, key: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            return Err(Error::config(format!("empty entry in '{key}'")));
        }
        out.push(
            piece
                .parse()
                .map_err(|_| Error::config(format!("bad entry '{piece}' in '{key}'")))?,
        );
    }
    Ok(out)
}

fn parse_scalar<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value '{value}' for '{key}'")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !seen.insert(key.clone()) {
                return Err(Error::config(format!("duplicate key '{key}'")));
            }
            pairs.push((key, value.trim().to_string()));
        }
        let experiment = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .map(|(_, v)| v.parse::<ExperimentKind>())
            .transpose()?
            .ok_or_else(|| Error::config("missing required key 'experiment'"))?;

        let mut config = default_config(experiment);
        let mut family = config.kernel.family();
        let mut length_scale = config.kernel.length_scale();
        for (key, value) in &pairs {
            match key.as_str() {
                "experiment" => {}
                "beta_pi" => config.beta_pi = parse_scalar(value, key)?,
                "beta_r" => config.beta_r = parse_scalar(value, key)?,
                "d" => config.d = parse_scalar(value, key)?,
                "tau_sq" => config.tau_sq = parse_scalar(value, key)?,
                "kernel" => {
                    family = value
                        .parse::<KernelSpec>()
                        .map_err(|e| Error::config(e.to_string()))?
                        .family()
                }
                "length_scale" => length_scale = parse_scalar(value, key)?,
                "epsilon" => config.epsilon = parse_scalar(value, key)?,
                "n_grid" => config.n_grid = parse_list(value, key)?,
                "d_grid" => config.d_grid = parse_list(value, key)?,
                "seeds" => config.seeds = parse_seeds(value)?,
                "arm_count" => config.arm_count = parse_scalar(value, key)?,
                "confidence_scale" => config.confidence_scale = parse_scalar(value, key)?,
                "output_dir" => config.output_dir = PathBuf::from(value),
                other => return Err(Error::config(format!("unknown key '{other}'"))),
            }
        }
        config.kernel =
            KernelSpec::new(family, length_scale).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_increasing =
            |grid: &[usize]| grid.windows(2).all(|w| w[0] < w[1]) && !grid.is_empty();
        if !strictly_increasing(&self.n_grid) || self.n_grid[0] == 0 {
            return Err(Error::config(format!(
                "n_grid must be nonempty, positive, and strictly increasing, got {:?}",
                self.n_grid
            )));
        }
        if !strictly_increasing(&self.d_grid) || self.d_grid[0] == 0 {
            return Err(Error::config(format!(
                "d_grid must be nonempty, positive, and strictly increasing, got {:?}",
                self.d_grid
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        if self.d == 0 {
            return Err(Error::config("d must be at least 1"));
        }
        if !(self.tau_sq >= 0.0 && self.tau_sq.is_finite()) {
            return Err(Error::config(format!(
                "tau_sq must be finite and non-negative, got {}",
                self.tau_sq
            )));
        }
        if !(self.beta_pi.is_finite() && self.beta_r.is_finite()) {
            return Err(Error::config("beta_pi and beta_r must be finite"));
        }
        if self.experiment.needs_composite_beta() && self.composite_beta() <= 0.0 {
            return Err(Error::config(format!(
                "beta_pi must exceed beta_r for the {} experiment; the composite decay {} is not positive",
                self.experiment,
                self.composite_beta()
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(Error::config(format!(
                "epsilon must lie in (0, 2], got {}",
                self.epsilon
            )));
        }
        if self.arm_count == 0 {
            return Err(Error::config("arm_count must be at least 1"));
        }
        if !(self.confidence_scale > 0.0 && self.confidence_scale.is_finite()) {
            return Err(Error::config(format!(
                "confidence_scale must be positive and finite, got {}",
                self.confidence_scale
            )));
        }
        Ok(())
    }

    /// Decay exponent of the composite eigenvalues under identity `M`,
    /// `beta_pi - beta_r`; this is the `beta` every schedule runs on.
    pub fn composite_beta(&self) -> f64 {
        self.beta_pi - self.beta_r
    }

    /// Canonical one-line-per-field rendering; the basis of [`Self::hash`].
    pub fn canonical_string(&self) -> String {
        let join =
            |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let kernel = match self.kernel.family() {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern72 => "matern72",
            KernelFamily::Rbf => "rbf",
        };
        format!(
            "arm_count={}\nbeta_pi={}\nbeta_r={}\nconfidence_scale={}\nd={}\nd_grid={}\nepsilon={}\nexperiment={}\nkernel={}\nlength_scale={}\nn_grid={}\nseeds={}\ntau_sq={}\n",
            self.arm_count,
            self.beta_pi,
            self.beta_r,
            self.confidence_scale,
            self.d,
            join(&self.d_grid),
            self.epsilon,
            self.experiment,
            kernel,
            self.kernel.length_scale(),
            join(&self.n_grid),
            seeds,
            self.tau_sq,
        )
    }

    /// Hex SHA-256 of the canonical rendering. The output directory is
    /// deliberately excluded: moving results must not change their stamp.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
