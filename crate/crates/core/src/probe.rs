//! Probe-distribution selection and seeded probe generation.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::headspec::{HeadKind, InputShape, LatentRangeInfo};
use crate::rng;

/// Probe count used when a configuration does not specify one.
pub const DEFAULT_PROBE_COUNT: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Independent `U[0,1]` coordinates.
    Uniform01,
    /// Independent `N(0, sigma^2)` coordinates.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    distribution: Distribution,
    count: usize,
    seed: u64,
}

impl ProbeConfig {
    pub fn new(distribution: Distribution, count: usize, seed: u64) -> Result<Self, ProbeError> {
        if count == 0 {
            return Err(ProbeError::InvalidConfig("probe count must be at least 1".into()));
        }
        if let Distribution::Gaussian { sigma } = distribution {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(ProbeError::InvalidConfig(format!(
                    "gaussian sigma must be positive and finite, got {sigma}"
                )));
            }
        }
        Ok(Self {
            distribution,
            count,
            seed,
        })
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Picks the probe family for a head from its latent-range metadata.
///
/// Conv 1x1 + GAP heads always get Gaussian probes. Otherwise non-negative
/// latents get `U[0,1]` and signed latents get `N(0, sigma^2)` with
/// `sigma = abs_max / 3`. A degenerate all-zero range falls back to
/// `sigma = 1/3`, the coverage of the unit interval.
pub fn choose_distribution(range: &LatentRangeInfo, kind: HeadKind) -> Distribution {
    let gaussian = || {
        let sigma = range.abs_max() / 3.0;
        Distribution::Gaussian {
            sigma: if sigma > 0.0 { sigma } else { 1.0 / 3.0 },
        }
    };
    match kind {
        HeadKind::Conv1x1Gap => gaussian(),
        HeadKind::FullyConnected if range.nonnegative() => Distribution::Uniform01,
        HeadKind::FullyConnected => gaussian(),
    }
}

/// A batch of `N` probes, one per row, each flattened to `shape.len()` values
/// (channel-major for spatial shapes).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    pub values: Array2<f64>,
    pub shape: InputShape,
    pub config: ProbeConfig,
}

impl ProbeBatch {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Draws `cfg.count` i.i.d. probes; a pure function of `(cfg, shape)`.
pub fn generate_probes(cfg: &ProbeConfig, shape: InputShape) -> ProbeBatch {
    let mut rng = rng::seeded(cfg.seed);
    let n = cfg.count * shape.len();
    let data: Vec<f64> = match cfg.distribution {
        Distribution::Uniform01 => (0..n).map(|_| rng.random::<f64>()).collect(),
        Distribution::Gaussian { sigma } => (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let values = Array2::from_shape_vec((cfg.count, shape.len()), data)
        .expect("probe buffer length matches shape");
    ProbeBatch {
        values,
        shape,
        config: *cfg,
    }
}
