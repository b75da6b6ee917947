use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::geometry::Sinogram;
use crate::error::{Error, Result};

/// Counts below this floor are clamped before the log transform.
pub const COUNT_FLOOR: f64 = 0.1;

/// Poisson photon counts plus additive Gaussian electronic noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Incident photons per ray.
    pub i0: f64,
    /// Electronic-noise variance in counts².
    pub sigma2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(i0: f64, sigma2: f64, seed: u64) -> Result<Self> {
        let nm = Self { i0, sigma2, seed };
        nm.validate()?;
        Ok(nm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::Config(format!("I0 must be positive, got {}", self.i0)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be nonnegative, got {}", self.sigma2)));
        }
        Ok(())
    }
}

/// Draws `Poisson(I0·e^{−s_i}) + N(0, σ²)` for every ray, in ray order from a
/// single seeded stream.
pub fn simulate_counts(s: &Sinogram, nm: &NoiseModel) -> Result<Sinogram> {
    nm.validate()?;
    if s.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("noiseless sinogram has non-finite entries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
    let gauss = (nm.sigma2 > 0.0)
        .then(|| Normal::new(0.0, nm.sigma2.sqrt()))
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let counts = s
        .as_slice()
        .iter()
        .map(|&line| {
            let mean = nm.i0 * (-line).exp();
            let photons = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Numerical(format!("Poisson mean {mean}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            Ok(photons + gauss.map_or(0.0, |g| g.sample(&mut rng)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Sinogram::from_vec(s.n_views(), s.n_detectors(), counts)
}

/// Log-transformed line integrals `y_i = ln(I0 / max(c_i, ε))` and weights
/// `w_i = c_i² / (c_i + σ²)` clamped to `[0, I0]`.
pub fn counts_to_sinogram(counts: &Sinogram, nm: &NoiseModel) -> Result<(Sinogram, Vec<f64>)> {
    nm.validate()?;
    let y = counts
        .as_slice()
        .iter()
        .map(|&c| (nm.i0 / c.max(COUNT_FLOOR)).ln())
        .collect();
    let w = counts.as_slice().iter().map(|&c| statistical_weight(c, nm)).collect();
    Ok((Sinogram::from_vec(counts.n_views(), counts.n_detectors(), y)?, w))
}

fn statistical_weight(c: f64, nm: &NoiseModel) -> f64 {
    let denom = c + nm.sigma2;
    if denom <= 0.0 {
        return 0.0;
    }
    (c * c / denom).clamp(0.0, nm.i0)
}
