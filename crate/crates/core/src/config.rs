//! Experiment configuration: TOML with one table per stage. Unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ct_sim::{Ellipse, NoiseModel, Phantom, ScanGeometry};
use crate::error::{Error, Result};
use crate::recon::{EpConfig, ReconConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    /// Square image side in pixels.
    pub size: usize,
    pub views: usize,
    pub detectors: usize,
    #[serde(default = "default_spacing")]
    pub pixel_mm: f64,
    #[serde(default = "default_spacing")]
    pub detector_mm: f64,
}

fn default_spacing() -> f64 {
    2.0
}

impl ScanSection {
    pub fn geometry(&self) -> Result<ScanGeometry> {
        ScanGeometry::parallel(
            self.views,
            self.detectors,
            self.detector_mm,
            self.pixel_mm,
            self.size,
            self.size,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub name: String,
    /// Rows of `[cx, cy, a, b, angle_deg, value]` for `ellipses-spec`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipses: Option<Vec<[f64; 6]>>,
}

impl PhantomSection {
    pub fn phantom(&self) -> Result<Phantom> {
        let ellipses = self.ellipses.as_ref().map(|rows| {
            rows.iter()
                .map(|&[cx, cy, a, b, angle_deg, value]| Ellipse {
                    cx,
                    cy,
                    a,
                    b,
                    angle_deg,
                    value,
                })
                .collect()
        });
        Phantom::by_name(&self.name, ellipses)
    }
}

/// Training on synthetic head slices, plus the trainer's own settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub slices: usize,
    #[serde(default)]
    pub slice_seed: u64,
    /// Training image side; defaults to the scan size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub clusters: Vec<usize>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patch_side")]
    pub patch_side: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
}

fn default_stride() -> usize {
    1
}

fn default_patch_side() -> usize {
    8
}

fn default_kmeans_iters() -> usize {
    20
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            clusters: self.clusters.clone(),
            eta: self.eta.clone(),
            iterations: self.iterations,
            seed: self.seed,
            patch_side: self.patch_side,
            kmeans_iters: self.kmeans_iters,
            log_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scan: ScanSection,
    pub noise: NoiseModel,
    pub phantom: PhantomSection,
    pub train: TrainSection,
    pub recon: ReconConfig,
    pub ep: EpConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The resolved configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scan.geometry()?;
        self.noise.validate()?;
        self.phantom.phantom()?;
        if self.train.slices == 0 || self.train.stride == 0 {
            return Err(Error::Config("train.slices and train.stride must be positive".into()));
        }
        self.train.train_config().validate()?;
        if self.train.size.unwrap_or(self.scan.size) < self.train.patch_side {
            return Err(Error::Config("training images are smaller than a patch".into()));
        }
        if self.recon.gamma.len() != self.train.clusters.len() {
            return Err(Error::Config(format!(
                "recon.gamma has {} entries for a {}-layer model",
                self.recon.gamma.len(),
                self.train.clusters.len()
            )));
        }
        self.ep.validate()
    }
}
