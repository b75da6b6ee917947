//! Block coordinate descent training of the clustered multi-layer model.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcst::{
    assign_clusters_layer, dct2_matrix, kmeans_init, random_orthogonal, sparse_code_layer,
    transform_update_layer, AssignmentTable, McstState, ModelBundle,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub clusters: Vec<usize>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patch_side")]
    pub patch_side: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
    #[serde(default)]
    pub log_every: usize,
}

fn default_patch_side() -> usize {
    8
}

fn default_kmeans_iters() -> usize {
    20
}

impl TrainConfig {
    pub fn new(clusters: Vec<usize>, eta: Vec<f64>, iterations: usize, seed: u64) -> Self {
        Self {
            clusters,
            eta,
            iterations,
            seed,
            patch_side: default_patch_side(),
            kmeans_iters: default_kmeans_iters(),
            log_every: 0,
        }
    }

    pub fn layers(&self) -> usize {
        self.clusters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.clusters.contains(&0) {
            return Err(Error::Config("every layer needs at least one cluster".into()));
        }
        if self.eta.len() != self.clusters.len() {
            return Err(Error::Config(format!(
                "{} thresholds for {} layers",
                self.eta.len(),
                self.clusters.len()
            )));
        }
        if self.eta.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("thresholds must be nonnegative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.patch_side == 0 {
            return Err(Error::Config("patch side must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substep {
    Cluster,
    Code,
    Transform,
}

impl fmt::Display for Substep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Substep::Cluster => "cluster",
            Substep::Code => "code",
            Substep::Transform => "transform",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub layer: usize,
    pub step: Substep,
    pub objective: f64,
    /// Cluster sizes of this layer after the step.
    pub occupancy: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub initial_objective: f64,
    pub steps: Vec<TraceStep>,
    pub iteration_seconds: Vec<f64>,
}

impl TrainTrace {
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_objective).chain(self.steps.iter().map(|s| s.objective))
    }

    pub fn final_objective(&self) -> f64 {
        self.steps.last().map_or(self.initial_objective, |s| s.objective)
    }

    /// Steps whose objective rose by more than `rel_slack` relative to the previous one.
    pub fn monotonicity_violations(&self, rel_slack: f64) -> Vec<usize> {
        let values: Vec<f64> = self.objectives().collect();
        values
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] + rel_slack * w[0].abs())
            .map(|(i, _)| i)
            .collect()
    }

    /// Writes the objective trace as CSV. Wall-clock timings are left out so
    /// that identical runs produce identical files.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,layer,step,objective,occupancy")?;
        writeln!(out, "0,0,init,{:e},", self.initial_objective)?;
        for s in &self.steps {
            let occ: Vec<String> = s.occupancy.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{:e},{}",
                s.iteration,
                s.layer + 1,
                s.step,
                s.objective,
                occ.join(";")
            )?;
        }
        Ok(())
    }
}

/// Initial model: DCT at layer 0 for every cluster, seeded random orthogonal
/// matrices deeper down.
fn initial_model(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<ModelBundle> {
    let n = cfg.patch_side * cfg.patch_side;
    let dct = dct2_matrix(n)?;
    let mut transforms = Vec::with_capacity(cfg.layers());
    transforms.push(vec![dct; cfg.clusters[0]]);
    for &k in &cfg.clusters[1..] {
        transforms.push((0..k).map(|_| random_orthogonal(n, rng.next_u64())).collect());
    }
    ModelBundle::new(cfg.patch_side, transforms, cfg.eta.clone())
}

pub fn train(patches: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(ModelBundle, TrainTrace)> {
    cfg.validate()?;
    let n = cfg.patch_side * cfg.patch_side;
    if patches.nrows() != n {
        return Err(Error::Shape(format!(
            "patch dimension {} does not match patch side {}",
            patches.nrows(),
            cfg.patch_side
        )));
    }
    let count = patches.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initial_model(cfg, &mut rng)?;

    let first = kmeans_init(patches, cfg.clusters[0], rng.next_u64(), cfg.kmeans_iters)?;
    let mut layers = vec![first];
    for &k in &cfg.clusters[1..] {
        layers.push((0..count).map(|_| rng.random_range(0..k)).collect());
    }
    let assign = AssignmentTable::new(layers)?;
    let mut state = McstState::with_zero_codes(patches.clone(), assign, &model)?;

    let mut trace = TrainTrace {
        initial_objective: state.objective(&model, &cfg.eta)?,
        ..Default::default()
    };
    for it in 1..=cfg.iterations {
        let started = Instant::now();
        for l in 0..cfg.layers() {
            for step in [Substep::Cluster, Substep::Code, Substep::Transform] {
                match step {
                    Substep::Cluster => {
                        assign_clusters_layer(&mut state, &model, l)?;
                    }
                    Substep::Code => sparse_code_layer(&mut state, &model, l, cfg.eta[l])?,
                    Substep::Transform => transform_update_layer(&mut state, &mut model, l)?,
                }
                trace.steps.push(TraceStep {
                    iteration: it,
                    layer: l,
                    step,
                    objective: state.objective(&model, &cfg.eta)?,
                    occupancy: state.assignments().occupancy(l, cfg.clusters[l]),
                });
            }
        }
        trace.iteration_seconds.push(started.elapsed().as_secs_f64());
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log::info!(
                "iteration {it}/{}: objective {:.6e}",
                cfg.iterations,
                trace.final_objective()
            );
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let p = DMatrix::zeros(4, 10);
        let mut cfg = TrainConfig::new(vec![2], vec![1.0], 1, 0);
        cfg.patch_side = 2;
        assert!(train(&p, &cfg).is_ok());
        assert!(train(&DMatrix::zeros(9, 10), &cfg).is_err());
        let mut bad = cfg.clone();
        bad.eta = vec![1.0, 2.0];
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.iterations = 0;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.clusters = vec![0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_threshold_single_transform_reaches_zero() {
        let p = DMatrix::from_fn(4, 12, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        let mut cfg = TrainConfig::new(vec![1], vec![0.0], 1, 1);
        cfg.patch_side = 2;
        let (model, trace) = train(&p, &cfg).unwrap();
        assert!(trace.final_objective() < 1e-20);
        assert!(model.max_unitarity_error() < 1e-10);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = DMatrix::from_fn(4, 12, |r, c| ((r + c) % 3) as f64);
        let mut cfg = TrainConfig::new(vec![2, 1], vec![0.5, 0.5], 2, 1);
        cfg.patch_side = 2;
        let (_, trace) = train(&p, &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,layer,step,objective,occupancy\n"));
        assert_eq!(text.lines().count(), 2 + 2 * 2 * 3);
    }
}
