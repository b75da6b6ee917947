use std::io::Write;

use serde::{Deserialize, Serialize};

use super::lalm::{image_update, DEFAULT_ALPHA};
use super::regularizer::McstPenalty;
use crate::ct_sim::{SystemOperator, WeightedScan};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mcst::{assign_clusters_layer, sparse_code_layer, AssignmentTable, McstState, ModelBundle};
use crate::patching::{extract_patches, PatchGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitImage {
    Fbp,
    Zero,
    /// The PWLS-EP reconstruction, itself started from FBP.
    Ep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub outer: usize,
    pub inner: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub nonnegative: bool,
    #[serde(default = "default_init")]
    pub init: InitImage,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Code the initial image (one cluster and coding pass) before the first
    /// image update instead of starting from all-zero codes.
    #[serde(default)]
    pub warm_start: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

fn default_init() -> InitImage {
    InitImage::Fbp
}

fn default_stride() -> usize {
    1
}

impl ReconConfig {
    pub fn new(beta: f64, gamma: Vec<f64>, outer: usize, inner: usize) -> Self {
        Self {
            beta,
            gamma,
            outer,
            inner,
            alpha: DEFAULT_ALPHA,
            nonnegative: true,
            init: InitImage::Fbp,
            stride: 1,
            warm_start: false,
        }
    }

    pub fn validate(&self, model: &ModelBundle) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        if self.gamma.len() != model.layers() {
            return Err(Error::Config(format!(
                "{} thresholds for a {}-layer model",
                self.gamma.len(),
                model.layers()
            )));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("thresholds must be nonnegative".into()));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Config(format!("alpha must lie in (1, 2], got {}", self.alpha)));
        }
        if self.outer == 0 || self.inner == 0 || self.stride == 0 {
            return Err(Error::Config("outer, inner and stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Objective after each block of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub after_image: f64,
    pub after_cluster: f64,
    pub after_coding: f64,
    /// Patches that changed cluster, summed over layers.
    pub moved: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconTrace {
    pub initial_objective: f64,
    pub records: Vec<OuterRecord>,
}

impl ReconTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.after_coding)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "outer,stage,objective,moved")?;
        writeln!(out, "0,init,{:e},0", self.initial_objective)?;
        for r in &self.records {
            writeln!(out, "{},image,{:e},0", r.iteration, r.after_image)?;
            writeln!(out, "{},cluster,{:e},{}", r.iteration, r.after_cluster, r.moved)?;
            writeln!(out, "{},coding,{:e},0", r.iteration, r.after_coding)?;
        }
        Ok(())
    }
}

/// `½‖y − Ax‖²_W + β S(x)` at the state's codes and assignments.
fn p1_objective<A: SystemOperator + ?Sized>(
    a: &A,
    scan: &WeightedScan,
    x: &[f64],
    state: &McstState,
    model: &ModelBundle,
    cfg: &ReconConfig,
) -> Result<f64> {
    Ok(scan.data_fidelity(a, x) + cfg.beta * state.objective(model, &cfg.gamma)?)
}

/// PWLS reconstruction regularized by a pre-learned model. Each outer
/// iteration runs `inner` image updates with codes and assignments frozen,
/// then re-assigns clusters and re-codes layer by layer with thresholds `γ_l`.
/// Codes start at zero and every patch starts in cluster 0.
pub fn pwls_mcst<A: SystemOperator + ?Sized>(
    a: &A,
    scan: &WeightedScan,
    model: &ModelBundle,
    cfg: &ReconConfig,
    x0: &Image,
) -> Result<(Image, ReconTrace)> {
    cfg.validate(model)?;
    if x0.dims() != a.image_dims() {
        return Err(Error::Shape(format!(
            "initial image {:?}, operator expects {:?}",
            x0.dims(),
            a.image_dims()
        )));
    }
    if !x0.is_finite() {
        return Err(Error::Numerical("initial image has non-finite pixels".into()));
    }
    let (h, w) = x0.dims();
    let geom = PatchGeometry::new(h, w, model.patch_side(), cfg.stride)?;
    let patches = extract_patches(x0, &geom)?.into_data();
    let assign = AssignmentTable::constant(model.layers(), patches.ncols());
    let mut state = McstState::with_zero_codes(patches, assign, model)?;

    if cfg.warm_start {
        for l in 0..model.layers() {
            assign_clusters_layer(&mut state, model, l)?;
        }
        for l in 0..model.layers() {
            sparse_code_layer(&mut state, model, l, cfg.gamma[l])?;
        }
    }
    let mut x = x0.as_slice().to_vec();
    let mut trace = ReconTrace {
        initial_objective: p1_objective(a, scan, &x, &state, model, cfg)?,
        records: Vec::with_capacity(cfg.outer),
    };
    for t in 1..=cfg.outer {
        let penalty = McstPenalty::new(geom.clone(), model, state.codes(), state.assignments(), cfg.beta)?;
        x = image_update(a, scan, &penalty, x, cfg.inner, cfg.alpha, cfg.nonnegative)
            .map_err(|e| Error::Numerical(format!("outer iteration {t}: {e}")))?
            .x;
        let img = Image::from_vec(h, w, x.clone())?;
        state.set_patches(extract_patches(&img, &geom)?.into_data(), model)?;
        let fidelity = scan.data_fidelity(a, &x);
        let penalty_value = |s: &McstState| -> Result<f64> { Ok(cfg.beta * s.objective(model, &cfg.gamma)?) };
        let after_image = fidelity + penalty_value(&state)?;

        let mut moved = 0;
        for l in 0..model.layers() {
            moved += assign_clusters_layer(&mut state, model, l)?;
        }
        let after_cluster = fidelity + penalty_value(&state)?;
        for l in 0..model.layers() {
            sparse_code_layer(&mut state, model, l, cfg.gamma[l])?;
        }
        let after_coding = fidelity + penalty_value(&state)?;
        trace.records.push(OuterRecord {
            iteration: t,
            after_image,
            after_cluster,
            after_coding,
            moved,
        });
        log::debug!("outer {t}: objective {after_coding:.6e}, {moved} patches moved");
    }
    Ok((Image::from_vec(h, w, x)?, trace))
}
