//! The multi-layer clustered residual transform model and its block updates.
//!
//! Layers and clusters are indexed from zero throughout the API. Layer `l`
//! maps its residual `R_l` through the transform of each patch's cluster and
//! passes on `R_{l+1} = Ω_{l,k(i,l)} R_l(:, i) − Z_l(:, i)`.

mod init;
mod ops;

pub use init::{dct2_matrix, kmeans_init, random_orthogonal};
pub use ops::{
    assign_clusters_layer, backprop_tail_sum, backprop_vector, encoding_residual_norm,
    encoding_residual_norm_disentangled, hard_threshold, hard_threshold_in_place,
    procrustes, propagate_residuals, sparse_code_layer, training_objective, transform_update_layer,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on `‖ΩΩᵀ − I‖_F` accepted for a stored transform.
pub const UNITARY_TOL: f64 = 1e-8;

pub fn unitarity_error(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (m * m.transpose() - DMatrix::<f64>::identity(n, n)).norm()
}

/// Learned model: one bank of unitary transforms per layer plus per-layer thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    patch_side: usize,
    transforms: Vec<Vec<DMatrix<f64>>>,
    thresholds: Vec<f64>,
}

impl ModelBundle {
    pub fn new(
        patch_side: usize,
        transforms: Vec<Vec<DMatrix<f64>>>,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        let n = patch_side * patch_side;
        if patch_side == 0 {
            return Err(Error::Config("patch side must be positive".into()));
        }
        if transforms.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if thresholds.len() != transforms.len() {
            return Err(Error::Config(format!(
                "{} thresholds for {} layers",
                thresholds.len(),
                transforms.len()
            )));
        }
        if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Config(format!("threshold {t} is not a nonnegative real")));
        }
        for (l, bank) in transforms.iter().enumerate() {
            if bank.is_empty() {
                return Err(Error::Config(format!("layer {l} has no clusters")));
            }
            for (k, omega) in bank.iter().enumerate() {
                if omega.shape() != (n, n) {
                    return Err(Error::Shape(format!(
                        "transform ({l},{k}) is {:?}, expected {n}x{n}",
                        omega.shape()
                    )));
                }
                let err = unitarity_error(omega);
                if !(err <= UNITARY_TOL) {
                    return Err(Error::Invariant(format!(
                        "transform ({l},{k}) is not unitary: ‖ΩΩᵀ−I‖_F = {err:e}"
                    )));
                }
            }
        }
        Ok(Self {
            patch_side,
            transforms,
            thresholds,
        })
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn layers(&self) -> usize {
        self.transforms.len()
    }

    pub fn clusters(&self, layer: usize) -> usize {
        self.transforms[layer].len()
    }

    pub fn clusters_per_layer(&self) -> Vec<usize> {
        self.transforms.iter().map(Vec::len).collect()
    }

    pub fn transform(&self, layer: usize, cluster: usize) -> &DMatrix<f64> {
        &self.transforms[layer][cluster]
    }

    pub fn bank(&self, layer: usize) -> &[DMatrix<f64>] {
        &self.transforms[layer]
    }

    pub fn transforms(&self) -> &[Vec<DMatrix<f64>>] {
        &self.transforms
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Same transforms with a different threshold vector (e.g. reconstruction γ).
    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        Self::new(self.patch_side, self.transforms.clone(), thresholds)
    }

    pub(crate) fn set_transform(&mut self, layer: usize, cluster: usize, omega: DMatrix<f64>) {
        self.transforms[layer][cluster] = omega;
    }

    pub fn max_unitarity_error(&self) -> f64 {
        self.transforms
            .iter()
            .flatten()
            .map(unitarity_error)
            .fold(0.0, f64::max)
    }
}

/// Cluster index `k(i, l)` of every patch at every layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentTable {
    layers: Vec<Vec<usize>>,
}

impl AssignmentTable {
    pub fn new(layers: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(first) = layers.first() {
            if layers.iter().any(|l| l.len() != first.len()) {
                return Err(Error::Shape("assignment layers differ in length".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Every patch in cluster 0 at every layer.
    pub fn constant(layers: usize, patches: usize) -> Self {
        Self {
            layers: vec![vec![0; patches]; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn patches(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut Vec<usize> {
        &mut self.layers[l]
    }

    pub fn get(&self, patch: usize, layer: usize) -> usize {
        self.layers[layer][patch]
    }

    /// Index sets `C_{l,k}`, in increasing patch order.
    pub fn members(&self, layer: usize, clusters: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); clusters];
        for (i, &k) in self.layers[layer].iter().enumerate() {
            sets[k].push(i);
        }
        sets
    }

    pub fn occupancy(&self, layer: usize, clusters: usize) -> Vec<usize> {
        let mut counts = vec![0; clusters];
        for &k in &self.layers[layer] {
            counts[k] += 1;
        }
        counts
    }

    pub fn check_against(&self, model: &ModelBundle) -> Result<()> {
        if self.layers.len() != model.layers() {
            return Err(Error::Shape(format!(
                "assignments for {} layers, model has {}",
                self.layers.len(),
                model.layers()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let k_max = model.clusters(l);
            if let Some((i, k)) = layer.iter().enumerate().find(|(_, &k)| k >= k_max) {
                return Err(Error::OutOfRange(format!(
                    "patch {i} at layer {l} assigned to cluster {k}, layer has {k_max}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse codes `Z_l`, column-aligned with the residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeStack {
    layers: Vec<DMatrix<f64>>,
}

impl CodeStack {
    pub fn zeros(layers: usize, patch_dim: usize, patches: usize) -> Self {
        Self {
            layers: vec![DMatrix::zeros(patch_dim, patches); layers],
        }
    }

    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = layers.first() {
            if layers.iter().any(|z| z.shape() != first.shape()) {
                return Err(Error::Shape("code layers differ in shape".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut DMatrix<f64> {
        &mut self.layers[l]
    }

    pub fn nnz(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|v| **v != 0.0).count()
    }
}

/// Residual maps `R_1 … R_L`; `R_1` holds the input patches.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStack {
    layers: Vec<DMatrix<f64>>,
}

impl ResidualStack {
    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }
}

/// Residuals, codes and assignments kept mutually consistent: the residual
/// recursion holds after every mutating operation.
#[derive(Clone, Debug, PartialEq)]
pub struct McstState {
    residuals: ResidualStack,
    codes: CodeStack,
    assign: AssignmentTable,
}

impl McstState {
    pub fn new(
        patches: DMatrix<f64>,
        codes: CodeStack,
        assign: AssignmentTable,
        model: &ModelBundle,
    ) -> Result<Self> {
        let residuals = propagate_residuals(patches, &codes, &assign, model)?;
        Ok(Self {
            residuals,
            codes,
            assign,
        })
    }

    /// Zero codes and the given assignments.
    pub fn with_zero_codes(
        patches: DMatrix<f64>,
        assign: AssignmentTable,
        model: &ModelBundle,
    ) -> Result<Self> {
        let codes = CodeStack::zeros(model.layers(), patches.nrows(), patches.ncols());
        Self::new(patches, codes, assign, model)
    }

    pub fn residuals(&self) -> &ResidualStack {
        &self.residuals
    }

    pub fn codes(&self) -> &CodeStack {
        &self.codes
    }

    pub fn assignments(&self) -> &AssignmentTable {
        &self.assign
    }

    pub fn patches(&self) -> &DMatrix<f64> {
        &self.residuals.layers[0]
    }

    pub fn patch_count(&self) -> usize {
        self.residuals.layers[0].ncols()
    }

    pub fn into_parts(self) -> (ResidualStack, CodeStack, AssignmentTable) {
        (self.residuals, self.codes, self.assign)
    }

    /// Replaces the input patches and re-propagates every layer.
    pub fn set_patches(&mut self, patches: DMatrix<f64>, model: &ModelBundle) -> Result<()> {
        if patches.shape() != self.residuals.layers[0].shape() {
            return Err(Error::Shape(format!(
                "new patches {:?}, state holds {:?}",
                patches.shape(),
                self.residuals.layers[0].shape()
            )));
        }
        self.residuals.layers[0] = patches;
        self.repropagate_after(0, model);
        Ok(())
    }

    /// Recomputes `R_{l+1} … R_{L−1}` from `R_l`.
    pub(crate) fn repropagate_after(&mut self, layer: usize, model: &ModelBundle) {
        for s in layer..model.layers() - 1 {
            let next = ops::apply_clustered(
                model.bank(s),
                self.assign.layer(s),
                &self.residuals.layers[s],
                false,
            ) - self.codes.layer(s);
            self.residuals.layers[s + 1] = next;
        }
    }
}
