use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{unitarity_error, AssignmentTable, CodeStack, McstState, ModelBundle, ResidualStack, UNITARY_TOL};
use crate::error::{Error, Result};

/// Zeros every entry whose magnitude is less than `t`; entries equal to `t` survive.
pub fn hard_threshold(v: &[f64], t: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| if x.abs() < t { 0.0 } else { x })
        .collect()
}

pub fn hard_threshold_in_place(v: &mut [f64], t: f64) {
    for x in v.iter_mut() {
        if x.abs() < t {
            *x = 0.0;
        }
    }
}

/// Applies `Ω_{k(i)}` (or its transpose) to every column `i` of `x`.
pub(crate) fn apply_clustered(
    bank: &[DMatrix<f64>],
    assign: &[usize],
    x: &DMatrix<f64>,
    transpose: bool,
) -> DMatrix<f64> {
    let apply = |omega: &DMatrix<f64>, cols: &DMatrix<f64>| {
        if transpose {
            omega.tr_mul(cols)
        } else {
            omega * cols
        }
    };
    if bank.len() == 1 {
        return apply(&bank[0], x);
    }
    let mut members = vec![Vec::new(); bank.len()];
    for (i, &k) in assign.iter().enumerate() {
        members[k].push(i);
    }
    let blocks: Vec<Option<DMatrix<f64>>> = members
        .par_iter()
        .zip(bank.par_iter())
        .map(|(idx, omega)| {
            if idx.is_empty() {
                None
            } else {
                Some(apply(omega, &x.select_columns(idx)))
            }
        })
        .collect();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (idx, block) in members.iter().zip(blocks) {
        if let Some(block) = block {
            for (j, &i) in idx.iter().enumerate() {
                out.set_column(i, &block.column(j));
            }
        }
    }
    out
}

fn check_inputs(
    patches: &DMatrix<f64>,
    codes: &CodeStack,
    assign: &AssignmentTable,
    model: &ModelBundle,
) -> Result<()> {
    let n = model.patch_dim();
    if patches.nrows() != n {
        return Err(Error::Shape(format!(
            "patches have dimension {}, model expects {n}",
            patches.nrows()
        )));
    }
    if codes.layers() != model.layers() {
        return Err(Error::Shape(format!(
            "{} code layers for a {}-layer model",
            codes.layers(),
            model.layers()
        )));
    }
    for l in 0..codes.layers() {
        if codes.layer(l).shape() != patches.shape() {
            return Err(Error::Shape(format!(
                "code layer {l} is {:?}, patches are {:?}",
                codes.layer(l).shape(),
                patches.shape()
            )));
        }
    }
    if assign.patches() != patches.ncols() {
        return Err(Error::Shape(format!(
            "assignments cover {} patches, have {}",
            assign.patches(),
            patches.ncols()
        )));
    }
    assign.check_against(model)
}

/// Builds `R_1 … R_L` from the input patches by the residual recursion.
pub fn propagate_residuals(
    patches: DMatrix<f64>,
    codes: &CodeStack,
    assign: &AssignmentTable,
    model: &ModelBundle,
) -> Result<ResidualStack> {
    check_inputs(&patches, codes, assign, model)?;
    let mut layers = Vec::with_capacity(model.layers());
    layers.push(patches);
    for l in 0..model.layers() - 1 {
        let next = apply_clustered(model.bank(l), assign.layer(l), &layers[l], false) - codes.layer(l);
        layers.push(next);
    }
    Ok(ResidualStack { layers })
}

/// `S_p = Σ_{s=p+1}^{L} b^{p←s}` for every patch, with levels counted from the
/// patch domain (level 0) to the deepest code domain (level `L`).
pub fn backprop_tail_sum(
    codes: &CodeStack,
    assign: &AssignmentTable,
    model: &ModelBundle,
    level: usize,
) -> DMatrix<f64> {
    let layers = model.layers();
    let (n, count) = codes.layer(0).shape();
    let mut acc = DMatrix::zeros(n, count);
    for p in (level..layers).rev() {
        // S_p = Ω_{p+1}ᵀ ((L − p) z_{p+1} + S_{p+1})
        let mut inner = codes.layer(p) * (layers - p) as f64;
        inner += &acc;
        acc = apply_clustered(model.bank(p), assign.layer(p), &inner, true);
    }
    acc
}

/// Per-patch target `Z_l + S_{l+1} / (L − l)` that layer `l`'s transformed
/// residual is compared against once deeper layers are folded in.
pub(crate) fn layer_target(state: &McstState, model: &ModelBundle, layer: usize) -> DMatrix<f64> {
    let depth = (model.layers() - layer) as f64;
    let mut target = backprop_tail_sum(state.codes(), state.assignments(), model, layer + 1);
    target /= depth;
    target += state.codes().layer(layer);
    target
}

/// Back-propagation vector `b_i^{p←q}` between levels `p < q ≤ L` (level 0 is
/// the patch domain, level `s ≥ 1` the code domain of layer index `s − 1`).
pub fn backprop_vector(
    patch: usize,
    from_level: usize,
    to_level: usize,
    codes: &CodeStack,
    assign: &AssignmentTable,
    model: &ModelBundle,
) -> Result<DVector<f64>> {
    if from_level >= to_level || to_level > model.layers() {
        return Err(Error::OutOfRange(format!(
            "levels {from_level} ← {to_level} for a {}-layer model",
            model.layers()
        )));
    }
    if patch >= assign.patches() {
        return Err(Error::OutOfRange(format!("patch {patch}")));
    }
    let n = model.patch_dim();
    let mut acc = DVector::zeros(n);
    for s in (from_level + 1..=to_level).rev() {
        let omega = model.transform(s - 1, assign.get(patch, s - 1));
        let inner = codes.layer(s - 1).column(patch) + &acc;
        acc = omega.tr_mul(&inner);
    }
    Ok(acc)
}

/// `‖Ω_{s,k(i,s)} r_{s,i} − z_{s,i}‖₂`, evaluated directly at layer `s`.
pub fn encoding_residual_norm(state: &McstState, model: &ModelBundle, patch: usize, layer: usize) -> f64 {
    let omega = model.transform(layer, state.assignments().get(patch, layer));
    let r = state.residuals().layer(layer).column(patch);
    (omega * r - state.codes().layer(layer).column(patch)).norm()
}

/// The same quantity expressed at a shallower layer through back-propagation:
/// `‖Ω_{l} r_{l,i} − z_{l,i} − b_i^{l←s}‖₂` for `from_layer < layer`.
pub fn encoding_residual_norm_disentangled(
    state: &McstState,
    model: &ModelBundle,
    patch: usize,
    layer: usize,
    from_layer: usize,
) -> Result<f64> {
    if from_layer >= layer {
        return Err(Error::OutOfRange(format!(
            "disentangling layer {layer} from layer {from_layer}"
        )));
    }
    let b = backprop_vector(
        patch,
        from_layer + 1,
        layer + 1,
        state.codes(),
        state.assignments(),
        model,
    )?;
    let omega = model.transform(from_layer, state.assignments().get(patch, from_layer));
    let r = state.residuals().layer(from_layer).column(patch);
    Ok((omega * r - state.codes().layer(from_layer).column(patch) - b).norm())
}

/// Exact minimizer of the layer-`l` sparse-coding subproblem with all other
/// variables fixed; downstream residuals are re-propagated.
pub fn sparse_code_layer(
    state: &mut McstState,
    model: &ModelBundle,
    layer: usize,
    threshold: f64,
) -> Result<()> {
    let depth = (model.layers() - layer) as f64;
    let tail = backprop_tail_sum(state.codes(), state.assignments(), model, layer + 1);
    let mut v = apply_clustered(
        model.bank(layer),
        state.assignments().layer(layer),
        state.residuals().layer(layer),
        false,
    );
    v -= tail / depth;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite codes at layer {layer}")));
    }
    hard_threshold_in_place(v.as_mut_slice(), threshold / depth.sqrt());
    *state.codes.layer_mut(layer) = v;
    state.repropagate_after(layer, model);
    Ok(())
}

/// Reassigns every patch at layer `l` to the cluster minimizing the encoding
/// error summed over layers `l…L`, with codes and deeper assignments held
/// fixed. Ties keep the incumbent. Returns the number of patches that moved.
pub fn assign_clusters_layer(state: &mut McstState, model: &ModelBundle, layer: usize) -> Result<usize> {
    let clusters = model.clusters(layer);
    if clusters == 1 {
        return Ok(0);
    }
    // Σ_s ‖u − z_l − b^{l←s}‖² = depth·‖r‖² − 2·depth·⟨u, target⟩ + const,
    // and ‖u‖ = ‖r‖ for every unitary candidate, so the argmin over k is the
    // argmax of ⟨Ω_k r, target⟩.
    let target = layer_target(state, model, layer);
    let residual = state.residuals().layer(layer);
    let n = residual.nrows();
    let scores: Vec<Vec<f64>> = model
        .bank(layer)
        .par_iter()
        .map(|omega| {
            let u = omega * residual;
            u.as_slice()
                .chunks_exact(n)
                .zip(target.as_slice().chunks_exact(n))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let assign = state.assign.layer_mut(layer);
    let mut moved = 0;
    for (i, k) in assign.iter_mut().enumerate() {
        let mut best = *k;
        let mut best_score = scores[best][i];
        for (cand, s) in scores.iter().enumerate() {
            if s[i] > best_score {
                best = cand;
                best_score = s[i];
            }
        }
        if best != *k {
            *k = best;
            moved += 1;
        }
    }
    if moved > 0 {
        state.repropagate_after(layer, model);
    }
    Ok(moved)
}

/// Closed-form orthogonal Procrustes update of every transform in layer `l`.
/// Empty clusters keep their previous transform.
pub fn transform_update_layer(state: &mut McstState, model: &mut ModelBundle, layer: usize) -> Result<()> {
    let target = layer_target(state, model, layer);
    let members = state.assignments().members(layer, model.clusters(layer));
    let residual = state.residuals().layer(layer);
    let updates: Vec<Result<Option<DMatrix<f64>>>> = members
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            if idx.is_empty() {
                return Ok(None);
            }
            let g = if idx.len() == residual.ncols() {
                residual * target.transpose()
            } else {
                residual.select_columns(idx) * target.select_columns(idx).transpose()
            };
            procrustes(g)
                .map(Some)
                .map_err(|e| Error::Numerical(format!("transform ({layer},{k}): {e}")))
        })
        .collect();
    for (k, update) in updates.into_iter().enumerate() {
        if let Some(omega) = update? {
            model.set_transform(layer, k, omega);
        }
    }
    state.repropagate_after(layer, model);
    Ok(())
}

/// `argmin_{ΩΩᵀ=I} ‖Ω R − Y‖_F` given `G = R Yᵀ`: with `G = UΣVᵀ`, `Ω = V Uᵀ`.
///
/// The SVD comes from faer: nalgebra's SVD loses accuracy on rank-deficient
/// `G`, which arises whenever a cluster holds fewer patches than `n`.
pub fn procrustes(g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in G".into()));
    }
    let (rows, cols) = g.shape();
    if rows != cols {
        return Err(Error::Shape(format!("G is {rows}x{cols}, expected square")));
    }
    let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| g[(i, j)]);
    let svd = m
        .svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let prod = svd.V() * svd.U().transpose();
    let omega = DMatrix::from_fn(rows, cols, |i, j| prod[(i, j)]);
    let err = unitarity_error(&omega);
    if !(err <= UNITARY_TOL) {
        return Err(Error::Invariant(format!("Procrustes result off unitary by {err:e}")));
    }
    Ok(omega)
}

/// Training cost `Σ_l Σ_i ‖Ω_{l,k(i,l)} r_{l,i} − z_{l,i}‖² + η_l² ‖z_{l,i}‖₀`,
/// with residuals rebuilt from the input patches.
pub fn training_objective(
    patches: &DMatrix<f64>,
    codes: &CodeStack,
    assign: &AssignmentTable,
    model: &ModelBundle,
    thresholds: &[f64],
) -> Result<f64> {
    if thresholds.len() != model.layers() {
        return Err(Error::Shape(format!(
            "{} thresholds for {} layers",
            thresholds.len(),
            model.layers()
        )));
    }
    check_inputs(patches, codes, assign, model)?;
    let mut residual = patches.clone();
    let mut total = 0.0;
    for l in 0..model.layers() {
        let encoded = apply_clustered(model.bank(l), assign.layer(l), &residual, false) - codes.layer(l);
        total += encoded.norm_squared() + thresholds[l].powi(2) * codes.nnz(l) as f64;
        residual = encoded;
    }
    Ok(total)
}

impl McstState {
    pub fn objective(&self, model: &ModelBundle, thresholds: &[f64]) -> Result<f64> {
        training_objective(self.patches(), &self.codes, &self.assign, model, thresholds)
    }
}
