use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mcst::{backprop_tail_sum, training_objective, AssignmentTable, CodeStack, ModelBundle};
use crate::patching::{aggregate_patches, extract_patches, overlap_counts, PatchGeometry};

/// A smooth image-domain penalty with a fixed diagonal curvature bound, as
/// consumed by the relaxed LALM image update.
pub trait SmoothPenalty: Sync {
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn curvature(&self) -> &[f64];
    fn value(&self, x: &[f64]) -> f64;
}

/// `S(x)` at the given codes and assignments: the layered encoding error of
/// the patches of `x` plus `γ_l²` times the code sparsity.
pub fn regularizer_value_s(
    x: &Image,
    geom: &PatchGeometry,
    model: &ModelBundle,
    codes: &CodeStack,
    assign: &AssignmentTable,
    gamma: &[f64],
) -> Result<f64> {
    let patches = extract_patches(x, geom)?.into_data();
    training_objective(&patches, codes, assign, model, gamma)
}

/// `S₂(x)`: the encoding-error part of `S(x)` without the sparsity term.
pub fn s2_value(
    x: &Image,
    geom: &PatchGeometry,
    model: &ModelBundle,
    codes: &CodeStack,
    assign: &AssignmentTable,
) -> Result<f64> {
    regularizer_value_s(x, geom, model, codes, assign, &vec![0.0; model.layers()])
}

/// `∇(βS₂)(x) = 2β Σ_i P_iᵀ (L·P_i x − Σ_l b_i^{0←l})`.
pub fn grad_s2(
    x: &Image,
    geom: &PatchGeometry,
    model: &ModelBundle,
    codes: &CodeStack,
    assign: &AssignmentTable,
    beta: f64,
) -> Result<Image> {
    let layers = model.layers();
    let mut cols = extract_patches(x, geom)?.into_data();
    if codes.layer(0).shape() != cols.shape() || assign.patches() != cols.ncols() {
        return Err(Error::Shape("codes do not match the patch geometry".into()));
    }
    assign.check_against(model)?;
    cols *= layers as f64;
    cols -= backprop_tail_sum(codes, assign, model, 0);
    cols *= 2.0 * beta;
    aggregate_patches(&cols, geom)
}

/// `H_{S₂} = 2Lβ Σ_i P_iᵀ P_i`, a diagonal given by the overlap counts.
pub fn hessian_s2(geom: &PatchGeometry, layers: usize, beta: f64) -> Image {
    let counts = overlap_counts(geom);
    let (h, w) = counts.dims();
    let scale = 2.0 * layers as f64 * beta;
    Image::from_fn(h, w, |r, c| scale * counts.get(r, c) as f64)
}

/// `βS₂` frozen at fixed codes and assignments. Because `P_i` only selects
/// pixels, `Σ_i P_iᵀ P_i x` is the overlap count times `x`, so the gradient
/// reduces to `2β(L·counts ⊙ x − Σ_i P_iᵀ Σ_l b_i^{0←l})` with the second
/// term computed once.
pub struct McstPenalty<'a> {
    geom: PatchGeometry,
    model: &'a ModelBundle,
    codes: &'a CodeStack,
    assign: &'a AssignmentTable,
    beta: f64,
    counts: Vec<f64>,
    pulled_back: Vec<f64>,
    curvature: Vec<f64>,
}

impl<'a> McstPenalty<'a> {
    pub fn new(
        geom: PatchGeometry,
        model: &'a ModelBundle,
        codes: &'a CodeStack,
        assign: &'a AssignmentTable,
        beta: f64,
    ) -> Result<Self> {
        if codes.layer(0).shape() != (model.patch_dim(), geom.patch_count()) {
            return Err(Error::Shape("codes do not match the patch geometry".into()));
        }
        assign.check_against(model)?;
        let tail: DMatrix<f64> = backprop_tail_sum(codes, assign, model, 0);
        let pulled_back = aggregate_patches(&tail, &geom)?.into_vec();
        let counts: Vec<f64> = overlap_counts(&geom).counts().iter().map(|&c| c as f64).collect();
        let curvature = hessian_s2(&geom, model.layers(), beta).into_vec();
        Ok(Self {
            geom,
            model,
            codes,
            assign,
            beta,
            counts,
            pulled_back,
            curvature,
        })
    }
}

impl SmoothPenalty for McstPenalty<'_> {
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let l = self.model.layers() as f64;
        x.iter()
            .zip(&self.counts)
            .zip(&self.pulled_back)
            .map(|((x, c), b)| 2.0 * self.beta * (l * c * x - b))
            .collect()
    }

    fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    fn value(&self, x: &[f64]) -> f64 {
        let img = Image::from_vec(self.geom.image_height(), self.geom.image_width(), x.to_vec())
            .expect("penalty called with the wrong image size");
        self.beta
            * s2_value(&img, &self.geom, self.model, self.codes, self.assign)
                .expect("penalty state was validated on construction")
    }
}

/// The zero penalty, for unregularized weighted least squares.
pub struct NoPenalty {
    zeros: Vec<f64>,
}

impl NoPenalty {
    pub fn new(pixels: usize) -> Self {
        Self { zeros: vec![0.0; pixels] }
    }
}

impl SmoothPenalty for NoPenalty {
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn curvature(&self) -> &[f64] {
        &self.zeros
    }

    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
}
