//! Desk-scale 2D parallel-beam CT: phantoms, projector, measurement noise,
//! filtered backprojection and the diagonal majorizer of the data term.

mod fbp;
mod geometry;
mod noise;
mod phantom;
mod projector;

pub use fbp::{fbp, fbp_with_cutoff, HANN_CUTOFF};
pub use geometry::{ScanGeometry, Sinogram, MU_WATER_PER_MM};
pub use noise::{counts_to_sinogram, simulate_counts, NoiseModel, COUNT_FLOOR};
pub use phantom::{
    parse_ellipses, random_head_ellipses, render_ellipses, shepp_logan_ellipses, Ellipse, Phantom,
};
pub use projector::{IdentityOperator, ParallelBeamProjector, SystemOperator};

use crate::error::{Error, Result};
use crate::image::Image;

pub fn forward_project(x: &Image, geom: &ScanGeometry) -> Result<Sinogram> {
    ParallelBeamProjector::new(geom.clone()).project(x)
}

pub fn back_project(s: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    ParallelBeamProjector::new(geom.clone()).back_project(s)
}

/// Diagonal majorizer `H_A = Aᵀ W (A·1)` of `AᵀWA`; valid because every
/// system-matrix entry is nonnegative.
pub fn majorizer<A: SystemOperator + ?Sized>(a: &A, weights: &[f64]) -> Result<Image> {
    if weights.len() != a.data_len() {
        return Err(Error::Shape(format!(
            "{} weights for {} measurements",
            weights.len(),
            a.data_len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Invariant("weights must be finite and nonnegative".into()));
    }
    let (h, w) = a.image_dims();
    let mut row_sums = a.forward(&vec![1.0; h * w]);
    for (r, wt) in row_sums.iter_mut().zip(weights) {
        *r *= wt;
    }
    Image::from_vec(h, w, a.adjoint(&row_sums))
}

/// Measured data, statistical weights and the precomputed majorizer.
#[derive(Clone, Debug)]
pub struct WeightedScan {
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub majorizer: Image,
}

impl WeightedScan {
    pub fn new<A: SystemOperator + ?Sized>(a: &A, y: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if y.len() != a.data_len() {
            return Err(Error::Shape(format!(
                "{} measurements for an operator with {} rays",
                y.len(),
                a.data_len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sinogram has non-finite entries".into()));
        }
        let majorizer = majorizer(a, &weights)?;
        Ok(Self { y, weights, majorizer })
    }

    /// `½ ‖y − A x‖²_W`.
    pub fn data_fidelity<A: SystemOperator + ?Sized>(&self, a: &A, x: &[f64]) -> f64 {
        let ax = a.forward(x);
        0.5 * ax
            .iter()
            .zip(&self.y)
            .zip(&self.weights)
            .map(|((p, y), w)| w * (p - y) * (p - y))
            .sum::<f64>()
    }

    /// `Aᵀ W (A x − y)`.
    pub fn data_gradient<A: SystemOperator + ?Sized>(&self, a: &A, x: &[f64]) -> Vec<f64> {
        let mut r = a.forward(x);
        for ((r, y), w) in r.iter_mut().zip(&self.y).zip(&self.weights) {
            *r = w * (*r - y);
        }
        a.adjoint(&r)
    }
}
