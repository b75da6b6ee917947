//! Relaxed linearized augmented Lagrangian image update with a decreasing
//! relaxation parameter.

use std::f64::consts::PI;

use super::regularizer::SmoothPenalty;
use crate::ct_sim::{SystemOperator, WeightedScan};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.999;

/// `ρ_0 = 1`, `ρ_r = π/(α(r+1)) · √(1 − (π/(2α(r+1)))²)` for `r ≥ 1`.
pub fn rho_schedule(r: usize, alpha: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let a = PI / (alpha * (r + 1) as f64);
    a * (1.0 - (a / 2.0).powi(2)).sqrt()
}

/// Iterate and auxiliaries of the relaxed LALM recursion. `s` is the most
/// recent search direction (empty before the first step).
#[derive(Clone, Debug)]
pub struct LalmState {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub zeta: Vec<f64>,
    pub s: Vec<f64>,
    pub rho: f64,
    pub r: usize,
}

impl LalmState {
    /// `g⁰ = ζ⁰ = AᵀW(Ax⁰ − y)`, `h⁰ = H_A x⁰ − ζ⁰`, `ρ = 1`.
    pub fn new<A: SystemOperator + ?Sized>(a: &A, scan: &WeightedScan, x0: Vec<f64>) -> Result<Self> {
        let (height, width) = a.image_dims();
        if x0.len() != height * width || scan.majorizer.len() != x0.len() {
            return Err(Error::Shape(format!(
                "initial image has {} pixels, operator expects {}",
                x0.len(),
                height * width
            )));
        }
        let zeta = scan.data_gradient(a, &x0);
        let h = x0
            .iter()
            .zip(scan.majorizer.as_slice())
            .zip(&zeta)
            .map(|((x, d), z)| d * x - z)
            .collect();
        Ok(Self {
            g: zeta.clone(),
            zeta,
            h,
            s: Vec::new(),
            x: x0,
            rho: 1.0,
            r: 0,
        })
    }

    /// One inner iteration; costs one forward and one back projection.
    pub fn step<A: SystemOperator + ?Sized>(
        &mut self,
        a: &A,
        scan: &WeightedScan,
        penalty: &dyn SmoothPenalty,
        alpha: f64,
        nonnegative: bool,
    ) -> Result<()> {
        let rho = self.rho;
        let ha = scan.majorizer.as_slice();
        self.s = self
            .x
            .iter()
            .zip(ha)
            .zip(&self.h)
            .zip(&self.g)
            .map(|(((x, d), h), g)| rho * (d * x - h) + (1.0 - rho) * g)
            .collect();
        let grad = penalty.gradient(&self.x);
        let curv = penalty.curvature();
        for j in 0..self.x.len() {
            let denom = rho * ha[j] + curv[j];
            if denom > 0.0 {
                let mut v = self.x[j] - (self.s[j] + grad[j]) / denom;
                if nonnegative {
                    v = v.max(0.0);
                }
                self.x[j] = v;
            }
        }
        self.zeta = scan.data_gradient(a, &self.x);
        for j in 0..self.x.len() {
            self.g[j] = rho / (rho + 1.0) * (alpha * self.zeta[j] + (1.0 - alpha) * self.g[j])
                + self.g[j] / (rho + 1.0);
            self.h[j] = alpha * (ha[j] * self.x[j] - self.zeta[j]) + (1.0 - alpha) * self.h[j];
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite image at inner iteration {}",
                self.r + 1
            )));
        }
        self.r += 1;
        self.rho = rho_schedule(self.r, alpha);
        Ok(())
    }
}

/// Runs `iterations` relaxed LALM steps from `x0` with `ρ` restarted at 1.
pub fn image_update<A: SystemOperator + ?Sized>(
    a: &A,
    scan: &WeightedScan,
    penalty: &dyn SmoothPenalty,
    x0: Vec<f64>,
    iterations: usize,
    alpha: f64,
    nonnegative: bool,
) -> Result<LalmState> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::Config(format!("alpha must lie in (1, 2], got {alpha}")));
    }
    let mut state = LalmState::new(a, scan, x0)?;
    for _ in 0..iterations {
        state.step(a, scan, penalty, alpha, nonnegative)?;
    }
    Ok(state)
}
