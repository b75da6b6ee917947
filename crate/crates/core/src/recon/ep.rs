//! PWLS with an edge-preserving hyperbola potential on the 8-neighbourhood.

use serde::{Deserialize, Serialize};

use super::lalm::{LalmState, DEFAULT_ALPHA};
use super::regularizer::SmoothPenalty;
use crate::ct_sim::{SystemOperator, WeightedScan};
use crate::error::{Error, Result};
use crate::image::Image;

/// `φ(t) = δ²(√(1 + (t/δ)²) − 1)`.
pub fn potential(t: f64, delta: f64) -> f64 {
    delta * delta * ((1.0 + (t / delta).powi(2)).sqrt() - 1.0)
}

/// `φ'(t) = t / √(1 + (t/δ)²)`; `|φ''| ≤ 1`.
pub fn potential_derivative(t: f64, delta: f64) -> f64 {
    t / (1.0 + (t / delta).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// `κ_j = 1`.
    Uniform,
    /// `κ_j = √([AᵀW1]_j / [Aᵀ1]_j)`.
    Statistical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpConfig {
    pub beta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: KappaMode,
    /// Total relaxed-LALM steps.
    pub iterations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_delta() -> f64 {
    20.0
}

fn default_kappa() -> KappaMode {
    KappaMode::Uniform
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl EpConfig {
    pub fn new(beta: f64, delta: f64, iterations: usize) -> Self {
        Self {
            beta,
            delta,
            kappa: KappaMode::Uniform,
            iterations,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Config(format!("alpha must lie in (1, 2], got {}", self.alpha)));
        }
        Ok(())
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// `β Σ_j Σ_{k∈N_j} κ_j κ_k φ(x_j − x_k)` over ordered neighbour pairs.
pub struct EpPenalty {
    height: usize,
    width: usize,
    beta: f64,
    delta: f64,
    kappa: Vec<f64>,
    curvature: Vec<f64>,
}

impl EpPenalty {
    pub fn new(height: usize, width: usize, beta: f64, delta: f64, kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() != height * width {
            return Err(Error::Shape(format!(
                "{} κ weights for a {height}x{width} image",
                kappa.len()
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        let mut pen = Self {
            height,
            width,
            beta,
            delta,
            kappa,
            curvature: Vec::new(),
        };
        // Separable quadratic surrogate: |H_jk| summed along row j, with φ'' ≤ 1.
        pen.curvature = (0..height * width)
            .map(|j| {
                let mut s = 0.0;
                pen.for_neighbours(j, |k| s += pen.kappa[j] * pen.kappa[k]);
                4.0 * beta * s
            })
            .collect();
        Ok(pen)
    }

    pub fn uniform(height: usize, width: usize, beta: f64, delta: f64) -> Result<Self> {
        Self::new(height, width, beta, delta, vec![1.0; height * width])
    }

    fn for_neighbours(&self, j: usize, mut f: impl FnMut(usize)) {
        let (r, c) = ((j / self.width) as isize, (j % self.width) as isize);
        for (dr, dc) in NEIGHBOURS {
            let (rr, cc) = (r + dr, c + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width {
                f(rr as usize * self.width + cc as usize);
            }
        }
    }
}

impl SmoothPenalty for EpPenalty {
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut s = 0.0;
                self.for_neighbours(j, |k| {
                    s += self.kappa[j] * self.kappa[k] * potential_derivative(x[j] - x[k], self.delta)
                });
                2.0 * self.beta * s
            })
            .collect()
    }

    fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..x.len() {
            self.for_neighbours(j, |k| {
                total += self.kappa[j] * self.kappa[k] * potential(x[j] - x[k], self.delta)
            });
        }
        self.beta * total
    }
}

/// `√([AᵀW1]_j / [Aᵀ1]_j)`, zero where no ray passes.
pub fn statistical_kappa<A: SystemOperator + ?Sized>(a: &A, weights: &[f64]) -> Vec<f64> {
    let num = a.adjoint(weights);
    let den = a.adjoint(&vec![1.0; a.data_len()]);
    num.iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { (n / d).max(0.0).sqrt() } else { 0.0 })
        .collect()
}

/// Nonnegative PWLS-EP by relaxed LALM. Returns the image and the objective
/// after every step.
pub fn pwls_ep<A: SystemOperator + ?Sized>(
    a: &A,
    scan: &WeightedScan,
    cfg: &EpConfig,
    x0: &Image,
) -> Result<(Image, Vec<f64>)> {
    cfg.validate()?;
    let (h, w) = a.image_dims();
    if x0.dims() != (h, w) {
        return Err(Error::Shape(format!("initial image {:?}, operator expects {:?}", x0.dims(), (h, w))));
    }
    let kappa = match cfg.kappa {
        KappaMode::Uniform => vec![1.0; h * w],
        KappaMode::Statistical => statistical_kappa(a, &scan.weights),
    };
    let penalty = EpPenalty::new(h, w, cfg.beta, cfg.delta, kappa)?;
    let mut state = LalmState::new(a, scan, x0.as_slice().to_vec())?;
    let mut objective = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        state.step(a, scan, &penalty, cfg.alpha, true)?;
        objective.push(scan.data_fidelity(a, &state.x) + penalty.value(&state.x));
    }
    Ok((Image::from_vec(h, w, state.x)?, objective))
}
