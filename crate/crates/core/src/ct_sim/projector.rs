//! Ray-driven parallel-beam system operator with exact intersection lengths.
//!
//! Each ray is traced through the pixel grid by merging its crossings of the
//! vertical and horizontal grid lines (Siddon's method). The forward and
//! back projections share the same coefficients, so the pair is an exact
//! adjoint up to floating-point rounding.

use rayon::prelude::*;

use super::geometry::{ScanGeometry, Sinogram};
use crate::error::Result;
use crate::image::Image;

/// Linear map from an image to measurement space.
pub trait SystemOperator: Sync {
    fn image_dims(&self) -> (usize, usize);
    fn data_len(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// `A = I`, handy for testing image-domain solvers.
#[derive(Clone, Copy, Debug)]
pub struct IdentityOperator {
    pub height: usize,
    pub width: usize,
}

impl SystemOperator for IdentityOperator {
    fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn data_len(&self) -> usize {
        self.height * self.width
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}

/// Stored coefficients of one view, CSR by detector.
#[derive(Clone, Debug)]
struct ViewCoefficients {
    offsets: Vec<u32>,
    pixels: Vec<u32>,
    weights: Vec<f64>,
}

/// Above this many estimated nonzeros the coefficients are traced on the fly.
const CACHE_LIMIT: usize = 12_000_000;
const VIEWS_PER_GROUP: usize = 8;

#[derive(Clone, Debug)]
pub struct ParallelBeamProjector {
    geom: ScanGeometry,
    cache: Option<Vec<ViewCoefficients>>,
}

impl ParallelBeamProjector {
    pub fn new(geom: ScanGeometry) -> Self {
        let estimate = geom.n_rays() * (geom.image_height + geom.image_width);
        let cache = (estimate <= CACHE_LIMIT).then(|| {
            (0..geom.n_views)
                .into_par_iter()
                .map(|v| {
                    let mut c = ViewCoefficients {
                        offsets: vec![0],
                        pixels: Vec::new(),
                        weights: Vec::new(),
                    };
                    for b in 0..geom.n_detectors {
                        trace_ray(&geom, v, b, |pix, w| {
                            c.pixels.push(pix as u32);
                            c.weights.push(w);
                        });
                        c.offsets.push(c.pixels.len() as u32);
                    }
                    c
                })
                .collect()
        });
        Self { geom, cache }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    fn for_each_in_view(&self, view: usize, mut f: impl FnMut(usize, usize, f64)) {
        match &self.cache {
            Some(cache) => {
                let c = &cache[view];
                for b in 0..self.geom.n_detectors {
                    let (s, e) = (c.offsets[b] as usize, c.offsets[b + 1] as usize);
                    for k in s..e {
                        f(b, c.pixels[k] as usize, c.weights[k]);
                    }
                }
            }
            None => {
                for b in 0..self.geom.n_detectors {
                    trace_ray(&self.geom, view, b, |pix, w| f(b, pix, w));
                }
            }
        }
    }

    pub fn project(&self, x: &Image) -> Result<Sinogram> {
        x.check_dims(self.image_dims())?;
        Sinogram::from_vec(self.geom.n_views, self.geom.n_detectors, self.forward(x.as_slice()))
    }

    pub fn back_project(&self, s: &Sinogram) -> Result<Image> {
        s.check_geometry(&self.geom)?;
        let (h, w) = self.image_dims();
        Image::from_vec(h, w, self.adjoint(s.as_slice()))
    }
}

impl SystemOperator for ParallelBeamProjector {
    fn image_dims(&self) -> (usize, usize) {
        (self.geom.image_height, self.geom.image_width)
    }

    fn data_len(&self) -> usize {
        self.geom.n_rays()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.geom.n_detectors;
        let mut out = vec![0.0; self.geom.n_rays()];
        out.par_chunks_mut(nb).enumerate().for_each(|(v, row)| {
            self.for_each_in_view(v, |b, pix, w| row[b] += w * x[pix]);
        });
        out
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let nb = self.geom.n_detectors;
        let npix = self.geom.n_pixels();
        let groups: Vec<usize> = (0..self.geom.n_views).step_by(VIEWS_PER_GROUP).collect();
        // Per-group partial images summed in group order: the result does not
        // depend on how many workers ran.
        let partials: Vec<Vec<f64>> = groups
            .par_iter()
            .map(|&start| {
                let mut acc = vec![0.0; npix];
                for v in start..(start + VIEWS_PER_GROUP).min(self.geom.n_views) {
                    let row = &y[v * nb..(v + 1) * nb];
                    self.for_each_in_view(v, |b, pix, w| acc[pix] += w * row[b]);
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; npix];
        for part in partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }
}

/// Visits `(pixel index, coefficient)` for every pixel crossed by ray
/// `(view, detector)`. Coefficients are intersection lengths (mm) times the
/// geometry's attenuation scale.
pub(crate) fn trace_ray(geom: &ScanGeometry, view: usize, det: usize, mut visit: impl FnMut(usize, f64)) {
    let (h, w) = (geom.image_height, geom.image_width);
    let delta = geom.pixel_spacing;
    let (sin, cos) = geom.angles()[view].sin_cos();
    let u = geom.detector_offset(det);
    let (px, py) = (u * cos, u * sin);
    let (dx, dy) = (-sin, cos);
    let (xmin, xmax) = (-(w as f64) * delta / 2.0, w as f64 * delta / 2.0);
    let (ymin, ymax) = (-(h as f64) * delta / 2.0, h as f64 * delta / 2.0);

    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for (p, d, lo, hi) in [(px, dx, xmin, xmax), (py, dy, ymin, ymax)] {
        if d.abs() < 1e-12 {
            if p < lo || p > hi {
                return;
            }
        } else {
            let (t1, t2) = ((lo - p) / d, (hi - p) / d);
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
    }
    if tmax <= tmin {
        return;
    }

    let crossings = |p: f64, d: f64, lo: f64, count: usize| -> Vec<f64> {
        if d.abs() < 1e-12 {
            return Vec::new();
        }
        let mut ts: Vec<f64> = (0..=count)
            .map(|j| (lo + j as f64 * delta - p) / d)
            .filter(|&t| t > tmin && t < tmax)
            .collect();
        if d < 0.0 {
            ts.reverse();
        }
        ts
    };
    let tx = crossings(px, dx, xmin, w);
    let ty = crossings(py, dy, ymin, h);

    let scale = geom.attenuation_scale;
    let mut emit = |t0: f64, t1: f64| {
        let len = t1 - t0;
        if len <= 0.0 {
            return;
        }
        let mid = 0.5 * (t0 + t1);
        let x = px + mid * dx;
        let y = py + mid * dy;
        let col = (((x - xmin) / delta).floor() as isize).clamp(0, w as isize - 1) as usize;
        let row = (((ymax - y) / delta).floor() as isize).clamp(0, h as isize - 1) as usize;
        visit(row * w + col, len * scale);
    };

    let (mut i, mut j) = (0, 0);
    let mut prev = tmin;
    while i < tx.len() || j < ty.len() {
        let next = if j >= ty.len() || (i < tx.len() && tx[i] <= ty[j]) {
            i += 1;
            tx[i - 1]
        } else {
            j += 1;
            ty[j - 1]
        };
        emit(prev, next);
        prev = next;
    }
    emit(prev, tmax);
}

impl Image {
    pub(crate) fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(crate::error::Error::Shape(format!(
                "image is {:?}, operator expects {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }
}
