use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::geometry::{ScanGeometry, Sinogram};
use crate::error::Result;
use crate::image::Image;

/// Hann apodization cutoff as a fraction of the Nyquist frequency.
pub const HANN_CUTOFF: f64 = 0.4;

/// Frequency response of the band-limited ramp filter times a Hann window,
/// sampled on a zero-padded grid of `len` bins.
fn filter_response(len: usize, spacing: f64, cutoff: f64) -> Vec<f64> {
    // Spatial band-limited ramp: h[0] = 1/(4τ²), h[odd n] = −1/(nπτ)², h[even] = 0.
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for (i, k) in kernel.iter_mut().enumerate() {
        let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
        let v = if n == 0 {
            1.0 / (4.0 * spacing * spacing)
        } else if n % 2 != 0 {
            -1.0 / ((n as f64) * std::f64::consts::PI * spacing).powi(2)
        } else {
            0.0
        };
        *k = Complex::new(v, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    let fc = cutoff * 0.5;
    kernel
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let f = if i <= len / 2 { i } else { len - i } as f64 / len as f64;
            let window = if f <= fc {
                0.5 * (1.0 + (std::f64::consts::PI * f / fc).cos())
            } else {
                0.0
            };
            h.re * window
        })
        .collect()
}

/// Filtered backprojection in image units (the inverse of the projector's
/// attenuation scale is applied). The output is not clamped.
pub fn fbp(y: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    fbp_with_cutoff(y, geom, HANN_CUTOFF)
}

pub fn fbp_with_cutoff(y: &Sinogram, geom: &ScanGeometry, cutoff: f64) -> Result<Image> {
    y.check_geometry(geom)?;
    let nb = geom.n_detectors;
    let len = (2 * nb).next_power_of_two();
    let tau = geom.detector_spacing;
    let response = filter_response(len, tau, cutoff);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let filtered: Vec<Vec<f64>> = (0..geom.n_views)
        .into_par_iter()
        .map(|v| {
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for (b, &p) in y.view(v).iter().enumerate() {
                buf[b] = Complex::new(p, 0.0);
            }
            fwd.process(&mut buf);
            for (c, h) in buf.iter_mut().zip(&response) {
                *c *= *h;
            }
            inv.process(&mut buf);
            // Inverse FFT is unnormalized; τ discretizes the convolution integral.
            let scale = tau / len as f64;
            buf[..nb].iter().map(|c| c.re * scale).collect()
        })
        .collect();

    let (h, w) = (geom.image_height, geom.image_width);
    let delta = geom.pixel_spacing;
    let trig: Vec<(f64, f64)> = geom.angles().iter().map(|a| a.sin_cos()).collect();
    let centre = (nb as f64 - 1.0) / 2.0;
    let scale = std::f64::consts::PI / geom.n_views as f64 / geom.attenuation_scale;
    let mut data = vec![0.0; h * w];
    data.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        let py = ((h as f64 - 1.0) / 2.0 - r as f64) * delta;
        for (c, out) in row.iter_mut().enumerate() {
            let px = (c as f64 - (w as f64 - 1.0) / 2.0) * delta;
            let mut acc = 0.0;
            for (q, &(sin, cos)) in filtered.iter().zip(&trig) {
                let t = (px * cos + py * sin) / tau + centre;
                let i0 = t.floor();
                let frac = t - i0;
                let i0 = i0 as isize;
                let at = |i: isize| if i >= 0 && (i as usize) < nb { q[i as usize] } else { 0.0 };
                acc += (1.0 - frac) * at(i0) + frac * at(i0 + 1);
            }
            *out = acc * scale;
        }
    });
    Image::from_vec(h, w, data)
}
