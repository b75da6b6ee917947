use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 8;

/// Inscribed circle centred on the image: pixel centres within `min(H, W)/2`.
pub fn circular_roi(height: usize, width: usize) -> Vec<bool> {
    let radius = height.min(width) as f64 / 2.0;
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    (0..height * width)
        .map(|j| {
            let (r, c) = ((j / width) as f64, (j % width) as f64);
            (r - cy).powi(2) + (c - cx).powi(2) <= radius * radius
        })
        .collect()
}

pub fn rmse_roi(estimate: &Image, truth: &Image, roi: &[bool]) -> Result<f64> {
    estimate.check_same_shape(truth)?;
    if roi.len() != truth.len() {
        return Err(Error::Shape(format!("ROI has {} pixels, image {}", roi.len(), truth.len())));
    }
    let (sum, count) = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .zip(roi)
        .filter(|(_, &inside)| inside)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b) * (a - b), n + 1));
    if count == 0 {
        return Err(Error::InvalidGeometry("empty region of interest".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean SSIM over all 8×8 windows, dynamic range `max(truth) − min(truth)`.
pub fn ssim(estimate: &Image, truth: &Image) -> Result<f64> {
    let range = truth.max() - truth.min();
    ssim_with_range(estimate, truth, if range > 0.0 { range } else { 1.0 })
}

/// Mean SSIM over all 8×8 windows for a given dynamic range; symmetric in
/// its image arguments.
pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidGeometry(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let m = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=h - SSIM_WINDOW {
        for c0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (x, y) = (a.get(r, c), b.get(r, c));
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / m, sb / m);
            let va = saa / m - ma * ma;
            let vb = sbb / m - mb * mb;
            let cov = sab / m - ma * mb;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
