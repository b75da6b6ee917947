use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear attenuation of water in 1/mm; images are stored in HU-like units
/// where water reads 1000 and air 0.
pub const MU_WATER_PER_MM: f64 = 0.02;

/// Parallel-beam scan over a square-pixel image grid centred on the rotation axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub n_views: usize,
    pub n_detectors: usize,
    /// Detector bin spacing in mm.
    pub detector_spacing: f64,
    /// Pixel spacing in mm (Δx = Δy).
    pub pixel_spacing: f64,
    pub image_height: usize,
    pub image_width: usize,
    /// Line-integral units per (image unit · mm).
    pub attenuation_scale: f64,
    angles: Vec<f64>,
}

impl ScanGeometry {
    /// Views uniform over `[0, π)` with HU-like image units.
    pub fn parallel(
        n_views: usize,
        n_detectors: usize,
        detector_spacing: f64,
        pixel_spacing: f64,
        image_height: usize,
        image_width: usize,
    ) -> Result<Self> {
        Self::with_scale(
            n_views,
            n_detectors,
            detector_spacing,
            pixel_spacing,
            image_height,
            image_width,
            MU_WATER_PER_MM / 1000.0,
        )
    }

    pub fn with_scale(
        n_views: usize,
        n_detectors: usize,
        detector_spacing: f64,
        pixel_spacing: f64,
        image_height: usize,
        image_width: usize,
        attenuation_scale: f64,
    ) -> Result<Self> {
        if n_views == 0 || n_detectors == 0 || image_height == 0 || image_width == 0 {
            return Err(Error::InvalidGeometry(
                "views, detectors and image size must be positive".into(),
            ));
        }
        if !(detector_spacing > 0.0 && pixel_spacing > 0.0 && attenuation_scale > 0.0) {
            return Err(Error::InvalidGeometry("spacings and scale must be positive".into()));
        }
        let angles = (0..n_views)
            .map(|v| PI * v as f64 / n_views as f64)
            .collect();
        Ok(Self {
            n_views,
            n_detectors,
            detector_spacing,
            pixel_spacing,
            image_height,
            image_width,
            attenuation_scale,
            angles,
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_detectors
    }

    pub fn n_pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Signed distance of detector bin `b` from the central ray, in mm.
    pub fn detector_offset(&self, b: usize) -> f64 {
        (b as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }
}

/// Line integrals indexed by (view, detector), view-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_views: usize,
    n_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_detectors: usize) -> Self {
        Self {
            n_views,
            n_detectors,
            data: vec![0.0; n_views * n_detectors],
        }
    }

    pub fn from_vec(n_views: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_detectors {
            return Err(Error::Shape(format!(
                "{} values for a {n_views}x{n_detectors} sinogram",
                data.len()
            )));
        }
        Ok(Self {
            n_views,
            n_detectors,
            data,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_detectors..(v + 1) * self.n_detectors]
    }

    pub fn check_geometry(&self, geom: &ScanGeometry) -> Result<()> {
        if self.n_views != geom.n_views || self.n_detectors != geom.n_detectors {
            return Err(Error::Shape(format!(
                "sinogram is {}x{}, geometry expects {}x{}",
                self.n_views, self.n_detectors, geom.n_views, geom.n_detectors
            )));
        }
        Ok(())
    }
}
