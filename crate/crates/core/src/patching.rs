//! Overlapping patch extraction and its adjoint.
//!
//! Patches lie fully inside the image (no padding, no wrap-around), so each
//! extraction operator is a pure pixel selection. Patches are ordered
//! row-major over their top-left corners and vectorized row-major inside the
//! patch.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    image_height: usize,
    image_width: usize,
    patch_side: usize,
    stride: usize,
}

impl PatchGeometry {
    pub fn new(
        image_height: usize,
        image_width: usize,
        patch_side: usize,
        stride: usize,
    ) -> Result<Self> {
        if patch_side == 0 || stride == 0 {
            return Err(Error::InvalidGeometry(
                "patch side and stride must be positive".into(),
            ));
        }
        if patch_side > image_height.min(image_width) {
            return Err(Error::InvalidGeometry(format!(
                "patch side {patch_side} exceeds image {image_height}x{image_width}"
            )));
        }
        Ok(Self {
            image_height,
            image_width,
            patch_side,
            stride,
        })
    }

    pub fn for_image(image: &Image, patch_side: usize, stride: usize) -> Result<Self> {
        Self::new(image.height(), image.width(), patch_side, stride)
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Length of a vectorized patch, `patch_side²`.
    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn patches_down(&self) -> usize {
        (self.image_height - self.patch_side) / self.stride + 1
    }

    pub fn patches_across(&self) -> usize {
        (self.image_width - self.patch_side) / self.stride + 1
    }

    pub fn patch_count(&self) -> usize {
        self.patches_down() * self.patches_across()
    }

    /// Top-left corner `(row, col)` of patch `i`.
    #[inline]
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let across = self.patches_across();
        ((i / across) * self.stride, (i % across) * self.stride)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.dims() != (self.image_height, self.image_width) {
            return Err(Error::InvalidGeometry(format!(
                "image is {:?}, geometry expects {}x{}",
                image.dims(),
                self.image_height,
                self.image_width
            )));
        }
        Ok(())
    }
}

/// Vectorized patches, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    data: DMatrix<f64>,
    geometry: PatchGeometry,
}

impl PatchMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

/// Per-pixel count of covering patches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapMap {
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

impl OverlapMap {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.width + col]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.height,
            self.width,
            self.counts.iter().map(|&c| c as f64).collect(),
        )
        .expect("overlap map dimensions are consistent")
    }
}

pub fn extract_patches(image: &Image, geom: &PatchGeometry) -> Result<PatchMatrix> {
    geom.check_image(image)?;
    let p = geom.patch_side;
    let n = geom.patch_dim();
    let count = geom.patch_count();
    let width = image.width();
    let src = image.as_slice();
    let mut data = DMatrix::<f64>::zeros(n, count);
    for (i, mut column) in data.column_iter_mut().enumerate() {
        let (r0, c0) = geom.origin(i);
        for dr in 0..p {
            let row = &src[(r0 + dr) * width + c0..(r0 + dr) * width + c0 + p];
            for (dc, &v) in row.iter().enumerate() {
                column[dr * p + dc] = v;
            }
        }
    }
    Ok(PatchMatrix {
        data,
        geometry: *geom,
    })
}

/// Extracts patches from several equally sized images into one matrix.
pub fn extract_patches_many(images: &[Image], patch_side: usize, stride: usize) -> Result<DMatrix<f64>> {
    let mut blocks = Vec::with_capacity(images.len());
    for image in images {
        let geom = PatchGeometry::for_image(image, patch_side, stride)?;
        blocks.push(extract_patches(image, &geom)?.into_data());
    }
    let n = patch_side * patch_side;
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::<f64>::zeros(n, total);
    let mut offset = 0;
    for block in blocks {
        let cols = block.ncols();
        out.columns_mut(offset, cols).copy_from(&block);
        offset += cols;
    }
    Ok(out)
}

/// Applies the adjoint of [`extract_patches`]: `Σ_i P_iᵀ c_i`.
pub fn aggregate_patches(columns: &DMatrix<f64>, geom: &PatchGeometry) -> Result<Image> {
    if columns.nrows() != geom.patch_dim() || columns.ncols() != geom.patch_count() {
        return Err(Error::Shape(format!(
            "patch matrix is {}x{}, geometry expects {}x{}",
            columns.nrows(),
            columns.ncols(),
            geom.patch_dim(),
            geom.patch_count()
        )));
    }
    let p = geom.patch_side;
    let width = geom.image_width;
    let mut out = Image::zeros(geom.image_height, geom.image_width);
    let dst = out.as_mut_slice();
    // Fixed accumulation order keeps the result independent of scheduling.
    for (i, column) in columns.column_iter().enumerate() {
        let (r0, c0) = geom.origin(i);
        for dr in 0..p {
            let row = &mut dst[(r0 + dr) * width + c0..(r0 + dr) * width + c0 + p];
            for (dc, v) in row.iter_mut().enumerate() {
                *v += column[dr * p + dc];
            }
        }
    }
    Ok(out)
}

pub fn overlap_counts(geom: &PatchGeometry) -> OverlapMap {
    let (h, w, p) = (geom.image_height, geom.image_width, geom.patch_side);
    let mut counts = vec![0u32; h * w];
    for i in 0..geom.patch_count() {
        let (r0, c0) = geom.origin(i);
        for r in r0..r0 + p {
            for c in &mut counts[r * w + c0..r * w + c0 + p] {
                *c += 1;
            }
        }
    }
    OverlapMap {
        height: h,
        width: w,
        counts,
    }
}
