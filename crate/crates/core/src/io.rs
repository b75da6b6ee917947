//! Little-endian binary formats for images, sinograms, weights and models.
//!
//! Image, sinogram and weight files carry a 6-byte magic, two `u32`
//! dimensions and `f32` samples in row-major (view-major) order. Patch files
//! (`MCPAT1`) store `n`, `N` and then one patch after another. Model files
//! carry `MCST1`, a `u32` version, `u32` L, patch side and cluster counts,
//! `f64` thresholds, then every transform in layer, cluster, row-major order
//! as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::ct_sim::Sinogram;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mcst::ModelBundle;

pub const IMAGE_MAGIC: &[u8; 6] = b"MCIMG1";
pub const SINOGRAM_MAGIC: &[u8; 6] = b"MCSIN1";
pub const WEIGHTS_MAGIC: &[u8; 6] = b"MCWGT1";
pub const PATCHES_MAGIC: &[u8; 6] = b"MCPAT1";
pub const MODEL_MAGIC: &[u8; 5] = b"MCST1";
pub const MODEL_VERSION: u32 = 1;

fn write_grid(path: &Path, magic: &[u8], rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(magic)?;
    out.write_all(&(rows as u32).to_le_bytes())?;
    out.write_all(&(cols as u32).to_le_bytes())?;
    for &v in data {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact_vec(input: &mut impl Read, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(input: &mut impl Read, what: &str) -> Result<u32> {
    let b = read_exact_vec(input, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_grid(path: &Path, magic: &[u8], what: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut input = BufReader::new(File::open(path)?);
    let found = read_exact_vec(&mut input, magic.len(), what)?;
    if found != magic {
        return Err(Error::Format(format!(
            "{}: not a {what} file (magic {:?})",
            path.display(),
            String::from_utf8_lossy(&found)
        )));
    }
    let rows = read_u32(&mut input, what)? as usize;
    let cols = read_u32(&mut input, what)? as usize;
    let bytes = read_exact_vec(&mut input, rows * cols * 4, what)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((rows, cols, data))
}

/// Rounds every value to the nearest `f32`, as stored on disk.
pub fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_grid(path.as_ref(), IMAGE_MAGIC, image.height(), image.width(), image.as_slice())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let (h, w, data) = read_grid(path.as_ref(), IMAGE_MAGIC, "image")?;
    Image::from_vec(h, w, data)
}

pub fn write_sinogram(path: impl AsRef<Path>, sinogram: &Sinogram) -> Result<()> {
    write_grid(
        path.as_ref(),
        SINOGRAM_MAGIC,
        sinogram.n_views(),
        sinogram.n_detectors(),
        sinogram.as_slice(),
    )
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let (v, b, data) = read_grid(path.as_ref(), SINOGRAM_MAGIC, "sinogram")?;
    Sinogram::from_vec(v, b, data)
}

/// Weights share the sinogram layout.
pub fn write_weights(path: impl AsRef<Path>, n_views: usize, n_detectors: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n_views * n_detectors {
        return Err(Error::Shape(format!(
            "{} weights for a {n_views}x{n_detectors} scan",
            weights.len()
        )));
    }
    write_grid(path.as_ref(), WEIGHTS_MAGIC, n_views, n_detectors, weights)
}

/// Returns `(n_views, n_detectors, weights)`.
pub fn read_weights(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    read_grid(path.as_ref(), WEIGHTS_MAGIC, "weights")
}

/// Writes an `n × N` patch matrix; each patch is stored contiguously.
pub fn write_patches(path: impl AsRef<Path>, patches: &DMatrix<f64>) -> Result<()> {
    // nalgebra storage is column-major, so the slice is already patch by patch.
    write_grid(path.as_ref(), PATCHES_MAGIC, patches.nrows(), patches.ncols(), patches.as_slice())
}

pub fn read_patches(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let (n, count, data) = read_grid(path.as_ref(), PATCHES_MAGIC, "patch")?;
    Ok(DMatrix::from_vec(n, count, data))
}

/// Reads the 6-byte magic of a file without consuming the rest.
pub fn peek_magic(path: impl AsRef<Path>) -> Result<[u8; 6]> {
    let mut input = File::open(path)?;
    let bytes = read_exact_vec(&mut input, 6, "file header")?;
    Ok(bytes.try_into().expect("six bytes"))
}

pub fn write_model(path: impl AsRef<Path>, model: &ModelBundle) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&(model.layers() as u32).to_le_bytes())?;
    out.write_all(&(model.patch_side() as u32).to_le_bytes())?;
    for k in model.clusters_per_layer() {
        out.write_all(&(k as u32).to_le_bytes())?;
    }
    for t in model.thresholds() {
        out.write_all(&t.to_le_bytes())?;
    }
    let n = model.patch_dim();
    for bank in model.transforms() {
        for omega in bank {
            for r in 0..n {
                for c in 0..n {
                    out.write_all(&omega[(r, c)].to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a model and re-checks every transform for unitarity.
pub fn read_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let mut input = BufReader::new(File::open(path)?);
    let magic = read_exact_vec(&mut input, MODEL_MAGIC.len(), "model")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("{}: not a model file", path.display())));
    }
    let version = read_u32(&mut input, "model")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let layers = read_u32(&mut input, "model")? as usize;
    let side = read_u32(&mut input, "model")? as usize;
    if layers == 0 || side == 0 || layers > 64 || side > 64 {
        return Err(Error::Format(format!("implausible model header: L={layers}, patch side {side}")));
    }
    let clusters = (0..layers)
        .map(|_| read_u32(&mut input, "model").map(|k| k as usize))
        .collect::<Result<Vec<_>>>()?;
    if clusters.iter().any(|&k| k == 0 || k > 1 << 16) {
        return Err(Error::Format(format!("implausible cluster counts {clusters:?}")));
    }
    let read_f64 = |input: &mut BufReader<File>| -> Result<f64> {
        let b = read_exact_vec(input, 8, "model")?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    };
    let thresholds = (0..layers).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
    let n = side * side;
    let mut transforms = Vec::with_capacity(layers);
    for &k in &clusters {
        let mut bank = Vec::with_capacity(k);
        for _ in 0..k {
            let bytes = read_exact_vec(&mut input, n * n * 8, "model")?;
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            bank.push(DMatrix::from_row_slice(n, n, &values));
        }
        transforms.push(bank);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    ModelBundle::new(side, transforms, thresholds)
}
