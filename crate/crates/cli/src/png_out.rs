use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use mcst::Image;

use crate::Failure;

/// Linear map of `[lo, hi]` onto `0..=255` with clamping; NaN becomes 0.
pub fn window_to_u8(value: f64, lo: f64, hi: f64) -> u8 {
    let t = ((value - lo) / (hi - lo) * 255.0).round();
    if t.is_nan() {
        0
    } else {
        t.clamp(0.0, 255.0) as u8
    }
}

pub fn write_windowed(path: &Path, image: &Image, lo: f64, hi: f64) -> Result<(), Failure> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let pixels: Vec<u8> = image.as_slice().iter().map(|&v| window_to_u8(v, lo, hi)).collect();
    let png_err = |e: png::EncodingError| Failure::Runtime(format!("png: {e}"));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}
