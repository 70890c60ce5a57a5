//! 8-bit PNG in and out. In-memory images are row-major H x W x 3 floats in
//! [0, 1]; bytes map to floats as v/255 and back as round(v * 255), so a
//! write/read cycle is exact on quantized values.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

pub struct LoadedImage {
    pub width: usize,
    pub height: usize,
    /// H x W x 3 in [0, 1].
    pub pixels: Vec<f64>,
}

pub fn read_png(path: &Path) -> Result<LoadedImage> {
    let file = File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open image {}: {e}", path.display())))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::invalid(format!("bad png {}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::invalid(format!("bad png {}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::invalid(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::invalid(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    };
    let mut pixels = vec![0.0f64; w * h * 3];
    for i in 0..w * h {
        let src = &buf[i * channels..i * channels + channels];
        let (r, g, b) = match channels {
            1 | 2 => (src[0], src[0], src[0]),
            _ => (src[0], src[1], src[2]),
        };
        pixels[i * 3] = r as f64 / 255.0;
        pixels[i * 3 + 1] = g as f64 / 255.0;
        pixels[i * 3 + 2] = b as f64 / 255.0;
    }
    Ok(LoadedImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Clamps to [0, 1] and quantizes to 8 bits.
pub fn write_png(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    if pixels.len() != width * height * 3 {
        return Err(Error::invalid("image buffer does not match dimensions"));
    }
    let file = File::create(path)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", path.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::invalid(format!("png header: {e}")))?;
    let bytes: Vec<u8> = pixels.iter().map(|v| quantize(*v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::invalid(format!("png write: {e}")))?;
    Ok(())
}

/// Grayscale variant used for transmittance maps.
pub fn write_png_gray(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::invalid("gray buffer does not match dimensions"));
    }
    let file = File::create(path)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", path.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::invalid(format!("png header: {e}")))?;
    let bytes: Vec<u8> = values.iter().map(|v| quantize(*v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::invalid(format!("png write: {e}")))?;
    Ok(())
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantize a float image to the exact values an 8-bit write/read cycle
/// produces.
pub fn quantize_image(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|v| quantize(*v) as f64 / 255.0).collect()
}

/// Raw float dump: little-endian f32 with a minimal dimension header, for
/// golden tests that need more than 8 bits.
pub fn write_raw_f32(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    use std::io::Write;
    if pixels.len() != width * height * 3 {
        return Err(Error::invalid("image buffer does not match dimensions"));
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(b"HYRI")?;
    f.write_all(&(width as u32).to_le_bytes())?;
    f.write_all(&(height as u32).to_le_bytes())?;
    for v in pixels {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}
