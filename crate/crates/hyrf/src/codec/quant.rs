//! Scalar min-max quantization to 8 bits and IEEE binary16 conversion.

use half::f16;

use crate::error::{Error, Result};

/// code = round((v - min) / (max - min) * 255), rounding half away from zero.
/// A flat array maps every value to code 0 with max == min.
pub fn minmax_quantize_8bit(values: &[f64]) -> Result<(Vec<u8>, f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot quantize an empty array"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok((vec![0; values.len()], min, max));
    }
    let scale = 255.0 / (max - min);
    let codes = values
        .iter()
        .map(|v| ((v - min) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((codes, min, max))
}

/// Endpoint codes snap exactly onto min/max so re-quantizing a dequantized
/// array reproduces the same codes and range bit for bit.
pub fn minmax_dequantize_8bit(codes: &[u8], min: f64, max: f64) -> Vec<f64> {
    if max == min {
        return vec![min; codes.len()];
    }
    let step = (max - min) / 255.0;
    codes
        .iter()
        .map(|c| match *c {
            0 => min,
            255 => max,
            c => min + c as f64 * step,
        })
        .collect()
}

/// Round-to-nearest-even conversion through IEEE binary16.
pub fn to_f16_bits(v: f64) -> u16 {
    f16::from_f64(v).to_bits()
}

pub fn from_f16_bits(bits: u16) -> f64 {
    f16::from_bits(bits).to_f64()
}
