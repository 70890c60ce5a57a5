//! Post-training model compression: half-precision positions, residual
//! vector quantization plus Huffman coding for the explicit attributes,
//! 8-bit min-max quantization plus Huffman coding for the hash tables, and
//! raw decoder weights. The bundle is self-describing: decoding needs no
//! side information, and encoding is deterministic given the codec seed.
//!
//! # Bundle layout
//!
//! Everything little-endian, fields in file order:
//!
//! ```text
//! magic            4 bytes  "HYRF"
//! version          u16
//! iteration        u64
//! scene            10 x f32  aabb min xyz, aabb max xyz, s_max, bg_radius,
//!                            tau_transmittance, cull_tolerance
//!                  u32       pe_frequencies
//! n                u64       Gaussian count
//! positions        n x 3 x u16    IEEE binary16 bits
//! color group      rvq block      dim 3 (diffuse color residuals)
//! scale/opacity    rvq block      dim 2 (scale residual, opacity residual)
//! geometry field   field block
//! radiance field   field block
//! geometry net     net block
//! color net        net block
//!
//! rvq block:
//!   dim u8 | n_stages u8 | k u32
//!   codewords        n_stages x k x dim x f32
//!   index streams    n_stages x huffman block (n symbols each)
//!
//! field block:
//!   config           n_levels u32, features u32, log2_max u32, base u32,
//!                    growth f32
//!   per level:       min f32 | max f32 | count u64 | huffman block of
//!                    count 8-bit codes
//!
//! net block:
//!   n_dims u32 | dims n_dims x u32
//!   weights          per layer, row-major f32
//!   biases           per layer, f32
//!
//! huffman block:
//!   table            n_entries u32, then (symbol u16, bit length u8) each
//!   n_symbols u64 | bit_len u64 | ceil(bit_len / 8) payload bytes
//!   (canonical codes: sort by (length, symbol), count up, shift left on
//!   every length increase; payload is packed most-significant bit first)
//! ```

pub mod huffman;
pub mod quant;
pub mod rvq;

use nalgebra::Vector3;

use crate::config::CodecConfig;
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::io::checkpoint::{
    put_f32, put_u16, put_u32, put_u64, read_field_config, read_net, read_scene,
    write_field_config, write_net, write_scene, ByteReader,
};
use crate::model::Model;
use huffman::{huffman_decode, huffman_encode, HuffmanStream, HuffmanTable};
use quant::{from_f16_bits, minmax_dequantize_8bit, minmax_quantize_8bit, to_f16_bits};
use rvq::{rvq_decode, rvq_fit_encode, RvqCodebook};

pub const BUNDLE_MAGIC: &[u8; 4] = b"HYRF";
pub const BUNDLE_VERSION: u16 = 1;

/// Symbols serialize as u16: hash codes fit a byte and codebook indices are
/// bounded by the (clamped) codebook size.
fn write_huffman(out: &mut Vec<u8>, s: &HuffmanStream) -> Result<()> {
    put_u32(out, s.table.lengths.len() as u32);
    for (sym, len) in &s.table.lengths {
        let sym16 = u16::try_from(*sym)
            .map_err(|_| Error::invalid(format!("symbol {sym} exceeds the u16 wire format")))?;
        put_u16(out, sym16);
        out.push(*len);
    }
    put_u64(out, s.n_symbols);
    put_u64(out, s.bit_len);
    out.extend_from_slice(&s.bytes);
    Ok(())
}

fn read_huffman(r: &mut ByteReader) -> Result<HuffmanStream> {
    let n_table = r.u32()? as usize;
    if n_table == 0 {
        return Err(r.corrupt("huffman table with no symbols"));
    }
    let mut lengths = std::collections::BTreeMap::new();
    for _ in 0..n_table {
        let sym = r.u16()? as u32;
        let len = r.u8()?;
        if len == 0 || len > 64 {
            return Err(r.corrupt(format!("invalid code length {len}")));
        }
        if lengths.insert(sym, len).is_some() {
            return Err(r.corrupt(format!("symbol {sym} listed twice in huffman table")));
        }
    }
    let n_symbols = r.u64()?;
    let bit_len = r.u64()?;
    let n_bytes = (bit_len as usize).div_ceil(8);
    let bytes = r.take(n_bytes)?.to_vec();
    Ok(HuffmanStream {
        table: HuffmanTable { lengths },
        n_symbols,
        bit_len,
        bytes,
    })
}

fn write_rvq(out: &mut Vec<u8>, codebook: &RvqCodebook, indices: &[Vec<u32>]) -> Result<()> {
    out.push(codebook.dim as u8);
    out.push(codebook.stages.len() as u8);
    put_u32(out, codebook.k as u32);
    for stage in &codebook.stages {
        for v in stage {
            put_f32(out, *v);
        }
    }
    for assign in indices {
        let stream = huffman_encode(assign)?;
        write_huffman(out, &stream)?;
    }
    Ok(())
}

fn read_rvq(r: &mut ByteReader, n: usize) -> Result<(RvqCodebook, Vec<Vec<u32>>)> {
    let dim = r.u8()? as usize;
    let n_stages = r.u8()? as usize;
    let k = r.u32()? as usize;
    if dim == 0 || n_stages == 0 || k == 0 {
        return Err(r.corrupt("rvq header with zero dim, stages or k"));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        stages.push(r.f32_vec(k * dim)?);
    }
    let mut indices = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let stream = read_huffman(r)?;
        if stream.n_symbols as usize != n {
            return Err(r.corrupt(format!(
                "rvq index stream holds {} symbols for {n} vectors",
                stream.n_symbols
            )));
        }
        indices.push(huffman_decode(&stream)?);
    }
    Ok((RvqCodebook { dim, k, stages }, indices))
}

/// Compresses a trained model into a self-describing binary bundle.
pub fn compress_model(model: &Model, iteration: u64, cfg: &CodecConfig) -> Result<Vec<u8>> {
    let set = &model.gaussians;
    let n = set.len();
    if n == 0 {
        return Err(Error::invalid("cannot compress an empty model"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    put_u16(&mut out, BUNDLE_VERSION);
    put_u64(&mut out, iteration);
    write_scene(&mut out, &model.scene);
    put_u64(&mut out, n as u64);

    // Positions as IEEE binary16.
    for p in &set.positions {
        for k in 0..3 {
            out.extend_from_slice(&to_f16_bits(p[k]).to_le_bytes());
        }
    }

    // Explicit attributes: diffuse color residuals as 3-vectors, scale and
    // opacity residuals paired as 2-vectors. The codebook size is clamped to
    // the vector count so small models stay encodable (and exactly so).
    let k_eff = cfg.rvq_codewords.min(n).max(1);
    let colors_flat: Vec<f64> = set
        .colors_raw
        .iter()
        .flat_map(|c| [c.x, c.y, c.z])
        .collect();
    let enc_colors = rvq_fit_encode(
        &colors_flat,
        n,
        3,
        cfg.rvq_stages,
        k_eff,
        cfg.rvq_iters,
        cfg.seed,
    )?;
    write_rvq(&mut out, &enc_colors.codebook, &enc_colors.indices)?;

    let so_flat: Vec<f64> = (0..n)
        .flat_map(|i| [set.scales_raw[i], set.opacities_raw[i]])
        .collect();
    let enc_so = rvq_fit_encode(
        &so_flat,
        n,
        2,
        cfg.rvq_stages,
        k_eff,
        cfg.rvq_iters,
        cfg.seed.wrapping_add(1),
    )?;
    write_rvq(&mut out, &enc_so.codebook, &enc_so.indices)?;

    // Hash tables: per-level 8-bit min-max quantization, Huffman coded.
    for field in [&model.geo_field, &model.rad_field] {
        write_field_config(&mut out, &field.config);
        for table in &field.tables {
            let (codes, min, max) = minmax_quantize_8bit(table)?;
            put_f32(&mut out, min);
            put_f32(&mut out, max);
            put_u64(&mut out, table.len() as u64);
            let symbols: Vec<u32> = codes.iter().map(|c| *c as u32).collect();
            let stream = huffman_encode(&symbols)?;
            write_huffman(&mut out, &stream)?;
        }
    }

    // Decoders stay raw: a few kilobytes of f32.
    write_net(&mut out, &model.geo_net);
    write_net(&mut out, &model.color_net);
    Ok(out)
}

/// Inverse of [`compress_model`]: reconstructs a render-ready model with no
/// side information.
pub fn decompress_model(data: &[u8]) -> Result<(Model, u64)> {
    let mut r = ByteReader::new(data);
    let magic = r.take(4)?;
    if magic != BUNDLE_MAGIC {
        return Err(r.corrupt("not a compressed bundle (bad magic)"));
    }
    let version = r.u16()?;
    if version > BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let iteration = r.u64()?;
    let scene = read_scene(&mut r)?;
    let n = r.u64()? as usize;
    if n == 0 {
        return Err(r.corrupt("bundle holds zero Gaussians"));
    }

    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = Vector3::zeros();
        for k in 0..3 {
            let bits = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
            p[k] = from_f16_bits(bits);
        }
        positions.push(p);
    }

    let (cb_colors, idx_colors) = read_rvq(&mut r, n)?;
    if cb_colors.dim != 3 {
        return Err(r.corrupt(format!("color group dim {} != 3", cb_colors.dim)));
    }
    let colors_flat = rvq_decode(&cb_colors, &idx_colors, n)?;
    let (cb_so, idx_so) = read_rvq(&mut r, n)?;
    if cb_so.dim != 2 {
        return Err(r.corrupt(format!("scale/opacity group dim {} != 2", cb_so.dim)));
    }
    let so_flat = rvq_decode(&cb_so, &idx_so, n)?;

    let mut set = GaussianSet {
        positions,
        colors_raw: colors_flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect(),
        scales_raw: so_flat.chunks_exact(2).map(|c| c[0]).collect(),
        opacities_raw: so_flat.chunks_exact(2).map(|c| c[1]).collect(),
        ..Default::default()
    };
    set.reset_parallel_state();

    let mut fields = Vec::with_capacity(2);
    for _ in 0..2 {
        let config = read_field_config(&mut r)?;
        let mut field =
            crate::field::HashGrid::zeroed(config).map_err(|e| r.corrupt(format!("{e}")))?;
        for l in 0..config.n_levels {
            let min = r.f32()?;
            let max = r.f32()?;
            let count = r.u64()? as usize;
            if count != field.tables[l].len() {
                return Err(r.corrupt(format!(
                    "level {l}: {count} entries but config implies {}",
                    field.tables[l].len()
                )));
            }
            let stream = read_huffman(&mut r)?;
            if stream.n_symbols as usize != count {
                return Err(r.corrupt("hash level symbol count mismatch"));
            }
            let symbols = huffman_decode(&stream)?;
            let codes: Vec<u8> = symbols
                .iter()
                .map(|s| {
                    u8::try_from(*s).map_err(|_| r.corrupt(format!("8-bit code {s} overflows")))
                })
                .collect::<Result<_>>()?;
            field.tables[l] = minmax_dequantize_8bit(&codes, min, max);
        }
        fields.push(field);
    }
    let rad_field = fields.pop().unwrap();
    let geo_field = fields.pop().unwrap();

    let geo_net = read_net(&mut r)?;
    let color_net = read_net(&mut r)?;
    if !r.is_empty() {
        return Err(r.corrupt("trailing bytes after bundle payload"));
    }
    let model = Model {
        gaussians: set,
        geo_field,
        rad_field,
        geo_net,
        color_net,
        scene,
    };
    model.validate_shapes()?;
    Ok((model, iteration))
}
