//! Checkpoint container: a self-describing little-endian binary file holding
//! the scene parameters, the explicit Gaussian arrays, both hash fields and
//! both decoders. Arrays are stored as 32-bit floats.
//!
//! # Layout
//!
//! ```text
//! magic            4 bytes  "HYRC"
//! version          u16
//! iteration        u64
//! scene            10 x f32  aabb min xyz, aabb max xyz, s_max, bg_radius,
//!                            tau_transmittance, cull_tolerance
//!                  u32       pe_frequencies
//! n                u64
//! positions        n x 3 x f32
//! color residuals  n x 3 x f32
//! scale residuals  n x f32
//! opacity residuals n x f32
//! geometry field   config (n_levels u32, features u32, log2_max u32,
//!                  base u32, growth f32), then per level: len u64 + len x f32
//! radiance field   same shape
//! geometry net     n_dims u32, dims, row-major f32 weights per layer,
//!                  then f32 biases per layer
//! color net        same shape
//! ```

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::decoder::Mlp;
use crate::error::{Error, Result};
use crate::field::{HashGrid, HashGridConfig};
use crate::gaussians::GaussianSet;
use crate::math::Aabb;
use crate::model::{Model, SceneParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYRC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Byte cursor with offset-carrying errors.
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                msg: format!(
                    "truncated: wanted {n} bytes, {} remain",
                    self.data.len() - self.pos
                ),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    /// Reads `n` f32 values; rejects non-finite entries (every stored array
    /// carries a finiteness invariant).
    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos as u64;
        let bytes = self.take(n * 4)?;
        let out: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                offset: start + bad as u64 * 4,
                msg: "non-finite value in parameter array".into(),
            });
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
pub(crate) fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub(crate) fn write_scene(out: &mut Vec<u8>, scene: &SceneParams) {
    for v in [
        scene.aabb.min.x,
        scene.aabb.min.y,
        scene.aabb.min.z,
        scene.aabb.max.x,
        scene.aabb.max.y,
        scene.aabb.max.z,
        scene.s_max,
        scene.bg_radius,
        scene.tau_transmittance,
        scene.cull_tolerance,
    ] {
        put_f32(out, v);
    }
    put_u32(out, scene.pe_frequencies as u32);
}

pub(crate) fn read_scene(r: &mut ByteReader) -> Result<SceneParams> {
    let min = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
    let max = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
    let s_max = r.f32()?;
    let bg_radius = r.f32()?;
    let tau_transmittance = r.f32()?;
    let cull_tolerance = r.f32()?;
    let pe_frequencies = r.u32()? as usize;
    if !(s_max.is_finite() && s_max > 0.0 && bg_radius.is_finite() && bg_radius > 0.0) {
        return Err(r.corrupt("scene block has non-positive s_max or bg_radius"));
    }
    if !(tau_transmittance.is_finite() && cull_tolerance.is_finite()) {
        return Err(r.corrupt("scene block has non-finite thresholds"));
    }
    Ok(SceneParams {
        aabb: Aabb::new(min, max).map_err(|e| r.corrupt(format!("bad aabb: {e}")))?,
        s_max,
        bg_radius,
        tau_transmittance,
        cull_tolerance,
        pe_frequencies,
    })
}

pub(crate) fn write_gaussians(out: &mut Vec<u8>, set: &GaussianSet) {
    put_u64(out, set.len() as u64);
    for p in &set.positions {
        for k in 0..3 {
            put_f32(out, p[k]);
        }
    }
    for c in &set.colors_raw {
        for k in 0..3 {
            put_f32(out, c[k]);
        }
    }
    for s in &set.scales_raw {
        put_f32(out, *s);
    }
    for o in &set.opacities_raw {
        put_f32(out, *o);
    }
}

pub(crate) fn read_gaussians(r: &mut ByteReader) -> Result<GaussianSet> {
    let n = r.u64()? as usize;
    if n == 0 {
        return Err(r.corrupt("checkpoint holds zero Gaussians"));
    }
    let pos_flat = r.f32_vec(n * 3)?;
    let col_flat = r.f32_vec(n * 3)?;
    let scales_raw = r.f32_vec(n)?;
    let opacities_raw = r.f32_vec(n)?;
    let mut set = GaussianSet {
        positions: pos_flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect(),
        colors_raw: col_flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect(),
        scales_raw,
        opacities_raw,
        ..Default::default()
    };
    set.reset_parallel_state();
    Ok(set)
}

pub(crate) fn write_field_config(out: &mut Vec<u8>, cfg: &HashGridConfig) {
    put_u32(out, cfg.n_levels as u32);
    put_u32(out, cfg.features_per_entry as u32);
    put_u32(out, cfg.log2_max_entries);
    put_u32(out, cfg.base_resolution as u32);
    put_f32(out, cfg.growth_factor);
}

pub(crate) fn read_field_config(r: &mut ByteReader) -> Result<HashGridConfig> {
    let cfg = HashGridConfig {
        n_levels: r.u32()? as usize,
        features_per_entry: r.u32()? as usize,
        log2_max_entries: r.u32()?,
        base_resolution: r.u32()? as usize,
        growth_factor: r.f32()?,
    };
    cfg.validate().map_err(|e| r.corrupt(format!("{e}")))?;
    Ok(cfg)
}

pub(crate) fn write_field(out: &mut Vec<u8>, field: &HashGrid) {
    write_field_config(out, &field.config);
    for table in &field.tables {
        put_u64(out, table.len() as u64);
        for v in table {
            put_f32(out, *v);
        }
    }
}

pub(crate) fn read_field(r: &mut ByteReader) -> Result<HashGrid> {
    let config = read_field_config(r)?;
    let mut field = HashGrid::zeroed(config).map_err(|e| r.corrupt(format!("{e}")))?;
    for l in 0..config.n_levels {
        let len = r.u64()? as usize;
        if len != field.tables[l].len() {
            return Err(r.corrupt(format!(
                "level {l} table length {len} does not match config ({})",
                field.tables[l].len()
            )));
        }
        field.tables[l] = r.f32_vec(len)?;
    }
    Ok(field)
}

pub(crate) fn write_net(out: &mut Vec<u8>, net: &Mlp) {
    put_u32(out, net.dims.len() as u32);
    for d in &net.dims {
        put_u32(out, *d as u32);
    }
    for layer in &net.weights {
        for v in layer {
            put_f32(out, *v);
        }
    }
    for layer in &net.biases {
        for v in layer {
            put_f32(out, *v);
        }
    }
}

pub(crate) fn read_net(r: &mut ByteReader) -> Result<Mlp> {
    let n_dims = r.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(r.corrupt(format!("implausible layer count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.u32()? as usize);
    }
    let mut net = Mlp::zeroed(&dims).map_err(|e| r.corrupt(format!("{e}")))?;
    for l in 0..dims.len() - 1 {
        net.weights[l] = r.f32_vec(dims[l] * dims[l + 1])?;
    }
    for l in 0..dims.len() - 1 {
        net.biases[l] = r.f32_vec(dims[l + 1])?;
    }
    Ok(net)
}

/// Serializes the model plus its training iteration into checkpoint bytes.
pub fn checkpoint_bytes(model: &Model, iteration: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    put_u64(&mut out, iteration);
    write_scene(&mut out, &model.scene);
    write_gaussians(&mut out, &model.gaussians);
    write_field(&mut out, &model.geo_field);
    write_field(&mut out, &model.rad_field);
    write_net(&mut out, &model.geo_net);
    write_net(&mut out, &model.color_net);
    out
}

pub fn save_checkpoint(model: &Model, iteration: u64, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, iteration);
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn model_from_bytes(data: &[u8]) -> Result<(Model, u64)> {
    let mut r = ByteReader::new(data);
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.u16()?;
    if version > CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let iteration = r.u64()?;
    let scene = read_scene(&mut r)?;
    let gaussians = read_gaussians(&mut r)?;
    let geo_field = read_field(&mut r)?;
    let rad_field = read_field(&mut r)?;
    let geo_net = read_net(&mut r)?;
    let color_net = read_net(&mut r)?;
    if !r.is_empty() {
        return Err(r.corrupt("trailing bytes after checkpoint payload"));
    }
    let model = Model {
        gaussians,
        geo_field,
        rad_field,
        geo_net,
        color_net,
        scene,
    };
    model.validate_shapes()?;
    Ok((model, iteration))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, u64)> {
    let data = std::fs::read(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    model_from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::HashGridConfig;
    use crate::model::small_model_for_tests;

    fn f32_clean_model(seed: u64) -> Model {
        let scene = SceneParams::with_aabb(Aabb::symmetric(4.0).unwrap());
        let cfg = HashGridConfig {
            n_levels: 3,
            features_per_entry: 2,
            log2_max_entries: 9,
            base_resolution: 4,
            growth_factor: 2.0,
        };
        let mut model = small_model_for_tests(8, seed, scene, cfg, &[8, 8]).unwrap();
        // Quantize every parameter to f32 so the container round-trips exactly.
        let q = |v: &mut f64| *v = *v as f32 as f64;
        for p in &mut model.gaussians.positions {
            p.iter_mut().for_each(&q);
        }
        for c in &mut model.gaussians.colors_raw {
            c.iter_mut().for_each(&q);
        }
        model.gaussians.scales_raw.iter_mut().for_each(&q);
        model.gaussians.opacities_raw.iter_mut().for_each(&q);
        for f in [&mut model.geo_field, &mut model.rad_field] {
            for t in &mut f.tables {
                t.iter_mut().for_each(&q);
            }
        }
        for n in [&mut model.geo_net, &mut model.color_net] {
            for w in &mut n.weights {
                w.iter_mut().for_each(&q);
            }
            for b in &mut n.biases {
                b.iter_mut().for_each(&q);
            }
        }
        model.scene.s_max = model.scene.s_max as f32 as f64;
        model
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = f32_clean_model(5);
        save_checkpoint(&model, 1234, &path).unwrap();
        let (back, iter) = load_checkpoint(&path).unwrap();
        assert_eq!(iter, 1234);
        assert_eq!(back.gaussians.positions, model.gaussians.positions);
        assert_eq!(back.gaussians.colors_raw, model.gaussians.colors_raw);
        assert_eq!(back.gaussians.scales_raw, model.gaussians.scales_raw);
        assert_eq!(back.gaussians.opacities_raw, model.gaussians.opacities_raw);
        assert_eq!(back.geo_field.tables, model.geo_field.tables);
        assert_eq!(back.rad_field.tables, model.rad_field.tables);
        assert_eq!(back.geo_net.weights, model.geo_net.weights);
        assert_eq!(back.color_net.biases, model.color_net.biases);
        // Byte-level: save(load(x)) == save(x).
        let again = checkpoint_bytes(&back, iter);
        assert_eq!(again, checkpoint_bytes(&model, 1234));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let model = f32_clean_model(6);
        let mut bytes = checkpoint_bytes(&model, 7);
        bytes.truncate(bytes.len() / 2);
        match model_from_bytes(&bytes) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset > 0),
            other => panic!("expected corrupt error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn future_version_is_refused() {
        let model = f32_clean_model(7);
        let mut bytes = checkpoint_bytes(&model, 7);
        bytes[4] = 0xff; // version low byte
        match model_from_bytes(&bytes) {
            Err(Error::Version { found, .. }) => assert!(found > CHECKPOINT_VERSION),
            other => panic!("expected version error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn wrong_magic_is_refused() {
        match model_from_bytes(b"NOPE....") {
            Err(Error::Corrupt { .. }) => {}
            other => panic!("expected corrupt error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn non_finite_parameters_are_refused() {
        let model = f32_clean_model(9);
        let mut bytes = checkpoint_bytes(&model, 0);
        // First position value lives right after magic + version + iteration
        // + the scene block (10 f32 + u32) + the count.
        let offset = 4 + 2 + 8 + 10 * 4 + 4 + 8;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match model_from_bytes(&bytes) {
            Err(Error::Corrupt { msg, .. }) => assert!(msg.contains("non-finite"), "{msg}"),
            other => panic!("expected corrupt error, got {:?}", other.map(|_| ())),
        }
    }
}
