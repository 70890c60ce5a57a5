//! Multi-resolution hash encoding of contracted positions, and sinusoidal
//! encoding of view directions. Both come with exact reverse-mode gradients;
//! table gradients accumulate into caller-visible buffers so the optimizer
//! owns the update schedule.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};

/// Spatial-hash multipliers, one per axis. The x prime of 1 keeps dense-ish
/// layouts cache friendly; the constants are fixed so runs are reproducible.
const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashGridConfig {
    pub n_levels: usize,
    pub features_per_entry: usize,
    /// Per-level table capacity cap, as an exponent of two.
    pub log2_max_entries: u32,
    /// Grid cells per axis at the coarsest level.
    pub base_resolution: usize,
    /// Per-level resolution multiplier.
    pub growth_factor: f64,
}

impl HashGridConfig {
    /// Growth factor that makes the finest of `n_levels` levels reach
    /// `finest` cells per axis starting from `base`.
    pub fn growth_for(base: usize, finest: usize, n_levels: usize) -> f64 {
        if n_levels <= 1 {
            return 1.0;
        }
        ((finest as f64 / base as f64).ln() / (n_levels - 1) as f64).exp()
    }

    pub fn with_defaults(log2_max_entries: u32) -> Self {
        let n_levels = 16;
        let base_resolution = 16;
        Self {
            n_levels,
            features_per_entry: 2,
            log2_max_entries,
            base_resolution,
            growth_factor: Self::growth_for(base_resolution, 2048, n_levels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 {
            return Err(Error::invalid("hash grid needs at least one level"));
        }
        if self.features_per_entry == 0 {
            return Err(Error::invalid("features_per_entry must be positive"));
        }
        if self.base_resolution < 1 {
            return Err(Error::invalid("base resolution must be at least 1"));
        }
        for l in 1..self.n_levels {
            if self.level_resolution(l) <= self.level_resolution(l - 1) {
                return Err(Error::invalid(format!(
                    "level resolutions must strictly increase (level {l})"
                )));
            }
        }
        Ok(())
    }

    /// Cells per axis at level `l`. The epsilon keeps exact powers (say a
    /// finest level of 2048) from flooring to one cell short.
    pub fn level_resolution(&self, l: usize) -> usize {
        (self.base_resolution as f64 * self.growth_factor.powi(l as i32) + 1e-9).floor() as usize
    }

    /// Entries in the level-`l` table: the dense vertex count when it fits,
    /// otherwise the hash cap.
    pub fn level_entries(&self, l: usize) -> usize {
        let verts = self.level_resolution(l) + 1;
        let dense = verts.saturating_mul(verts).saturating_mul(verts);
        dense.min(1usize << self.log2_max_entries)
    }

    pub fn output_dim(&self) -> usize {
        self.n_levels * self.features_per_entry
    }
}

/// One multi-resolution hash field: per-level trainable feature tables plus
/// gradient buffers of identical shape.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub config: HashGridConfig,
    pub tables: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
}

impl HashGrid {
    /// Tables start uniform in [-1e-4, 1e-4]: small and symmetric.
    pub fn new(config: HashGridConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut tables = Vec::with_capacity(config.n_levels);
        let mut grads = Vec::with_capacity(config.n_levels);
        for l in 0..config.n_levels {
            let len = config.level_entries(l) * config.features_per_entry;
            let table: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
            grads.push(vec![0.0; len]);
            tables.push(table);
        }
        Ok(Self {
            config,
            tables,
            grads,
        })
    }

    pub fn zeroed(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let tables: Vec<Vec<f64>> = (0..config.n_levels)
            .map(|l| vec![0.0; config.level_entries(l) * config.features_per_entry])
            .collect();
        let grads = tables.clone();
        Ok(Self {
            config,
            tables,
            grads,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.tables.iter().map(Vec::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Table index of an integer vertex at level `l`. Dense when the whole
    /// vertex grid fits the cap, spatial hash otherwise; a pure function, so
    /// collisions are stable across runs.
    fn vertex_index(&self, l: usize, v: [usize; 3], res: usize) -> usize {
        let entries = self.tables[l].len() / self.config.features_per_entry;
        let verts = res + 1;
        if verts * verts * verts <= entries {
            v[0] + verts * (v[1] + verts * v[2])
        } else {
            let h = (v[0] as u64).wrapping_mul(HASH_PRIMES[0])
                ^ (v[1] as u64).wrapping_mul(HASH_PRIMES[1])
                ^ (v[2] as u64).wrapping_mul(HASH_PRIMES[2]);
            (h % entries as u64) as usize
        }
    }

    fn check_domain(p: &Vector3<f64>) -> Result<()> {
        for k in 0..3 {
            if !(p[k] > 0.0 && p[k] < 1.0) {
                return Err(Error::invalid(format!(
                    "hash encode input {p:?} outside (0,1)^3; contract first"
                )));
            }
        }
        Ok(())
    }

    /// Trilinear interpolation of the 8 enclosing corner features at every
    /// level, concatenated coarse to fine into `out`.
    pub fn encode_into(&self, p: &Vector3<f64>, out: &mut [f64]) -> Result<()> {
        Self::check_domain(p)?;
        let f = self.config.features_per_entry;
        if out.len() != self.output_dim() {
            return Err(Error::invalid("encode output buffer has wrong length"));
        }
        for l in 0..self.config.n_levels {
            let res = self.config.level_resolution(l);
            let (cell, frac) = locate(p, res);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for corner in 0..8usize {
                let (v, w) = corner_weight(cell, frac, corner);
                let idx = self.vertex_index(l, v, res) * f;
                let src = &self.tables[l][idx..idx + f];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self, p: &Vector3<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(p, &mut out)?;
        Ok(out)
    }

    /// Reverse pass of [`HashGrid::encode_into`]: deposits `upstream * weight` into the
    /// table gradient buffers and returns the gradient w.r.t. the position.
    pub fn encode_backward(&mut self, p: &Vector3<f64>, upstream: &[f64]) -> Result<Vector3<f64>> {
        Self::check_domain(p)?;
        let f = self.config.features_per_entry;
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream gradient length {} != feature length {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut d_p = Vector3::zeros();
        for l in 0..self.config.n_levels {
            let res = self.config.level_resolution(l);
            let (cell, frac) = locate(p, res);
            let up = &upstream[l * f..(l + 1) * f];
            for corner in 0..8usize {
                let (v, w) = corner_weight(cell, frac, corner);
                let idx = self.vertex_index(l, v, res) * f;
                let table = &self.tables[l][idx..idx + f];
                let grad = &mut self.grads[l][idx..idx + f];
                let mut up_dot_feat = [0.0f64; 3];
                // d w / d frac_axis = +-(product of the other two axis weights).
                let axis_w = axis_weights(frac, corner);
                for k in 0..f {
                    grad[k] += w * up[k];
                }
                let dot: f64 = up.iter().zip(table).map(|(u, t)| u * t).sum();
                for axis in 0..3 {
                    let sign = if (corner >> axis) & 1 == 1 { 1.0 } else { -1.0 };
                    let others = axis_w[(axis + 1) % 3] * axis_w[(axis + 2) % 3];
                    up_dot_feat[axis] = sign * others * dot;
                }
                // d frac / d p = level resolution.
                for axis in 0..3 {
                    d_p[axis] += up_dot_feat[axis] * res as f64;
                }
            }
        }
        Ok(d_p)
    }
}

fn locate(p: &Vector3<f64>, res: usize) -> ([usize; 3], [f64; 3]) {
    let mut cell = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..3 {
        let u = p[k] * res as f64;
        let c = (u.floor() as usize).min(res - 1);
        cell[k] = c;
        frac[k] = u - c as f64;
    }
    (cell, frac)
}

/// Per-axis interpolation weight of `corner` (bit k selects the +1 vertex on
/// axis k).
fn axis_weights(frac: [f64; 3], corner: usize) -> [f64; 3] {
    let mut w = [0.0f64; 3];
    for axis in 0..3 {
        w[axis] = if (corner >> axis) & 1 == 1 {
            frac[axis]
        } else {
            1.0 - frac[axis]
        };
    }
    w
}

fn corner_weight(cell: [usize; 3], frac: [f64; 3], corner: usize) -> ([usize; 3], f64) {
    let mut v = cell;
    for (axis, coord) in v.iter_mut().enumerate() {
        if (corner >> axis) & 1 == 1 {
            *coord += 1;
        }
    }
    let w = axis_weights(frac, corner);
    (v, w[0] * w[1] * w[2])
}

/// Length of [`encode_direction`]'s output: the raw direction plus sin/cos
/// bands for each frequency.
pub fn direction_encoding_len(n_frequencies: usize) -> usize {
    3 + 6 * n_frequencies
}

/// Normalizes the camera-to-point direction and expands it as
/// `[d, sin(pi d), cos(pi d), sin(2 pi d), cos(2 pi d), ...]`.
pub fn encode_direction(
    p: &Vector3<f64>,
    cam_pos: &Vector3<f64>,
    n_frequencies: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; direction_encoding_len(n_frequencies)];
    encode_direction_into(p, cam_pos, n_frequencies, &mut out)?;
    Ok(out)
}

pub fn encode_direction_into(
    p: &Vector3<f64>,
    cam_pos: &Vector3<f64>,
    n_frequencies: usize,
    out: &mut [f64],
) -> Result<()> {
    let delta = p - cam_pos;
    let n = delta.norm();
    if n < 1e-12 {
        return Err(Error::invalid(
            "direction undefined: point at camera center",
        ));
    }
    if out.len() != direction_encoding_len(n_frequencies) {
        return Err(Error::invalid("direction encoding buffer has wrong length"));
    }
    let d = delta / n;
    out[0] = d.x;
    out[1] = d.y;
    out[2] = d.z;
    for f in 0..n_frequencies {
        let freq = std::f64::consts::PI * (1u64 << f) as f64;
        for k in 0..3 {
            out[3 + 6 * f + k] = (freq * d[k]).sin();
            out[3 + 6 * f + 3 + k] = (freq * d[k]).cos();
        }
    }
    Ok(())
}

/// Gradient of the direction encoding w.r.t. the point `p`.
pub fn encode_direction_backward(
    p: &Vector3<f64>,
    cam_pos: &Vector3<f64>,
    n_frequencies: usize,
    upstream: &[f64],
) -> Result<Vector3<f64>> {
    let delta = p - cam_pos;
    let n = delta.norm();
    if n < 1e-12 {
        return Err(Error::invalid(
            "direction undefined: point at camera center",
        ));
    }
    if upstream.len() != direction_encoding_len(n_frequencies) {
        return Err(Error::invalid("direction upstream has wrong length"));
    }
    let d = delta / n;
    // Gradient w.r.t. the unit direction first.
    let mut d_dir = Vector3::new(upstream[0], upstream[1], upstream[2]);
    for f in 0..n_frequencies {
        let freq = std::f64::consts::PI * (1u64 << f) as f64;
        for k in 0..3 {
            let s = upstream[3 + 6 * f + k];
            let c = upstream[3 + 6 * f + 3 + k];
            d_dir[k] += freq * ((freq * d[k]).cos() * s - (freq * d[k]).sin() * c);
        }
    }
    // d = delta/|delta|: J^T u = (u - d (d . u)) / |delta|.
    Ok((d_dir - d * d.dot(&d_dir)) / n)
}
