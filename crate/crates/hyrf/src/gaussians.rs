//! The explicit Gaussian set: eight stored parameters per primitive, the
//! neural/explicit aggregation into render-ready properties, and adaptive
//! density control (clone, split, prune, opacity reset).

use nalgebra::Vector3;
use rand::Rng;

use crate::decoder::{RawColor, RawGeometry};
use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, sigmoid_grad, Quaternion};

/// First/second-moment buffers the optimizer keeps per parameter array. They
/// live with the set so density control can grow and compact them in step
/// with the parameters.
#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn push_zeros(&mut self, n: usize) {
        self.m.extend(std::iter::repeat_n(0.0, n));
        self.v.extend(std::iter::repeat_n(0.0, n));
    }

    fn retain_rows(&mut self, keep: &[bool], stride: usize) {
        let mut w = 0;
        for (i, k) in keep.iter().enumerate() {
            if *k {
                for s in 0..stride {
                    self.m[w * stride + s] = self.m[i * stride + s];
                    self.v[w * stride + s] = self.v[i * stride + s];
                }
                w += 1;
            }
        }
        self.m.truncate(w * stride);
        self.v.truncate(w * stride);
    }
}

/// Array-of-records store of the per-Gaussian parameters. All `*_raw` values
/// are pre-activation; positions are world units.
#[derive(Debug, Clone, Default)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    /// Diffuse color residual, pre-sigmoid.
    pub colors_raw: Vec<Vector3<f64>>,
    /// Isotropic scale residual, pre-sigmoid; broadcast over three axes.
    pub scales_raw: Vec<f64>,
    /// Opacity residual, pre-sigmoid.
    pub opacities_raw: Vec<f64>,

    pub position_grads: Vec<Vector3<f64>>,
    pub color_grads: Vec<Vector3<f64>>,
    pub scale_grads: Vec<f64>,
    pub opacity_grads: Vec<f64>,

    pub position_moments: Moments,
    pub color_moments: Moments,
    pub scale_moments: Moments,
    pub opacity_moments: Moments,

    /// Accumulated screen-space (NDC) position-gradient magnitudes and the
    /// number of views that contributed, for densification.
    pub densify_accum: Vec<f64>,
    pub densify_count: Vec<u32>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Initializes the set from seed points with colors in \[0,1\]. The scale
    /// residual is set from the mean distance to the three nearest neighbors,
    /// the standard point-cloud heuristic.
    pub fn from_points(
        points: &[Vector3<f64>],
        colors: &[Vector3<f64>],
        init_opacity: f64,
        s_max: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot initialize from an empty point set"));
        }
        if points.len() != colors.len() {
            return Err(Error::invalid("points and colors must have equal length"));
        }
        if !(init_opacity > 0.0 && init_opacity < 1.0) {
            return Err(Error::invalid("init opacity must be in (0,1)"));
        }
        let n = points.len();
        let mut set = GaussianSet {
            positions: points.to_vec(),
            colors_raw: colors
                .iter()
                .map(|c| c.map(|v| logit(v.clamp(0.01, 0.99))))
                .collect(),
            scales_raw: Vec::with_capacity(n),
            opacities_raw: vec![logit(init_opacity); n],
            ..Default::default()
        };
        for i in 0..n {
            let mut d2: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| (p - points[i]).norm_squared())
                .collect();
            d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean_d = if d2.is_empty() {
                0.1 * s_max
            } else {
                let k = d2.len().min(3);
                (d2[..k].iter().map(|v| v.sqrt()).sum::<f64>() / k as f64).max(1e-7)
            };
            set.scales_raw
                .push(logit((mean_d / s_max).clamp(0.01, 0.95)));
        }
        set.reset_parallel_state();
        Ok(set)
    }

    /// Rebuilds gradients, moments and densification statistics to match the
    /// current parameter arrays, zero-filled.
    pub fn reset_parallel_state(&mut self) {
        let n = self.len();
        self.position_grads = vec![Vector3::zeros(); n];
        self.color_grads = vec![Vector3::zeros(); n];
        self.scale_grads = vec![0.0; n];
        self.opacity_grads = vec![0.0; n];
        self.position_moments = Moments::zeros(3 * n);
        self.color_moments = Moments::zeros(3 * n);
        self.scale_moments = Moments::zeros(n);
        self.opacity_moments = Moments::zeros(n);
        self.densify_accum = vec![0.0; n];
        self.densify_count = vec![0; n];
    }

    pub fn zero_grad(&mut self) {
        self.position_grads
            .iter_mut()
            .for_each(|g| *g = Vector3::zeros());
        self.color_grads
            .iter_mut()
            .for_each(|g| *g = Vector3::zeros());
        self.scale_grads.iter_mut().for_each(|g| *g = 0.0);
        self.opacity_grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn reset_densify_stats(&mut self) {
        self.densify_accum.iter_mut().for_each(|v| *v = 0.0);
        self.densify_count.iter_mut().for_each(|v| *v = 0);
    }

    pub fn record_densify_stat(&mut self, index: usize, ndc_grad_norm: f64) {
        self.densify_accum[index] += ndc_grad_norm;
        self.densify_count[index] += 1;
    }

    fn assert_parallel(&self) {
        let n = self.len();
        debug_assert!(
            self.colors_raw.len() == n
                && self.scales_raw.len() == n
                && self.opacities_raw.len() == n
                && self.densify_accum.len() == n
                && self.densify_count.len() == n
                && self.position_moments.m.len() == 3 * n
        );
    }

    /// Clone/split Gaussians whose mean accumulated NDC gradient exceeds the
    /// threshold. Small ones are cloned verbatim; large ones are replaced by
    /// two children with the activated scale shrunk by `cfg.split_shrink`.
    /// Densification statistics are reset afterwards.
    pub fn densify(
        &mut self,
        cfg: &DensifyConfig,
        activated_scales: &[Vector3<f64>],
        s_max: f64,
        rng: &mut impl Rng,
    ) -> DensifyOutcome {
        assert_eq!(activated_scales.len(), self.len());
        let n0 = self.len();
        let mut outcome = DensifyOutcome::default();
        let mut remove = vec![false; n0];
        for i in 0..n0 {
            if self.densify_count[i] == 0 {
                continue;
            }
            let mean_grad = self.densify_accum[i] / self.densify_count[i] as f64;
            if mean_grad <= cfg.grad_threshold {
                continue;
            }
            let a = activated_scales[i];
            let a_max = a.x.max(a.y).max(a.z);
            if a_max < cfg.scale_split_threshold {
                // Clone: the new Gaussian shares all eight parameters.
                self.push_gaussian(
                    self.positions[i],
                    self.colors_raw[i],
                    self.scales_raw[i],
                    self.opacities_raw[i],
                );
                outcome.cloned += 1;
            } else {
                // Split: shift the scale residual so the children's activated
                // scale lands at roughly parent / split_shrink.
                let shift: f64 = (0..3)
                    .map(|k| {
                        logit((a[k] / s_max).clamp(1e-9, 1.0 - 1e-9))
                            - logit((a[k] / (cfg.split_shrink * s_max)).clamp(1e-9, 1.0 - 1e-9))
                    })
                    .sum::<f64>()
                    / 3.0;
                let child_scale_raw = self.scales_raw[i] - shift;
                for _ in 0..2 {
                    let offset = Vector3::new(
                        a.x * standard_normal(rng),
                        a.y * standard_normal(rng),
                        a.z * standard_normal(rng),
                    );
                    self.push_gaussian(
                        self.positions[i] + offset,
                        self.colors_raw[i],
                        child_scale_raw,
                        self.opacities_raw[i],
                    );
                }
                remove[i] = true;
                outcome.split += 1;
            }
        }
        remove.resize(self.len(), false);
        if outcome.split > 0 {
            self.retain(&remove.iter().map(|r| !r).collect::<Vec<_>>());
        }
        self.reset_densify_stats();
        self.assert_parallel();
        outcome
    }

    fn push_gaussian(
        &mut self,
        position: Vector3<f64>,
        color_raw: Vector3<f64>,
        scale_raw: f64,
        opacity_raw: f64,
    ) {
        self.positions.push(position);
        self.colors_raw.push(color_raw);
        self.scales_raw.push(scale_raw);
        self.opacities_raw.push(opacity_raw);
        self.position_grads.push(Vector3::zeros());
        self.color_grads.push(Vector3::zeros());
        self.scale_grads.push(0.0);
        self.opacity_grads.push(0.0);
        self.position_moments.push_zeros(3);
        self.color_moments.push_zeros(3);
        self.scale_moments.push_zeros(1);
        self.opacity_moments.push_zeros(1);
        self.densify_accum.push(0.0);
        self.densify_count.push(0);
    }

    fn retain(&mut self, keep: &[bool]) {
        let filter_vec3 = |v: &mut Vec<Vector3<f64>>| {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        };
        let filter_f64 = |v: &mut Vec<f64>| {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        };
        filter_vec3(&mut self.positions);
        filter_vec3(&mut self.colors_raw);
        filter_f64(&mut self.scales_raw);
        filter_f64(&mut self.opacities_raw);
        filter_vec3(&mut self.position_grads);
        filter_vec3(&mut self.color_grads);
        filter_f64(&mut self.scale_grads);
        filter_f64(&mut self.opacity_grads);
        self.position_moments.retain_rows(keep, 3);
        self.color_moments.retain_rows(keep, 3);
        self.scale_moments.retain_rows(keep, 1);
        self.opacity_moments.retain_rows(keep, 1);
        let mut i = 0;
        self.densify_accum.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
        let mut i = 0;
        self.densify_count.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }

    /// Removes Gaussians whose activated opacity fell below the threshold.
    /// Pruning the whole set is a fatal training error.
    pub fn prune(&mut self, activated_alphas: &[f64], min_opacity: f64) -> Result<usize> {
        assert_eq!(activated_alphas.len(), self.len());
        let keep: Vec<bool> = activated_alphas.iter().map(|a| *a >= min_opacity).collect();
        let kept = keep.iter().filter(|k| **k).count();
        if kept == 0 {
            return Err(Error::Divergence(
                "pruning removed every Gaussian; the scene has collapsed".into(),
            ));
        }
        let removed = self.len() - kept;
        if removed > 0 {
            self.retain(&keep);
        }
        self.assert_parallel();
        Ok(removed)
    }

    /// Clamps every explicit opacity residual so the explicit term alone
    /// cannot activate above `target`. The shared neural term is untouched.
    pub fn reset_opacity(&mut self, target: f64) -> Result<()> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::invalid("opacity reset target must be in (0,1)"));
        }
        let cap = logit(target);
        for a in &mut self.opacities_raw {
            *a = a.min(cap);
        }
        Ok(())
    }
}

/// Box-Muller draw; keeps us off an extra distribution dependency.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, Copy)]
pub struct DensifyConfig {
    /// Mean accumulated NDC gradient above which a Gaussian densifies.
    pub grad_threshold: f64,
    /// Activated world-space scale separating clones from splits.
    pub scale_split_threshold: f64,
    /// Scale reduction applied to split children.
    pub split_shrink: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            scale_split_threshold: 0.01,
            split_shrink: 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
}

/// A Gaussian with every property activated and in world units, ready for
/// projection and blending.
#[derive(Debug, Clone, Copy)]
pub struct ActivatedGaussian {
    pub position: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Per-axis standard deviation in world units (sigmoid-bounded, times s_max).
    pub scale: Vector3<f64>,
    pub rotation: Quaternion,
    /// True when the raw rotation was too small to normalize and the identity
    /// was substituted.
    pub rotation_fallback: bool,
}

/// Neural/explicit aggregation: sigmoids over summed residuals for opacity,
/// color and scale (the scalar explicit scale broadcasts over the three
/// axes), L2 normalization for rotation. `s_max` converts the bounded scale
/// to world units.
pub fn aggregate(
    raw_geo: &RawGeometry,
    raw_color: &RawColor,
    position: Vector3<f64>,
    color_raw_e: &Vector3<f64>,
    scale_raw_e: f64,
    opacity_raw_e: f64,
    s_max: f64,
) -> ActivatedGaussian {
    let opacity = sigmoid(raw_geo.opacity + opacity_raw_e);
    let color = Vector3::new(
        sigmoid(raw_color[0] + color_raw_e.x),
        sigmoid(raw_color[1] + color_raw_e.y),
        sigmoid(raw_color[2] + color_raw_e.z),
    );
    let scale = Vector3::new(
        sigmoid(raw_geo.scale[0] + scale_raw_e) * s_max,
        sigmoid(raw_geo.scale[1] + scale_raw_e) * s_max,
        sigmoid(raw_geo.scale[2] + scale_raw_e) * s_max,
    );
    let r = Quaternion::new(
        raw_geo.rotation[0],
        raw_geo.rotation[1],
        raw_geo.rotation[2],
        raw_geo.rotation[3],
    );
    let (rotation, rotation_fallback) = match r.norm() {
        n if n < 1e-12 => (Quaternion::IDENTITY, true),
        _ => (r.normalized().expect("norm checked"), false),
    };
    ActivatedGaussian {
        position,
        opacity,
        color,
        scale,
        rotation,
        rotation_fallback,
    }
}

/// Gradients flowing back through [`aggregate`]. `d_rotation` is the gradient
/// w.r.t. the unit quaternion; the caller chains it through the raw rotation
/// with [`crate::math::quat_normalize_backward`] (zero on the fallback path).
pub struct AggregateGrads {
    pub d_raw_geo: RawGeometry,
    pub d_raw_color: RawColor,
    pub d_color_e: Vector3<f64>,
    pub d_scale_e: f64,
    pub d_opacity_e: f64,
}

pub fn aggregate_backward(
    activated: &ActivatedGaussian,
    raw_geo: &RawGeometry,
    s_max: f64,
    d_opacity: f64,
    d_color: &Vector3<f64>,
    d_scale: &Vector3<f64>,
    d_rotation_unit: &Quaternion,
) -> AggregateGrads {
    let d_alpha_pre = d_opacity * sigmoid_grad(activated.opacity);
    let mut d_color_pre = Vector3::zeros();
    for k in 0..3 {
        d_color_pre[k] = d_color[k] * sigmoid_grad(activated.color[k]);
    }
    let mut d_scale_pre = [0.0; 3];
    for k in 0..3 {
        let bounded = activated.scale[k] / s_max;
        d_scale_pre[k] = d_scale[k] * s_max * sigmoid_grad(bounded);
    }
    let d_rot_raw = if activated.rotation_fallback {
        Quaternion::new(0.0, 0.0, 0.0, 0.0)
    } else {
        let raw = Quaternion::new(
            raw_geo.rotation[0],
            raw_geo.rotation[1],
            raw_geo.rotation[2],
            raw_geo.rotation[3],
        );
        crate::math::quat_normalize_backward(&raw, d_rotation_unit)
    };
    AggregateGrads {
        d_raw_geo: RawGeometry {
            opacity: d_alpha_pre,
            scale: d_scale_pre,
            rotation: [d_rot_raw.w, d_rot_raw.x, d_rot_raw.y, d_rot_raw.z],
        },
        d_raw_color: [d_color_pre.x, d_color_pre.y, d_color_pre.z],
        d_color_e: d_color_pre,
        d_scale_e: d_scale_pre.iter().sum(),
        d_opacity_e: d_alpha_pre,
    }
}
