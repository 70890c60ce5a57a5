//! The hybrid rendering pipeline: visibility pre-culling, depth-sorted
//! differentiable alpha-blend splatting, per-pixel transmittance tracking,
//! and background-sphere compositing.

mod background;
mod backward;
mod rasterize;

pub use background::{
    composite_background, composite_background_cached, BackgroundCache, BackgroundParams,
    BackgroundQuery,
};
pub use backward::{rasterize_backward, SplatGrads};
pub use rasterize::{rasterize, RasterStats};

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::camera::Camera;

/// Per-Gaussian survivor mask of the frustum pre-cull.
#[derive(Debug, Clone)]
pub struct CullResult {
    pub keep: Vec<bool>,
    pub kept_indices: Vec<usize>,
}

/// Frustum pre-cull, run before any neural-field query. A point survives if
/// its camera-space depth exceeds the near plane and its projection lands
/// within the tolerance-banded image frame, `|ndc| <= 1 + tol` on both axes.
pub fn precull(positions: &[Vector3<f64>], cam: &Camera, tol: f64) -> CullResult {
    let mut keep = vec![false; positions.len()];
    let mut kept_indices = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let t = cam.to_camera_space(p);
        if t.z <= cam.near {
            continue;
        }
        let ndc = cam.ndc(&cam.project(&t));
        if ndc.x.abs() <= 1.0 + tol && ndc.y.abs() <= 1.0 + tol {
            keep[i] = true;
            kept_indices.push(i);
        }
    }
    CullResult { keep, kept_indices }
}

/// One Gaussian after projection, ready for blending. `index` refers back to
/// whatever list the caller is tracking gradients for.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedSplat {
    pub index: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub alpha: f64,
}

/// Rasterizer knobs. The defaults are the rendering path; tests that compare
/// against the exact blending formula disable the speed heuristics.
#[derive(Debug, Clone, Copy)]
pub struct RasterOptions {
    /// Per-contribution opacity clip, keeps transmittance strictly positive.
    pub alpha_clip: f64,
    /// Stop blending a pixel once its transmittance drops below this; every
    /// remaining contribution is bounded by it. Zero disables termination.
    pub termination: f64,
    /// Screen-space footprint pre-filter: a splat is skipped at pixels where
    /// its unclipped weight is provably below this. Zero disables the filter.
    pub prefilter_cutoff: f64,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            alpha_clip: 0.99,
            termination: 1.0 / 255.0,
            prefilter_cutoff: 1e-9,
        }
    }
}

impl RasterOptions {
    /// Exact evaluation of the blending sum: no termination, no pre-filter.
    pub fn exact() -> Self {
        Self {
            alpha_clip: 0.99,
            termination: 0.0,
            prefilter_cutoff: 0.0,
        }
    }
}

/// Per-pixel color accumulator plus the residual transmittance map consumed
/// by background compositing.
#[derive(Debug, Clone)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    /// Row-major H x W x 3.
    pub color: Vec<f64>,
    /// Row-major H x W; starts at 1 and only decreases.
    pub transmittance: Vec<f64>,
}

impl RenderTarget {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            color: vec![0.0; width * height * 3],
            transmittance: vec![1.0; width * height],
        }
    }

    pub fn pixel_color(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = (y * self.width + x) * 3;
        Vector3::new(self.color[i], self.color[i + 1], self.color[i + 2])
    }
}

/// Depth sort with stable index tie-break, shared by forward and backward.
pub(crate) fn depth_order(splats: &[ProjectedSplat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(splats[a].index.cmp(&splats[b].index))
    });
    order
}

/// Conservative pixel-index bounds of a splat's footprint, or `None` when the
/// filter is disabled (full image) or the splat covers nothing.
pub(crate) fn footprint_bounds(
    splat: &ProjectedSplat,
    width: usize,
    height: usize,
    cutoff: f64,
) -> Option<(usize, usize, usize, usize)> {
    if cutoff <= 0.0 {
        return Some((0, width - 1, 0, height - 1));
    }
    // alpha * exp(-m/2) < cutoff whenever the Mahalanobis distance exceeds
    // sqrt(2 ln(1/cutoff)); bound it by the largest eigenvalue.
    let tr = splat.cov2d[(0, 0)] + splat.cov2d[(1, 1)];
    let det = splat.cov2d[(0, 0)] * splat.cov2d[(1, 1)] - splat.cov2d[(0, 1)] * splat.cov2d[(1, 0)];
    let lambda_max = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
    let radius = (2.0 * (1.0 / cutoff).ln()).sqrt() * lambda_max.max(0.0).sqrt();
    let x0 = (splat.mean2d.x - radius - 0.5).ceil().max(0.0);
    let x1 = (splat.mean2d.x + radius - 0.5)
        .floor()
        .min(width as f64 - 1.0);
    let y0 = (splat.mean2d.y - radius - 0.5).ceil().max(0.0);
    let y1 = (splat.mean2d.y + radius - 0.5)
        .floor()
        .min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}
