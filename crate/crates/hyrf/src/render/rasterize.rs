//! Forward splatting: front-to-back alpha blending per pixel.

use nalgebra::{Matrix2, Vector2};

use super::{depth_order, footprint_bounds, ProjectedSplat, RasterOptions, RenderTarget};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RasterStats {
    /// Splats dropped because their 2D covariance was not invertible.
    pub skipped_singular: usize,
}

pub(crate) fn invert_cov2d(cov: &Matrix2<f64>) -> Option<(Matrix2<f64>, f64)> {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if det < 1e-12 {
        return None;
    }
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    Some((inv, det))
}

/// Blends the splats into a fresh render target. Splats are sorted front to
/// back by camera-space depth (ties broken by index, so renders are bitwise
/// reproducible); each one contributes
/// `alpha' = min(alpha_clip, alpha * exp(-(d^T cov^-1 d) / 2))`.
pub fn rasterize(
    splats: &[ProjectedSplat],
    width: usize,
    height: usize,
    opts: &RasterOptions,
) -> (RenderTarget, RasterStats) {
    let mut target = RenderTarget::new(width, height);
    let mut stats = RasterStats::default();

    let order = depth_order(splats);
    // Per-splat precomputation, in blend order.
    let mut prepared = Vec::with_capacity(order.len());
    for &s in &order {
        let splat = &splats[s];
        match invert_cov2d(&splat.cov2d) {
            Some((inv, _)) => {
                if let Some(bounds) = footprint_bounds(splat, width, height, opts.prefilter_cutoff)
                {
                    prepared.push((splat, inv, bounds));
                }
            }
            None => stats.skipped_singular += 1,
        }
    }

    for py in 0..height {
        for px in 0..width {
            let pix = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0f64;
            let ci = (py * width + px) * 3;
            for (splat, inv, bounds) in &prepared {
                let (x0, x1, y0, y1) = *bounds;
                if px < x0 || px > x1 || py < y0 || py > y1 {
                    continue;
                }
                let d = pix - splat.mean2d;
                let m = d.x * (inv[(0, 0)] * d.x + inv[(0, 1)] * d.y)
                    + d.y * (inv[(1, 0)] * d.x + inv[(1, 1)] * d.y);
                let alpha_prime = (splat.alpha * (-0.5 * m).exp()).min(opts.alpha_clip);
                let w = alpha_prime * t;
                target.color[ci] += splat.color.x * w;
                target.color[ci + 1] += splat.color.y * w;
                target.color[ci + 2] += splat.color.z * w;
                t *= 1.0 - alpha_prime;
                if t < opts.termination {
                    break;
                }
            }
            target.transmittance[py * width + px] = t;
        }
    }
    (target, stats)
}
