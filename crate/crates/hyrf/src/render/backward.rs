//! Reverse-mode pass of the rasterizer. Replays the forward blend per pixel
//! (same sort, same termination) and pushes gradients from the output color
//! and final transmittance onto every contributing splat.

use nalgebra::{Matrix2, Vector2, Vector3};

use super::rasterize::invert_cov2d;
use super::{depth_order, footprint_bounds, ProjectedSplat, RasterOptions};

/// Gradients w.r.t. one splat's blend-facing properties, indexed like the
/// forward splat list.
#[derive(Debug, Clone, Copy)]
pub struct SplatGrads {
    pub d_alpha: f64,
    pub d_color: Vector3<f64>,
    pub d_mean2d: Vector2<f64>,
    pub d_cov2d: Matrix2<f64>,
}

impl Default for SplatGrads {
    fn default() -> Self {
        Self {
            d_alpha: 0.0,
            d_color: Vector3::zeros(),
            d_mean2d: Vector2::zeros(),
            d_cov2d: Matrix2::zeros(),
        }
    }
}

struct Contribution {
    slot: usize,
    g: f64,
    alpha_prime: f64,
    t_before: f64,
    clipped: bool,
    delta: Vector2<f64>,
}

/// `d_color_image` is dL/d(output color), H x W x 3; `d_transmittance` is
/// dL/d(final per-pixel transmittance), H x W (the background compositing
/// path feeds this). Returns one gradient record per input splat.
pub fn rasterize_backward(
    splats: &[ProjectedSplat],
    width: usize,
    height: usize,
    opts: &RasterOptions,
    d_color_image: &[f64],
    d_transmittance: &[f64],
) -> Vec<SplatGrads> {
    assert_eq!(d_color_image.len(), width * height * 3);
    assert_eq!(d_transmittance.len(), width * height);

    let mut grads = vec![SplatGrads::default(); splats.len()];
    let order = depth_order(splats);
    let mut prepared = Vec::with_capacity(order.len());
    for &s in &order {
        let splat = &splats[s];
        if let Some((inv, _)) = invert_cov2d(&splat.cov2d) {
            if let Some(bounds) = footprint_bounds(splat, width, height, opts.prefilter_cutoff) {
                prepared.push((s, splat, inv, bounds));
            }
        }
    }

    let mut contribs: Vec<Contribution> = Vec::new();
    for py in 0..height {
        for px in 0..width {
            let pi = py * width + px;
            let d_c = Vector3::new(
                d_color_image[pi * 3],
                d_color_image[pi * 3 + 1],
                d_color_image[pi * 3 + 2],
            );
            let d_t_final = d_transmittance[pi];
            if d_c == Vector3::zeros() && d_t_final == 0.0 {
                continue;
            }
            let pix = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);

            // Replay the forward blend for this pixel.
            contribs.clear();
            let mut t = 1.0f64;
            for (slot, splat, inv, bounds) in &prepared {
                let (x0, x1, y0, y1) = *bounds;
                if px < x0 || px > x1 || py < y0 || py > y1 {
                    continue;
                }
                let delta = pix - splat.mean2d;
                let m = delta.x * (inv[(0, 0)] * delta.x + inv[(0, 1)] * delta.y)
                    + delta.y * (inv[(1, 0)] * delta.x + inv[(1, 1)] * delta.y);
                let g = (-0.5 * m).exp();
                let raw = splat.alpha * g;
                let clipped = raw > opts.alpha_clip;
                let alpha_prime = if clipped { opts.alpha_clip } else { raw };
                contribs.push(Contribution {
                    slot: *slot,
                    g,
                    alpha_prime,
                    t_before: t,
                    clipped,
                    delta,
                });
                t *= 1.0 - alpha_prime;
                if t < opts.termination {
                    break;
                }
            }
            let t_final = t;

            // Walk contributions back to front, accumulating the color mass
            // behind each splat: dC/da'_i = c_i T_i - S_after / (1 - a'_i),
            // dT_final/da'_i = -T_final / (1 - a'_i).
            let mut color_after = Vector3::zeros();
            for c in contribs.iter().rev() {
                let splat = &splats[c.slot];
                let one_minus = 1.0 - c.alpha_prime;
                let weight = c.alpha_prime * c.t_before;

                let g_out = &mut grads[c.slot];
                g_out.d_color += d_c * weight;

                let d_alpha_prime = d_c.dot(&splat.color) * c.t_before
                    - d_c.dot(&color_after) / one_minus
                    - d_t_final * t_final / one_minus;

                if !c.clipped {
                    g_out.d_alpha += d_alpha_prime * c.g;
                    let d_g = d_alpha_prime * splat.alpha;
                    // g = exp(-m/2): dm = -g/2 * d_g; m = delta^T A delta.
                    let d_m = -0.5 * c.g * d_g;
                    let (inv, _) = invert_cov2d(&splat.cov2d).expect("prepared");
                    let a_delta = inv * c.delta;
                    // dm/d delta = 2 A delta, and mean2d enters with -delta.
                    g_out.d_mean2d += -(a_delta * (2.0 * d_m));
                    // dm/dA = delta delta^T, dL/dcov = -A (dL/dA) A
                    //       = -d_m (A delta)(A delta)^T.
                    g_out.d_cov2d += a_delta * a_delta.transpose() * (-d_m);
                }

                color_after += splat.color * weight;
            }
        }
    }
    grads
}
