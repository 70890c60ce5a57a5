//! Training loss: L1 plus windowed structural similarity, and PSNR.
//!
//! SSIM uses a Gaussian-weighted 11x11 window with clamp-to-edge padding, so
//! it is defined for images smaller than the window and the constant-image
//! value matches the closed form exactly. The backward pass is the exact
//! adjoint of the clamped convolutions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// (1 - lambda) * l1 + lambda * (1 - ssim).
    pub total: f64,
    pub l1: f64,
    /// Mean SSIM over pixels and channels.
    pub ssim: f64,
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable clamped convolution along x then y. `src` and `dst` are H x W.
fn conv_clamped(
    src: &[f64],
    w: usize,
    h: usize,
    kernel: &[f64],
    scratch: &mut [f64],
    dst: &mut [f64],
) {
    let half = kernel.len() / 2;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (o, k) in kernel.iter().enumerate() {
                let xx = (x + o).saturating_sub(half).min(w - 1);
                acc += k * src[y * w + xx];
            }
            scratch[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (o, k) in kernel.iter().enumerate() {
                let yy = (y + o).saturating_sub(half).min(h - 1);
                acc += k * scratch[yy * w + x];
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Adjoint of [`conv_clamped`]: scatter instead of gather, y then x.
fn conv_clamped_transpose(
    src: &[f64],
    w: usize,
    h: usize,
    kernel: &[f64],
    scratch: &mut [f64],
    dst: &mut [f64],
) {
    let half = kernel.len() / 2;
    scratch.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        for x in 0..w {
            let u = src[y * w + x];
            if u == 0.0 {
                continue;
            }
            for (o, k) in kernel.iter().enumerate() {
                let yy = (y + o).saturating_sub(half).min(h - 1);
                scratch[yy * w + x] += k * u;
            }
        }
    }
    dst.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        for x in 0..w {
            let u = scratch[y * w + x];
            if u == 0.0 {
                continue;
            }
            for (o, k) in kernel.iter().enumerate() {
                let xx = (x + o).saturating_sub(half).min(w - 1);
                dst[y * w + xx] += k * u;
            }
        }
    }
}

struct SsimPlanes {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    x2m: Vec<f64>,
    y2m: Vec<f64>,
    xym: Vec<f64>,
}

fn ssim_planes(x: &[f64], y: &[f64], w: usize, h: usize, kernel: &[f64]) -> SsimPlanes {
    let n = w * h;
    let mut scratch = vec![0.0; n];
    let mut planes = SsimPlanes {
        mu_x: vec![0.0; n],
        mu_y: vec![0.0; n],
        x2m: vec![0.0; n],
        y2m: vec![0.0; n],
        xym: vec![0.0; n],
    };
    conv_clamped(x, w, h, kernel, &mut scratch, &mut planes.mu_x);
    conv_clamped(y, w, h, kernel, &mut scratch, &mut planes.mu_y);
    let tmp: Vec<f64> = x.iter().map(|v| v * v).collect();
    conv_clamped(&tmp, w, h, kernel, &mut scratch, &mut planes.x2m);
    let tmp: Vec<f64> = y.iter().map(|v| v * v).collect();
    conv_clamped(&tmp, w, h, kernel, &mut scratch, &mut planes.y2m);
    let tmp: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    conv_clamped(&tmp, w, h, kernel, &mut scratch, &mut planes.xym);
    planes
}

fn check_images(pred: &[f64], gt: &[f64], w: usize, h: usize) -> Result<()> {
    if pred.len() != w * h * 3 || gt.len() != w * h * 3 {
        return Err(Error::invalid(format!(
            "image shape mismatch: pred {} gt {} expected {}",
            pred.len(),
            gt.len(),
            w * h * 3
        )));
    }
    Ok(())
}

fn channel_plane(img: &[f64], w: usize, h: usize, c: usize) -> Vec<f64> {
    (0..w * h).map(|i| img[i * 3 + c]).collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim(pred: &[f64], gt: &[f64], w: usize, h: usize, cfg: &SsimConfig) -> Result<f64> {
    check_images(pred, gt, w, h)?;
    let kernel = gaussian_kernel(cfg.window, cfg.sigma);
    let mut total = 0.0;
    for c in 0..3 {
        let x = channel_plane(pred, w, h, c);
        let y = channel_plane(gt, w, h, c);
        let p = ssim_planes(&x, &y, w, h, &kernel);
        for i in 0..w * h {
            let (mx, my) = (p.mu_x[i], p.mu_y[i]);
            let sx = p.x2m[i] - mx * mx;
            let sy = p.y2m[i] - my * my;
            let sxy = p.xym[i] - mx * my;
            let a1 = 2.0 * mx * my + cfg.c1;
            let a2 = 2.0 * sxy + cfg.c2;
            let b1 = mx * mx + my * my + cfg.c1;
            let b2 = sx + sy + cfg.c2;
            total += (a1 * a2) / (b1 * b2);
        }
    }
    Ok(total / (w * h * 3) as f64)
}

/// Mean SSIM plus d(mean SSIM)/d(pred).
pub fn ssim_with_grad(
    pred: &[f64],
    gt: &[f64],
    w: usize,
    h: usize,
    cfg: &SsimConfig,
) -> Result<(f64, Vec<f64>)> {
    check_images(pred, gt, w, h)?;
    let kernel = gaussian_kernel(cfg.window, cfg.sigma);
    let n = w * h;
    let norm = 1.0 / (n * 3) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n * 3];
    let mut scratch = vec![0.0; n];
    let mut back = vec![0.0; n];
    for c in 0..3 {
        let x = channel_plane(pred, w, h, c);
        let y = channel_plane(gt, w, h, c);
        let p = ssim_planes(&x, &y, w, h, &kernel);
        // Per-pixel ds/d{mu_x, x2m, xym}, upstream already folded in.
        let mut u_mu = vec![0.0; n];
        let mut u_x2m = vec![0.0; n];
        let mut u_xym = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (p.mu_x[i], p.mu_y[i]);
            let sx = p.x2m[i] - mx * mx;
            let sy = p.y2m[i] - my * my;
            let sxy = p.xym[i] - mx * my;
            let a1 = 2.0 * mx * my + cfg.c1;
            let a2 = 2.0 * sxy + cfg.c2;
            let b1 = mx * mx + my * my + cfg.c1;
            let b2 = sx + sy + cfg.c2;
            let d = b1 * b2;
            let s = (a1 * a2) / d;
            total += s;
            let d_a1 = a2 / d;
            let d_a2 = a1 / d;
            let d_b1 = -s / b1;
            let d_b2 = -s / b2;
            // sigma_x^2 = x2m - mu_x^2, sigma_xy = xym - mu_x mu_y.
            u_mu[i] =
                norm * (d_a1 * 2.0 * my + d_b1 * 2.0 * mx - d_a2 * 2.0 * my - d_b2 * 2.0 * mx);
            u_x2m[i] = norm * d_b2;
            u_xym[i] = norm * d_a2 * 2.0;
        }
        // dL/dx = K^T u_mu + 2 x . K^T u_x2m + y . K^T u_xym.
        conv_clamped_transpose(&u_mu, w, h, &kernel, &mut scratch, &mut back);
        for i in 0..n {
            grad[i * 3 + c] += back[i];
        }
        conv_clamped_transpose(&u_x2m, w, h, &kernel, &mut scratch, &mut back);
        for i in 0..n {
            grad[i * 3 + c] += 2.0 * x[i] * back[i];
        }
        conv_clamped_transpose(&u_xym, w, h, &kernel, &mut scratch, &mut back);
        for i in 0..n {
            grad[i * 3 + c] += y[i] * back[i];
        }
    }
    Ok((total * norm, grad))
}

/// `total = (1 - lambda) * L1 + lambda * (1 - SSIM)`.
pub fn loss(
    pred: &[f64],
    gt: &[f64],
    w: usize,
    h: usize,
    lambda: f64,
    cfg: &SsimConfig,
) -> Result<LossBreakdown> {
    check_images(pred, gt, w, h)?;
    let l1 = pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;
    let s = ssim(pred, gt, w, h, cfg)?;
    Ok(LossBreakdown {
        total: (1.0 - lambda) * l1 + lambda * (1.0 - s),
        l1,
        ssim: s,
    })
}

/// Loss value plus dL/d(pred).
pub fn loss_with_grad(
    pred: &[f64],
    gt: &[f64],
    w: usize,
    h: usize,
    lambda: f64,
    cfg: &SsimConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_images(pred, gt, w, h)?;
    let n = pred.len() as f64;
    let l1 = pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (s, ssim_grad) = ssim_with_grad(pred, gt, w, h, cfg)?;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let sign = (pred[i] - gt[i]).signum() * if pred[i] == gt[i] { 0.0 } else { 1.0 };
        grad[i] = (1.0 - lambda) * sign / n - lambda * ssim_grad[i];
    }
    Ok((
        LossBreakdown {
            total: (1.0 - lambda) * l1 + lambda * (1.0 - s),
            l1,
            ssim: s,
        },
        grad,
    ))
}

/// Peak signal-to-noise ratio against peak 1.0; +inf when the images match
/// exactly.
pub fn psnr(pred: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut StdRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = StdRng::seed_from_u64(1);
        let img = random_image(&mut rng, 16 * 16 * 3);
        let lb = loss(&img, &img, 16, 16, 0.2, &SsimConfig::default()).unwrap();
        assert_eq!(lb.l1, 0.0);
        assert!((lb.ssim - 1.0).abs() < 1e-9);
        assert!(lb.total.abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_is_pure_l1() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_image(&mut rng, 8 * 8 * 3);
        let b = random_image(&mut rng, 8 * 8 * 3);
        let lb = loss(&a, &b, 8, 8, 0.0, &SsimConfig::default()).unwrap();
        assert_eq!(lb.total, lb.l1);
    }

    #[test]
    fn constant_image_ssim_closed_form() {
        // pred = 0, gt = 1: SSIM = C1 C2 / ((1 + C1) C2) = C1 / (1 + C1).
        let pred = vec![0.0; 12 * 9 * 3];
        let gt = vec![1.0; 12 * 9 * 3];
        let cfg = SsimConfig::default();
        let s = ssim(&pred, &gt, 12, 9, &cfg).unwrap();
        let expect = cfg.c1 / (1.0 + cfg.c1);
        assert!(
            (s - expect).abs() < 1e-12,
            "ssim {s} vs closed form {expect}"
        );
        let lb = loss(&pred, &gt, 12, 9, 0.2, &cfg).unwrap();
        assert_eq!(lb.l1, 1.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_image(&mut rng, 10 * 10 * 3);
        let b = random_image(&mut rng, 10 * 10 * 3);
        let cfg = SsimConfig::default();
        let ab = ssim(&a, &b, 10, 10, &cfg).unwrap();
        let ba = ssim(&b, &a, 10, 10, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn loss_shape_mismatch_is_rejected() {
        let a = vec![0.0; 4 * 4 * 3];
        let b = vec![0.0; 5 * 4 * 3];
        assert!(loss(&a, &b, 4, 4, 0.2, &SsimConfig::default()).is_err());
    }

    #[test]
    fn loss_nonnegative_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_image(&mut rng, 6 * 6 * 3);
            let b = random_image(&mut rng, 6 * 6 * 3);
            let lb = loss(&a, &b, 6, 6, 0.2, &SsimConfig::default()).unwrap();
            assert!(lb.total >= 0.0, "loss {lb:?}");
        }
    }

    #[test]
    fn ssim_works_below_window_size() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_image(&mut rng, 4 * 4 * 3);
        let s = ssim(&a, &a, 4, 4, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_gradient_matches_fd() {
        let mut rng = StdRng::seed_from_u64(6);
        let (w, h) = (7usize, 6usize);
        let pred = random_image(&mut rng, w * h * 3);
        let gt = random_image(&mut rng, w * h * 3);
        let cfg = SsimConfig::default();
        let (_, grad) = ssim_with_grad(&pred, &gt, w, h, &cfg).unwrap();
        let fd_h = 1e-6;
        for probe in 0..30 {
            let i = (probe * 13) % (w * h * 3);
            let mut p = pred.clone();
            p[i] += fd_h;
            let fp = ssim(&p, &gt, w, h, &cfg).unwrap();
            p[i] -= 2.0 * fd_h;
            let fm = ssim(&p, &gt, w, h, &cfg).unwrap();
            let fd = (fp - fm) / (2.0 * fd_h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "pixel {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn loss_gradient_matches_fd() {
        let mut rng = StdRng::seed_from_u64(7);
        let (w, h) = (5usize, 5usize);
        let pred = random_image(&mut rng, w * h * 3);
        let gt = random_image(&mut rng, w * h * 3);
        let cfg = SsimConfig::default();
        let (_, grad) = loss_with_grad(&pred, &gt, w, h, 0.2, &cfg).unwrap();
        let fd_h = 1e-6;
        for probe in 0..25 {
            let i = (probe * 7) % (w * h * 3);
            let mut p = pred.clone();
            p[i] += fd_h;
            let fp = loss(&p, &gt, w, h, 0.2, &cfg).unwrap().total;
            p[i] -= 2.0 * fd_h;
            let fm = loss(&p, &gt, w, h, 0.2, &cfg).unwrap().total;
            let fd = (fp - fm) / (2.0 * fd_h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "pixel {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn psnr_reference_points() {
        let a = vec![0.0; 30];
        let b = vec![0.1; 30]; // mse 0.01 -> 20 dB
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-12);
        let c = vec![1.0; 30]; // mse 1 -> 0 dB
        assert!(psnr(&a, &c).abs() < 1e-12);
        assert!(psnr(&a, &a).is_infinite());
    }
}
