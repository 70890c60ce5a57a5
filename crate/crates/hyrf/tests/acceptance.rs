//! Acceptance suite: every numbered criterion prints one PASS/FAIL line with
//! the measured value next to its threshold.

use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use hyrf::camera::Camera;
use hyrf::codec::huffman::{huffman_decode, huffman_encode};
use hyrf::codec::rvq::rvq_fit_encode;
use hyrf::codec::{compress_model, decompress_model};
use hyrf::config::RunConfig;
use hyrf::decoder::RawGeometry;
use hyrf::field::HashGridConfig;
use hyrf::gaussians::{aggregate, GaussianSet};
use hyrf::io::checkpoint::checkpoint_bytes;
use hyrf::math::{contract, logit, ray_sphere_intersect, Aabb, Ray};

use hyrf::model::{small_model_for_tests, Model, SceneParams};
use hyrf::render::{precull, rasterize, ProjectedSplat, RasterOptions};
use hyrf::train::loss::{loss, loss_with_grad, psnr, ssim, SsimConfig};
use hyrf::train::{backward, evaluate, fit};

fn criterion(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} {}: {name} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. End-to-end gradients vs central finite differences on a micro scene.
// ---------------------------------------------------------------------------

struct ParamAccess {
    name: &'static str,
    count: usize,
}

fn param_layout(model: &Model) -> Vec<ParamAccess> {
    let n = model.gaussians.len();
    let mut layout = vec![
        ParamAccess {
            name: "positions",
            count: 3 * n,
        },
        ParamAccess {
            name: "colors",
            count: 3 * n,
        },
        ParamAccess {
            name: "scales",
            count: n,
        },
        ParamAccess {
            name: "opacities",
            count: n,
        },
    ];
    for (label, field) in [
        ("geo_tables", &model.geo_field),
        ("rad_tables", &model.rad_field),
    ] {
        layout.push(ParamAccess {
            name: label,
            count: field.param_count(),
        });
    }
    for (label, net) in [("geo_net", &model.geo_net), ("color_net", &model.color_net)] {
        layout.push(ParamAccess {
            name: label,
            count: net.param_count(),
        });
    }
    layout
}

fn with_param<R>(model: &mut Model, index: usize, f: impl FnOnce(&mut f64) -> R) -> R {
    let n = model.gaussians.len();
    let mut i = index;
    if i < 3 * n {
        return f(&mut model.gaussians.positions[i / 3][i % 3]);
    }
    i -= 3 * n;
    if i < 3 * n {
        return f(&mut model.gaussians.colors_raw[i / 3][i % 3]);
    }
    i -= 3 * n;
    if i < n {
        return f(&mut model.gaussians.scales_raw[i]);
    }
    i -= n;
    if i < n {
        return f(&mut model.gaussians.opacities_raw[i]);
    }
    i -= n;
    for field_idx in 0..2 {
        let field = if field_idx == 0 {
            &mut model.geo_field
        } else {
            &mut model.rad_field
        };
        for table in &mut field.tables {
            if i < table.len() {
                return f(&mut table[i]);
            }
            i -= table.len();
        }
    }
    for net_idx in 0..2 {
        let net = if net_idx == 0 {
            &mut model.geo_net
        } else {
            &mut model.color_net
        };
        for w in &mut net.weights {
            if i < w.len() {
                return f(&mut w[i]);
            }
            i -= w.len();
        }
        for b in &mut net.biases {
            if i < b.len() {
                return f(&mut b[i]);
            }
            i -= b.len();
        }
    }
    panic!("parameter index out of range");
}

fn read_grad(model: &Model, index: usize) -> f64 {
    let n = model.gaussians.len();
    let mut i = index;
    if i < 3 * n {
        return model.gaussians.position_grads[i / 3][i % 3];
    }
    i -= 3 * n;
    if i < 3 * n {
        return model.gaussians.color_grads[i / 3][i % 3];
    }
    i -= 3 * n;
    if i < n {
        return model.gaussians.scale_grads[i];
    }
    i -= n;
    if i < n {
        return model.gaussians.opacity_grads[i];
    }
    i -= n;
    for field in [&model.geo_field, &model.rad_field] {
        for (table, grads) in field.tables.iter().zip(&field.grads) {
            if i < table.len() {
                return grads[i];
            }
            i -= table.len();
        }
    }
    for net in [&model.geo_net, &model.color_net] {
        for (w, g) in net.weights.iter().zip(&net.weight_grads) {
            if i < w.len() {
                return g[i];
            }
            i -= w.len();
        }
        for (b, g) in net.biases.iter().zip(&net.bias_grads) {
            if i < b.len() {
                return g[i];
            }
            i -= b.len();
        }
    }
    panic!("parameter index out of range");
}

fn micro_model() -> (Model, Camera, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(2024);
    let aabb = Aabb::symmetric(2.0).unwrap();
    let mut scene = SceneParams::with_aabb(aabb);
    scene.s_max = 0.3;
    scene.tau_transmittance = 0.0; // every pixel exercises the background path
    scene.cull_tolerance = 1e6;
    scene.pe_frequencies = 1;
    let rad_config = HashGridConfig {
        n_levels: 2,
        features_per_entry: 2,
        log2_max_entries: 6,
        base_resolution: 2,
        growth_factor: 2.0,
    };
    let positions = vec![
        Vector3::new(0.11, 0.06, 0.23),
        Vector3::new(-0.21, 0.13, -0.31),
        Vector3::new(0.17, -0.23, 0.04),
    ];
    let colors = vec![
        Vector3::new(0.7, 0.3, 0.4),
        Vector3::new(0.2, 0.8, 0.5),
        Vector3::new(0.5, 0.4, 0.9),
    ];
    let mut set = GaussianSet::from_points(&positions, &colors, 0.6, scene.s_max).unwrap();
    set.scales_raw = vec![logit(0.45), logit(0.6), logit(0.5)];
    let mut model = Model::new(set, scene, rad_config, &[8, 8], &mut rng).unwrap();
    for field in [&mut model.geo_field, &mut model.rad_field] {
        for t in &mut field.tables {
            for v in t.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    // A mildly rotated camera so every world-to-camera term in the chain is
    // non-trivial.
    let rotation = hyrf::math::quat_to_rotation(
        &hyrf::math::Quaternion::new(0.99, 0.06, -0.08, 0.04)
            .normalized()
            .unwrap(),
    )
    .unwrap();
    let cam = Camera {
        rotation,
        translation: Vector3::new(0.04, -0.02, 2.3),
        fx: 6.0,
        fy: 6.0,
        cx: 2.0,
        cy: 2.0,
        width: 4,
        height: 4,
        near: 0.2,
    };
    let gt: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    (model, cam, gt)
}

#[test]
fn criterion_1_end_to_end_gradients() {
    let started = Instant::now();
    let (mut model, cam, gt) = micro_model();
    let opts = RasterOptions {
        alpha_clip: 0.99,
        termination: 0.0,
        prefilter_cutoff: 0.0,
    };
    let ssim_cfg = SsimConfig::default();
    let lambda = 0.2;

    model.zero_grad();
    let cache = model.render_cached(&cam, &opts).unwrap();
    let (_, d_image) = loss_with_grad(&cache.image, &gt, 4, 4, lambda, &ssim_cfg).unwrap();
    backward(&mut model, &cam, &cache, &opts, &d_image).unwrap();

    let layout = param_layout(&model);
    let total: usize = layout.iter().map(|p| p.count).sum();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut index = 0usize;
    for group in &layout {
        for k in 0..group.count {
            let analytic = read_grad(&model, index);
            let backup = with_param(&mut model, index, |v| {
                let b = *v;
                *v = b + h;
                b
            });
            let fp = {
                let out = model.render(&cam, &opts).unwrap();
                loss(&out.image, &gt, 4, 4, lambda, &ssim_cfg)
                    .unwrap()
                    .total
            };
            with_param(&mut model, index, |v| *v = backup - h);
            let fm = {
                let out = model.render(&cam, &opts).unwrap();
                loss(&out.image, &gt, 4, 4, lambda, &ssim_cfg)
                    .unwrap()
                    .total
            };
            with_param(&mut model, index, |v| *v = backup);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{k}] fd {fd:.3e} analytic {analytic:.3e}", group.name);
            }
            index += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    criterion(
        1,
        "end-to-end gradient suite",
        worst < 1e-3 && elapsed < 60.0,
        &format!(
            "{total} parameters, max relative error {worst:.3e} (worst {worst_at}) in {elapsed:.1}s (limits 1e-3, 60s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Rasterizer vs brute-force blending.
// ---------------------------------------------------------------------------

/// Independent per-pixel evaluation of the blending sum: own sort, own 2x2
/// inverse, no early termination, no footprint filter.
fn brute_force_blend(splats: &[ProjectedSplat], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap()
            .then(splats[a].index.cmp(&splats[b].index))
    });
    let mut color = vec![0.0; w * h * 3];
    let mut trans = vec![1.0; w * h];
    for py in 0..h {
        for px in 0..w {
            let mut t = 1.0f64;
            let pi = py * w + px;
            for &s in &order {
                let sp = &splats[s];
                let det = sp.cov2d[(0, 0)] * sp.cov2d[(1, 1)] - sp.cov2d[(0, 1)] * sp.cov2d[(1, 0)];
                if det < 1e-12 {
                    continue;
                }
                let inv00 = sp.cov2d[(1, 1)] / det;
                let inv01 = -sp.cov2d[(0, 1)] / det;
                let inv11 = sp.cov2d[(0, 0)] / det;
                let dx = px as f64 + 0.5 - sp.mean2d.x;
                let dy = py as f64 + 0.5 - sp.mean2d.y;
                let m = dx * dx * inv00 + 2.0 * dx * dy * inv01 + dy * dy * inv11;
                let alpha = (sp.alpha * (-0.5 * m).exp()).min(0.99);
                for c in 0..3 {
                    color[pi * 3 + c] += sp.color[c] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            trans[pi] = t;
        }
    }
    (color, trans)
}

#[test]
fn criterion_2_blending_oracle() {
    let mut rng = StdRng::seed_from_u64(42);
    let (w, h) = (16usize, 16usize);
    let mut max_diff = 0.0f64;
    let mut max_diff_default = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=20);
        let splats: Vec<ProjectedSplat> = (0..n)
            .map(|i| {
                let a: f64 = rng.gen_range(0.4..4.0);
                let c: f64 = rng.gen_range(0.4..4.0);
                let b = rng.gen_range(-0.6..0.6) * (a * c).sqrt();
                ProjectedSplat {
                    index: i,
                    mean2d: Vector2::new(rng.gen_range(-1.0..17.0), rng.gen_range(-1.0..17.0)),
                    cov2d: Matrix2::new(a, b, b, c),
                    depth: rng.gen_range(0.5..12.0),
                    color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                    alpha: rng.gen_range(0.02..0.99),
                }
            })
            .collect();
        let (want_color, want_trans) = brute_force_blend(&splats, w, h);
        let (target, _) = rasterize(&splats, w, h, &RasterOptions::exact());
        for (a, b) in target.color.iter().zip(&want_color) {
            max_diff = max_diff.max((a - b).abs());
        }
        for (a, b) in target.transmittance.iter().zip(&want_trans) {
            max_diff = max_diff.max((a - b).abs());
        }
        // The shipping options differ only by the bounded speed heuristics.
        let (fast, _) = rasterize(&splats, w, h, &RasterOptions::default());
        for (a, b) in fast.color.iter().zip(&want_color) {
            max_diff_default = max_diff_default.max((a - b).abs());
        }
    }
    criterion(
        2,
        "blending oracle",
        max_diff < 1e-6,
        &format!(
            "100 scenes: exact-mode max abs diff {max_diff:.3e} (< 1e-6); default options within {max_diff_default:.3e} (termination bound {:.3e})",
            RasterOptions::default().termination
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Pre-culling changes nothing.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_culling_equivalence() {
    let mut rng = StdRng::seed_from_u64(77);
    let mut max_diff = 0.0f64;
    let mut culled_total = 0usize;
    for trial in 0..20 {
        let scene = SceneParams::with_aabb(Aabb::symmetric(4.0).unwrap());
        let cfg = HashGridConfig {
            n_levels: 3,
            features_per_entry: 2,
            log2_max_entries: 9,
            base_resolution: 4,
            growth_factor: 2.0,
        };
        let mut model = small_model_for_tests(25, 1000 + trial, scene, cfg, &[8, 8]).unwrap();
        // Footprints must stay several sigma inside the 0.15 NDC band.
        model.scene.s_max = 0.01;
        let az = rng.gen_range(0.0..std::f64::consts::TAU);
        let el: f64 = rng.gen_range(-0.3..0.3);
        let eye = Vector3::new(
            3.0 * az.cos() * el.cos(),
            3.0 * az.sin() * el.cos(),
            3.0 * el.sin(),
        );
        let z_cam = (-eye).normalize();
        let up = Vector3::new(0.0, 0.0, 1.0);
        let x_cam = z_cam.cross(&up).normalize();
        let y_cam = z_cam.cross(&x_cam).normalize();
        let rotation =
            Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), z_cam.transpose()]);
        let cam = Camera {
            rotation,
            translation: -(rotation * eye),
            fx: 48.0,
            fy: 48.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            near: 0.2,
        };
        let cull = precull(&model.gaussians.positions, &cam, model.scene.cull_tolerance);
        culled_total += model.gaussians.len() - cull.kept_indices.len();
        let banded = model.render(&cam, &RasterOptions::default()).unwrap();
        let mut wide = model.clone();
        wide.scene.cull_tolerance = 1e9;
        let full = wide.render(&cam, &RasterOptions::default()).unwrap();
        for (a, b) in banded.image.iter().zip(&full.image) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    criterion(
        3,
        "culling equivalence",
        max_diff <= 1e-6 && culled_total > 0,
        &format!(
            "20 scenes, {culled_total} Gaussians culled in total, max per-pixel abs diff {max_diff:.3e} (<= 1e-6)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Background-skip error bound.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_background_skip_bound() {
    let spec = hyrf::synth::SynthSpec {
        n_gaussians: 32,
        n_cameras: 4,
        width: 48,
        height: 48,
        ..Default::default()
    };
    let (dataset, model) = hyrf::synth::synth_scene(&spec).unwrap();
    let mut skipping = model.clone();
    skipping.scene.tau_transmittance = 0.2;
    let mut always = model.clone();
    always.scene.tau_transmittance = 0.0;
    let mut max_diff = 0.0f64;
    for cam in &dataset.cameras {
        let a = skipping.render(cam, &RasterOptions::default()).unwrap();
        let b = always.render(cam, &RasterOptions::default()).unwrap();
        for (x, y) in a.image.iter().zip(&b.image) {
            max_diff = max_diff.max((x - y).abs());
        }
    }
    criterion(
        4,
        "background skip bound",
        max_diff <= 0.2 + 1e-12,
        &format!("tau 0.2 vs 0.0: measured max per-channel diff {max_diff:.6} (<= 0.2)"),
    );
}

// ---------------------------------------------------------------------------
// 5. Contraction range and seam.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_contraction() {
    let mut rng = StdRng::seed_from_u64(5);
    let mut ok = true;
    for _ in 0..100_000 {
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if dir.norm() < 1e-9 {
            continue;
        }
        let p = dir.normalize() * 10f64.powf(rng.gen_range(-3.0..6.0));
        let c = contract(&p);
        for k in 0..3 {
            ok &= c[k] > 0.0 && c[k] < 1.0;
        }
    }
    let mut seam = 0.0f64;
    for _ in 0..1000 {
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let a = contract(&(dir * (1.0 - 1e-12)));
        let b = contract(&(dir * (1.0 + 1e-12)));
        seam = seam.max((a - b).norm());
    }
    criterion(
        5,
        "contraction",
        ok && seam < 1e-9,
        &format!("1e5 points with norms up to 1e6 strictly in (0,1)^3; seam disagreement {seam:.3e} (< 1e-9)"),
    );
}

// ---------------------------------------------------------------------------
// 6. Ray-sphere intersection.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_ray_sphere() {
    let mut rng = StdRng::seed_from_u64(6);
    let radius = 100.0;
    let mut worst = 0.0f64;
    let mut all_positive = true;
    for _ in 0..10_000 {
        let origin_dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if origin_dir.norm() < 1e-9 {
            continue;
        }
        let origin = origin_dir.normalize() * rng.gen_range(0.0..0.95 * radius);
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if dir.norm() < 1e-9 {
            continue;
        }
        let ray = Ray::new(origin, dir).unwrap();
        let (t, hit) = ray_sphere_intersect(&ray, radius).unwrap();
        all_positive &= t > 0.0;
        worst = worst.max((hit.norm() - radius).abs());
    }
    criterion(
        6,
        "ray-sphere",
        all_positive && worst < 1e-7,
        &format!("1e4 interior rays at r=100: max |hit - r| {worst:.3e} (< 1e-7), all t > 0: {all_positive}"),
    );
}

// ---------------------------------------------------------------------------
// 7 + 8. Toy-scene convergence, then compression on the converged model.
// ---------------------------------------------------------------------------

fn toy_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.hash.n_levels = 4;
    cfg.hash.base_resolution = 4;
    cfg.hash.finest_resolution = 32;
    cfg.hash.log2_max_entries = 12;
    cfg.decoder.hidden_width = 32;
    cfg.scene.pe_frequencies = 2;
    cfg.train.iterations = 2000;
    cfg.train.log_interval = 10;
    cfg.train.densify_start = 500;
    cfg.train.densify_end = 1200;
    cfg.train.densify_interval = 250;
    cfg.train.densify_grad_threshold = 0.01;
    cfg.train.seed = 0;
    cfg
}

#[test]
fn criterion_7_and_8_convergence_and_compression() {
    // --- criterion 7: convergence on the seed-7 toy scene ---
    let started = Instant::now();
    let spec = hyrf::synth::SynthSpec::default(); // seed 7, 64 gaussians, 8 cameras, 64x64
    let (dataset, _gt) = hyrf::synth::synth_scene(&spec).unwrap();
    let cfg = toy_run_config();
    let outcome = fit(&dataset, &cfg, None, |_| {}).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let loss_at_10 = outcome.metrics.first().expect("metrics start at iter 10");
    assert_eq!(loss_at_10.iteration, 10);
    let loss_at_end = outcome.metrics.last().unwrap();
    assert_eq!(loss_at_end.iteration, 2000);

    let test_rows = evaluate(
        &outcome.model,
        &dataset,
        &dataset.test_indices(),
        &RasterOptions::default(),
        &SsimConfig::default(),
    )
    .unwrap();
    let test_psnr = test_rows.iter().map(|(_, p, _)| *p).sum::<f64>() / test_rows.len() as f64;

    criterion(
        7,
        "toy convergence",
        test_psnr >= 28.0 && loss_at_end.loss < 0.25 * loss_at_10.loss && elapsed < 600.0,
        &format!(
            "test-view psnr {test_psnr:.2} dB (>= 28), loss {:.5} at iter 2000 vs {:.5} at iter 10 (ratio {:.3} < 0.25), {elapsed:.0}s (< 600)",
            loss_at_end.loss,
            loss_at_10.loss,
            loss_at_end.loss / loss_at_10.loss
        ),
    );

    // --- criterion 8: compression on the converged model ---
    let model = &outcome.model;
    let ckpt = checkpoint_bytes(model, outcome.final_iteration);
    let bundle = compress_model(model, outcome.final_iteration, &cfg.codec).unwrap();
    let ratio = bundle.len() as f64 / ckpt.len() as f64;
    let (decompressed, _) = decompress_model(&bundle).unwrap();

    let mut min_psnr = f64::INFINITY;
    for cam in &dataset.cameras {
        let reference = model.render(cam, &RasterOptions::default()).unwrap();
        let lossy = decompressed.render(cam, &RasterOptions::default()).unwrap();
        min_psnr = min_psnr.min(psnr(&lossy.image, &reference.image));
    }

    // Lossless entropy coding, spot-checked here as part of the criterion.
    let mut rng = StdRng::seed_from_u64(8);
    let mut huffman_ok = true;
    for _ in 0..1000 {
        let len = rng.gen_range(1..300);
        let alphabet = rng.gen_range(1..100u32);
        let symbols: Vec<u32> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
        let s = huffman_encode(&symbols).unwrap();
        huffman_ok &= huffman_decode(&s).unwrap() == symbols;
    }

    // R-VQ stage error monotonicity on this model's color residuals. A
    // codebook smaller than the vector count keeps the quantization lossy so
    // the property is non-trivial.
    let n = model.gaussians.len();
    let colors: Vec<f64> = model
        .gaussians
        .colors_raw
        .iter()
        .flat_map(|c| [c.x, c.y, c.z])
        .collect();
    let enc = rvq_fit_encode(
        &colors,
        n,
        3,
        cfg.codec.rvq_stages,
        8.min(n),
        cfg.codec.rvq_iters,
        cfg.codec.seed,
    )
    .unwrap();
    let monotone = enc.stage_errors.windows(2).all(|w| w[1] <= w[0] + 1e-12);

    criterion(
        8,
        "compression",
        min_psnr >= 40.0 && ratio < 0.5 && huffman_ok && monotone,
        &format!(
            "render psnr vs uncompressed {min_psnr:.2} dB (>= 40), bundle {} / checkpoint {} bytes (ratio {ratio:.3} < 0.5), huffman 1000 round trips: {huffman_ok}, rvq errors non-increasing: {monotone} ({:?})",
            bundle.len(),
            ckpt.len(),
            enc.stage_errors.iter().map(|e| (e * 1e6).round() / 1e6).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Aggregation ranges.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_aggregation_ranges() {
    let mut rng = StdRng::seed_from_u64(9);
    let mut ok = true;
    let mut worst_rot = 0.0f64;
    for _ in 0..100_000 {
        let geo = RawGeometry {
            opacity: rng.gen_range(-40.0..40.0),
            scale: [
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
            ],
            rotation: [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ],
        };
        let raw_color = [
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
        ];
        let s_max = rng.gen_range(0.05..5.0);
        let a = aggregate(
            &geo,
            &raw_color,
            Vector3::zeros(),
            &Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            s_max,
        );
        ok &= a.opacity > 0.0 && a.opacity < 1.0;
        for k in 0..3 {
            ok &= a.color[k] > 0.0 && a.color[k] < 1.0;
            ok &= a.scale[k] > 0.0 && a.scale[k] / s_max < 1.0;
        }
        worst_rot = worst_rot.max((a.rotation.norm() - 1.0).abs());
    }
    criterion(
        9,
        "aggregation ranges",
        ok && worst_rot < 1e-9,
        &format!("1e5 draws: alpha/color/scale strictly inside (0,1), max | |r| - 1 | = {worst_rot:.3e} (< 1e-9)"),
    );
}

// ---------------------------------------------------------------------------
// 10. SSIM/PSNR sanity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_metric_sanity() {
    let mut rng = StdRng::seed_from_u64(10);
    let img: Vec<f64> = (0..12 * 10 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cfg = SsimConfig::default();
    let self_ssim = ssim(&img, &img, 12, 10, &cfg).unwrap();

    let zeros = vec![0.0; 12 * 10 * 3];
    let ones = vec![1.0; 12 * 10 * 3];
    let const_ssim = ssim(&zeros, &ones, 12, 10, &cfg).unwrap();
    let closed_form = cfg.c1 / (1.0 + cfg.c1); // ~9.999e-5

    let gt = vec![0.0; 300];
    let pred = vec![0.1; 300]; // mse 0.01
    let p20 = psnr(&pred, &gt);

    let pass = (self_ssim - 1.0).abs() < 1e-9
        && (const_ssim - closed_form).abs() < 1e-12
        && (p20 - 20.0).abs() < 1e-9;
    criterion(
        10,
        "metric sanity",
        pass,
        &format!(
            "ssim(a,a) = {self_ssim:.12}; constant-image ssim {const_ssim:.9e} vs closed form {closed_form:.9e}; psnr at mse 0.01 = {p20:.12} dB"
        ),
    );
}
