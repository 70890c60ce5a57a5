//! The optimization loop: loss, metrics, per-group first-order optimizer,
//! densification/pruning/opacity-reset schedules, and the gradient plumbing
//! across fields, decoders, explicit Gaussians and the background path.

pub mod adam;
mod backprop;
pub mod loss;

pub use backprop::backward;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaussians::{DensifyConfig, GaussianSet, Moments};
use crate::io::dataset::Dataset;
use crate::io::image::quantize_image;
use crate::math::Aabb;
use crate::model::{Model, SceneParams};
use crate::render::RasterOptions;
use adam::{adam_step, lr_exp_decay, AdamHyper};
use loss::{loss_with_grad, psnr, LossBreakdown, SsimConfig};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lambda_ssim: f64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_explicit: f64,
    pub lr_hash: f64,
    pub lr_decoder: f64,
    pub densify_start: u64,
    pub densify_end: u64,
    pub densify_interval: u64,
    pub densify_grad_threshold: f64,
    /// Clone/split boundary as a fraction of s_max.
    pub densify_split_fraction: f64,
    pub opacity_reset_interval: u64,
    pub opacity_reset_target: f64,
    pub prune_opacity: f64,
    pub ssim: SsimConfig,
    pub log_interval: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lambda_ssim: 0.2,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_explicit: 2.5e-3,
            lr_hash: 1e-2,
            lr_decoder: 1e-3,
            densify_start: 500,
            densify_end: 15_000,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            densify_split_fraction: 0.35,
            opacity_reset_interval: 3000,
            opacity_reset_target: 0.01,
            prune_opacity: 0.005,
            ssim: SsimConfig::default(),
            log_interval: 10,
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub psnr: f64,
    pub n_gaussians: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

struct MlpMoments {
    weights: Vec<Moments>,
    biases: Vec<Moments>,
}

impl MlpMoments {
    fn for_net(net: &crate::decoder::Mlp) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Moments::zeros(w.len()))
                .collect(),
            biases: net.biases.iter().map(|b| Moments::zeros(b.len())).collect(),
        }
    }
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub raster: RasterOptions,
    pub iteration: u64,
    geo_field_moments: Vec<Moments>,
    rad_field_moments: Vec<Moments>,
    geo_net_moments: MlpMoments,
    color_net_moments: MlpMoments,
    rng: ChaCha8Rng,
}

fn field_moments(field: &crate::field::HashGrid) -> Vec<Moments> {
    field
        .tables
        .iter()
        .map(|t| Moments::zeros(t.len()))
        .collect()
}

/// Adam over a Vector3 array, moments stored flat with stride 3.
fn adam_step_vec3(
    params: &mut [Vector3<f64>],
    grads: &[Vector3<f64>],
    moments: &mut Moments,
    step: u64,
    hp: &AdamHyper,
) {
    if hp.lr == 0.0 {
        return;
    }
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..params.len() {
        for k in 0..3 {
            let g = grads[i][k];
            let j = i * 3 + k;
            let m = hp.beta1 * moments.m[j] + (1.0 - hp.beta1) * g;
            let v = hp.beta2 * moments.v[j] + (1.0 - hp.beta2) * g * g;
            moments.m[j] = m;
            moments.v[j] = v;
            params[i][k] -= hp.lr * (m / bc1) / ((v / bc2).sqrt() + hp.eps);
        }
    }
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, raster: RasterOptions) -> Self {
        let geo_field_moments = field_moments(&model.geo_field);
        let rad_field_moments = field_moments(&model.rad_field);
        let geo_net_moments = MlpMoments::for_net(&model.geo_net);
        let color_net_moments = MlpMoments::for_net(&model.color_net);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            model,
            config,
            raster,
            iteration: 0,
            geo_field_moments,
            rad_field_moments,
            geo_net_moments,
            color_net_moments,
            rng,
        }
    }

    fn optimizer_step(&mut self) {
        let step = self.iteration;
        let cfg = &self.config;
        let pos_lr = lr_exp_decay(
            cfg.lr_position_init,
            cfg.lr_position_final,
            step,
            cfg.iterations.max(1),
        );
        let g = &mut self.model.gaussians;
        adam_step_vec3(
            &mut g.positions,
            &g.position_grads,
            &mut g.position_moments,
            step,
            &AdamHyper::with_lr(pos_lr),
        );
        let explicit = AdamHyper::with_lr(cfg.lr_explicit);
        adam_step_vec3(
            &mut g.colors_raw,
            &g.color_grads,
            &mut g.color_moments,
            step,
            &explicit,
        );
        adam_step(
            &mut g.scales_raw,
            &g.scale_grads,
            &mut g.scale_moments,
            step,
            &explicit,
        );
        adam_step(
            &mut g.opacities_raw,
            &g.opacity_grads,
            &mut g.opacity_moments,
            step,
            &explicit,
        );
        let hash = AdamHyper::with_lr(cfg.lr_hash);
        for (l, mom) in self.geo_field_moments.iter_mut().enumerate() {
            adam_step(
                &mut self.model.geo_field.tables[l],
                &self.model.geo_field.grads[l],
                mom,
                step,
                &hash,
            );
        }
        for (l, mom) in self.rad_field_moments.iter_mut().enumerate() {
            adam_step(
                &mut self.model.rad_field.tables[l],
                &self.model.rad_field.grads[l],
                mom,
                step,
                &hash,
            );
        }
        let dec = AdamHyper::with_lr(cfg.lr_decoder);
        for (net, mom) in [
            (&mut self.model.geo_net, &mut self.geo_net_moments),
            (&mut self.model.color_net, &mut self.color_net_moments),
        ] {
            for l in 0..net.weights.len() {
                adam_step(
                    &mut net.weights[l],
                    &net.weight_grads[l],
                    &mut mom.weights[l],
                    step,
                    &dec,
                );
                adam_step(
                    &mut net.biases[l],
                    &net.bias_grads[l],
                    &mut mom.biases[l],
                    step,
                    &dec,
                );
            }
        }
    }

    fn density_control(&mut self) -> Result<(usize, usize, usize)> {
        let cfg = &self.config;
        let iter = self.iteration;
        let mut cloned = 0;
        let mut split = 0;
        let mut pruned = 0;
        let densify_due = cfg.densify_interval > 0
            && iter >= cfg.densify_start
            && iter <= cfg.densify_end
            && iter.is_multiple_of(cfg.densify_interval);
        if densify_due {
            let geom = self.model.activated_geometry()?;
            let scales: Vec<Vector3<f64>> = geom.iter().map(|(_, s)| *s).collect();
            let dcfg = DensifyConfig {
                grad_threshold: cfg.densify_grad_threshold,
                scale_split_threshold: cfg.densify_split_fraction * self.model.scene.s_max,
                split_shrink: 1.6,
            };
            let outcome =
                self.model
                    .gaussians
                    .densify(&dcfg, &scales, self.model.scene.s_max, &mut self.rng);
            cloned = outcome.cloned;
            split = outcome.split;
            // Prune on the post-densify set.
            let geom = self.model.activated_geometry()?;
            let alphas: Vec<f64> = geom.iter().map(|(a, _)| *a).collect();
            pruned = self.model.gaussians.prune(&alphas, cfg.prune_opacity)?;
        }
        if cfg.opacity_reset_interval > 0 && iter.is_multiple_of(cfg.opacity_reset_interval) {
            self.model
                .gaussians
                .reset_opacity(cfg.opacity_reset_target)?;
        }
        Ok((cloned, split, pruned))
    }

    /// One full forward/backward/update cycle on a single view.
    pub fn train_step(&mut self, cam: &Camera, gt: &[f64]) -> Result<StepMetrics> {
        self.iteration += 1;
        self.model.zero_grad();
        let cache = self.model.render_cached(cam, &self.raster)?;
        let (breakdown, d_image) = loss_with_grad(
            &cache.image,
            gt,
            cam.width,
            cam.height,
            self.config.lambda_ssim,
            &self.config.ssim,
        )?;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence(format!(
                "loss became non-finite at iteration {} ({:?}; {} gaussians, {} splats)",
                self.iteration,
                breakdown,
                self.model.gaussians.len(),
                cache.splats.len()
            )));
        }
        backward(&mut self.model, cam, &cache, &self.raster, &d_image)?;
        self.optimizer_step();
        let (cloned, split, pruned) = self.density_control()?;
        Ok(StepMetrics {
            iteration: self.iteration,
            loss: breakdown,
            psnr: psnr(&cache.image, gt),
            n_gaussians: self.model.gaussians.len(),
            cloned,
            split,
            pruned,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub psnr: f64,
    pub n_gaussians: usize,
    pub wall_time_s: f64,
}

pub struct FitOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRow>,
    pub final_iteration: u64,
}

/// Percentile-based box of the initial cloud (large-scene convention).
fn percentile_aabb(points: &[Vector3<f64>], lo: f64, hi: f64, pad: f64) -> Result<Aabb> {
    if points.is_empty() {
        return Err(Error::invalid("percentile aabb needs points"));
    }
    let mut min = Vector3::zeros();
    let mut max = Vector3::zeros();
    for k in 0..3 {
        let mut vals: Vec<f64> = points.iter().map(|p| p[k]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = |q: f64| ((vals.len() - 1) as f64 * q).round() as usize;
        min[k] = vals[idx(lo)];
        max[k] = vals[idx(hi)];
        if min[k] >= max[k] {
            min[k] -= 0.5;
            max[k] += 0.5;
        }
        let span = max[k] - min[k];
        min[k] -= span * pad;
        max[k] += span * pad;
    }
    Aabb::new(min, max)
}

/// Builds the scene box per the configured source.
pub fn scene_aabb(dataset: &Dataset, cfg: &RunConfig) -> Result<Aabb> {
    use crate::config::AabbSource;
    match cfg.scene.aabb_source {
        AabbSource::Cameras => Aabb::from_points(&dataset.camera_positions(), cfg.scene.aabb_pad),
        AabbSource::Fixed => Aabb::symmetric(cfg.scene.aabb_fixed_half),
        AabbSource::PointsPercentile => {
            percentile_aabb(&dataset.initial_points, 0.01, 0.99, cfg.scene.aabb_pad)
        }
    }
}

/// Initializes a fresh model from the dataset per the run configuration.
pub fn init_model(dataset: &Dataset, cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    use rand::Rng;
    let aabb = scene_aabb(dataset, cfg)?;
    let mut scene = SceneParams::with_aabb(aabb);
    scene.s_max = cfg.scene.s_max_fraction * aabb.diagonal();
    scene.bg_radius = cfg.scene.bg_radius;
    scene.tau_transmittance = cfg.scene.tau_transmittance;
    scene.cull_tolerance = cfg.scene.cull_tolerance;
    scene.pe_frequencies = cfg.scene.pe_frequencies;

    let (points, colors) = if dataset.initial_points.is_empty() {
        // Random-in-box fallback when the dataset ships no sparse cloud.
        let n = 1000;
        let c = aabb.center();
        let h = aabb.half_extent() * 0.5;
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    c.x + rng.gen_range(-h.x..h.x),
                    c.y + rng.gen_range(-h.y..h.y),
                    c.z + rng.gen_range(-h.z..h.z),
                )
            })
            .collect();
        let cols = vec![Vector3::new(0.5, 0.5, 0.5); n];
        (pts, cols)
    } else {
        (
            dataset.initial_points.clone(),
            dataset.initial_colors.clone(),
        )
    };
    let set = GaussianSet::from_points(&points, &colors, 0.1, scene.s_max)?;
    Model::new(
        set,
        scene,
        cfg.hash.grid_config(cfg.scene.scene_class),
        &cfg.decoder.hidden(),
        rng,
    )
}

fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,loss,psnr,n_gaussians,wall_time_s")?;
    for r in rows {
        writeln!(
            f,
            "{},{:.8},{:.4},{},{:.3}",
            r.iteration, r.loss, r.psnr, r.n_gaussians, r.wall_time_s
        )?;
    }
    Ok(())
}

/// Full training run over the dataset's train split. When `out_dir` is given,
/// checkpoints and the metrics CSV land there (also on fatal errors, so a
/// diverged run leaves a partial checkpoint behind).
pub fn fit(
    dataset: &Dataset,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    mut on_log: impl FnMut(&StepMetrics),
) -> Result<FitOutcome> {
    if dataset.cameras.is_empty() {
        return Err(Error::invalid("dataset has no cameras"));
    }
    let train_idx = {
        let t = dataset.train_indices();
        if t.is_empty() {
            (0..dataset.cameras.len()).collect()
        } else {
            t
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x9e3779b9));
    let model = init_model(dataset, cfg, &mut rng)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        crate::io::save_checkpoint(&model, 0, &dir.join("init.ckpt"))?;
    }

    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.render);
    let mut metrics = Vec::new();
    let started = Instant::now();
    let mut order: Vec<usize> = Vec::new();
    let result = (|| -> Result<()> {
        for it in 1..=cfg.train.iterations {
            if order.is_empty() {
                order = train_idx.clone();
                order.shuffle(&mut trainer.rng);
            }
            let vi = order.pop().unwrap();
            let m = trainer.train_step(&dataset.cameras[vi], &dataset.images[vi])?;
            if cfg.train.log_interval > 0 && it % cfg.train.log_interval == 0 {
                let row = MetricsRow {
                    iteration: it,
                    loss: m.loss.total,
                    psnr: m.psnr,
                    n_gaussians: m.n_gaussians,
                    wall_time_s: started.elapsed().as_secs_f64(),
                };
                on_log(&m);
                metrics.push(row);
            }
            if cfg.train.checkpoint_interval > 0 && it % cfg.train.checkpoint_interval == 0 {
                if let Some(dir) = out_dir {
                    crate::io::save_checkpoint(
                        &trainer.model,
                        it,
                        &dir.join(format!("ckpt_{it:07}.ckpt")),
                    )?;
                }
            }
        }
        Ok(())
    })();

    if let Some(dir) = out_dir {
        // Flush whatever exists, even on a fatal error.
        let name = if result.is_ok() {
            "model.ckpt"
        } else {
            "partial.ckpt"
        };
        crate::io::save_checkpoint(&trainer.model, trainer.iteration, &dir.join(name))?;
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    }
    result?;
    Ok(FitOutcome {
        final_iteration: trainer.iteration,
        model: trainer.model,
        metrics,
    })
}

/// Per-view PSNR/SSIM table. Renders are quantized to 8 bits first: the
/// metrics describe the images the artifact actually emits.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
    raster: &RasterOptions,
    ssim_cfg: &SsimConfig,
) -> Result<Vec<(String, f64, f64)>> {
    let mut rows = Vec::new();
    for &i in indices {
        let cam = &dataset.cameras[i];
        let out = model.render(cam, raster)?;
        let rendered = quantize_image(&out.image);
        let gt = &dataset.images[i];
        let p = psnr(&rendered, gt);
        let s = loss::ssim(&rendered, gt, cam.width, cam.height, ssim_cfg)?;
        rows.push((dataset.names[i].clone(), p, s));
    }
    Ok(rows)
}
