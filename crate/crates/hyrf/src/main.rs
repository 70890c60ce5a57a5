//! Command-line front end: train, render, eval, compress, decompress, synth.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Matrix4, Vector3};

use hyrf::camera::Camera;
use hyrf::codec::{compress_model, decompress_model};
use hyrf::config::RunConfig;
use hyrf::error::Error;
use hyrf::io::image::{write_png, write_png_gray, write_raw_f32};
use hyrf::io::{load_checkpoint, load_dataset, save_checkpoint};
use hyrf::render::RasterOptions;
use hyrf::synth::{write_synth_scene, SynthSpec};
use hyrf::train::loss::SsimConfig;
use hyrf::train::{evaluate, fit};

#[derive(Parser)]
#[command(
    name = "hyrf",
    about = "Hybrid radiance fields: explicit Gaussians + decoupled neural fields",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run-configuration file (flat key = value with [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys, e.g. --set train.iterations=100.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Training iterations (shorthand for --set train.iterations=N).
    #[arg(long)]
    iterations: Option<u64>,
    /// RNG seed (shorthand for --set train.seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 is the bitwise-reproducible reference mode (and the
    /// only mode this build implements).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl ConfigArgs {
    fn resolve(&self) -> hyrf::Result<RunConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        for o in &self.overrides {
            let Some(eq) = o.find('=') else {
                return Err(Error::invalid(format!(
                    "--set expects section.key=value, got '{o}'"
                )));
            };
            overrides.push((o[..eq].trim().to_string(), o[eq + 1..].trim().to_string()));
        }
        if let Some(it) = self.iterations {
            overrides.push(("train.iterations".into(), it.to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("train.seed".into(), seed.to_string()));
        }
        if self.threads > 1 {
            overrides.push(("train.threads".into(), self.threads.to_string()));
        }
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path, &overrides)?,
            None => RunConfig::from_overrides(&overrides)?,
        };
        if cfg.threads != 1 {
            eprintln!(
                "note: compute is single-threaded and bitwise reproducible; \
                 --threads {} is accepted but does not add workers",
                cfg.threads
            );
            cfg.threads = 1;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a model on a dataset.
    Train {
        /// Dataset root (transforms-json or colmap-text layout).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render one view from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera index into --data, or a path to a camera JSON file.
        #[arg(long)]
        camera: String,
        /// Dataset root, required when --camera is an index.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Optional grayscale PNG of the transmittance map.
        #[arg(long)]
        transmittance: Option<PathBuf>,
        /// Optional raw little-endian f32 dump for golden tests.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// PSNR/SSIM table over a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which split to evaluate: test, train or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Pack a checkpoint into a compressed bundle.
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Reconstruct a render-ready checkpoint from a bundle.
    Decompress {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with a known ground-truth model.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of ground-truth Gaussians.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        cameras: usize,
        /// Square image side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Single-camera JSON: the transforms.json frame layout plus explicit
/// intrinsics, so a view can be rendered without a dataset.
#[derive(serde::Deserialize)]
struct CameraFile {
    camera_angle_x: f64,
    transform_matrix: [[f64; 4]; 4],
    width: usize,
    height: usize,
    #[serde(default = "default_near")]
    near: f64,
}

fn default_near() -> f64 {
    0.2
}

fn load_camera_json(path: &PathBuf) -> hyrf::Result<Camera> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let parsed: CameraFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut c2w = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            c2w[(r, c)] = parsed.transform_matrix[r][c];
        }
    }
    for r in 0..4 {
        c2w[(r, 1)] = -c2w[(r, 1)];
        c2w[(r, 2)] = -c2w[(r, 2)];
    }
    let w2c = c2w
        .try_inverse()
        .ok_or_else(|| Error::invalid("singular camera transform"))?;
    let fx = Camera::focal_from_fov_x(parsed.width, parsed.camera_angle_x);
    let cam = Camera {
        rotation: Matrix3::from_fn(|r, c| w2c[(r, c)]),
        translation: Vector3::new(w2c[(0, 3)], w2c[(1, 3)], w2c[(2, 3)]),
        fx,
        fy: fx,
        cx: parsed.width as f64 / 2.0,
        cy: parsed.height as f64 / 2.0,
        width: parsed.width,
        height: parsed.height,
        near: parsed.near,
    };
    cam.validate()?;
    Ok(cam)
}

fn run(cli: Cli) -> hyrf::Result<()> {
    match cli.command {
        Command::Train { data, out, cfg } => {
            let cfg = cfg.resolve()?;
            let dataset = load_dataset(&data, None, cfg.scene.near)?;
            println!(
                "loaded {} cameras ({} train / {} test), {} initial points",
                dataset.cameras.len(),
                dataset.train_indices().len(),
                dataset.test_indices().len(),
                dataset.initial_points.len()
            );
            let outcome = fit(&dataset, &cfg, Some(&out), |m| {
                println!(
                    "iter {:>6}  loss {:.6}  l1 {:.6}  ssim {:.4}  psnr {:>6.2}  gaussians {}",
                    m.iteration, m.loss.total, m.loss.l1, m.loss.ssim, m.psnr, m.n_gaussians
                );
            })?;
            println!(
                "done: {} iterations, {} gaussians, checkpoint in {}",
                outcome.final_iteration,
                outcome.model.gaussians.len(),
                out.display()
            );
        }
        Command::Render {
            checkpoint,
            camera,
            data,
            out,
            transmittance,
            raw,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let cam = match camera.parse::<usize>() {
                Ok(idx) => {
                    let data = data
                        .ok_or_else(|| Error::invalid("--camera <index> requires --data <dir>"))?;
                    let dataset = load_dataset(&data, None, 0.2)?;
                    dataset.cameras.get(idx).cloned().ok_or_else(|| {
                        Error::invalid(format!(
                            "camera index {idx} out of range ({} cameras)",
                            dataset.cameras.len()
                        ))
                    })?
                }
                Err(_) => load_camera_json(&PathBuf::from(&camera))?,
            };
            let output = model.render(&cam, &RasterOptions::default())?;
            write_png(&out, &output.image, cam.width, cam.height)?;
            if let Some(t_path) = transmittance {
                write_png_gray(&t_path, &output.target.transmittance, cam.width, cam.height)?;
            }
            if let Some(raw_path) = raw {
                write_raw_f32(&raw_path, &output.image, cam.width, cam.height)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
        } => {
            let (model, iteration) = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset(&data, None, 0.2)?;
            let indices = match split.as_str() {
                "test" => dataset.test_indices(),
                "train" => dataset.train_indices(),
                "all" => (0..dataset.cameras.len()).collect(),
                other => {
                    return Err(Error::invalid(format!(
                        "unknown split '{other}' (test|train|all)"
                    )))
                }
            };
            if indices.is_empty() {
                return Err(Error::invalid(format!("split '{split}' holds no views")));
            }
            let rows = evaluate(
                &model,
                &dataset,
                &indices,
                &RasterOptions::default(),
                &SsimConfig::default(),
            )?;
            println!("checkpoint at iteration {iteration}");
            println!("{:<24} {:>10} {:>8}", "view", "psnr", "ssim");
            let mut psnr_sum = 0.0;
            let mut ssim_sum = 0.0;
            for (name, p, s) in &rows {
                println!("{name:<24} {p:>10.3} {s:>8.4}");
                psnr_sum += p;
                ssim_sum += s;
            }
            let n = rows.len() as f64;
            println!(
                "{:<24} {:>10.3} {:>8.4}",
                "mean",
                psnr_sum / n,
                ssim_sum / n
            );
        }
        Command::Compress {
            checkpoint,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let (model, iteration) = load_checkpoint(&checkpoint)?;
            let bundle = compress_model(&model, iteration, &cfg.codec)?;
            let raw_len = std::fs::metadata(&checkpoint)?.len();
            std::fs::write(&out, &bundle)?;
            println!(
                "compressed {} -> {} ({} -> {} bytes, {:.1}%)",
                checkpoint.display(),
                out.display(),
                raw_len,
                bundle.len(),
                100.0 * bundle.len() as f64 / raw_len as f64
            );
        }
        Command::Decompress { bundle, out } => {
            let data = std::fs::read(&bundle)
                .map_err(|e| Error::invalid(format!("cannot read {}: {e}", bundle.display())))?;
            let (model, iteration) = decompress_model(&data)?;
            save_checkpoint(&model, iteration, &out)?;
            println!("decompressed {} -> {}", bundle.display(), out.display());
        }
        Command::Synth {
            seed,
            n,
            cameras,
            size,
            out,
        } => {
            let spec = SynthSpec {
                seed,
                n_gaussians: n,
                n_cameras: cameras,
                width: size,
                height: size,
                ..Default::default()
            };
            let (dataset, model) = write_synth_scene(&spec, &out)?;
            println!(
                "wrote {} views of {} gaussians to {} (gt checkpoint: gt_model.ckpt)",
                dataset.cameras.len(),
                model.gaussians.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
