//! Synthetic scenes: a known ground-truth model plus orbiting cameras, with
//! ground-truth images rendered by the pipeline itself. Training against
//! these is a closed-loop recovery problem with a known answer.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::HashGridConfig;
use crate::gaussians::GaussianSet;
use crate::io::dataset::{Dataset, Split};
use crate::math::{logit, Aabb};
use crate::model::{Model, SceneParams};
use crate::render::RasterOptions;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_gaussians: usize,
    pub n_cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Orbit radius of the cameras around the origin.
    pub orbit_radius: f64,
    /// Gaussian positions are drawn inside this ball.
    pub scene_radius: f64,
    pub hash: HashGridConfig,
    pub hidden: Vec<usize>,
    /// Direction-encoding bands. Kept low by default: sparse orbit datasets
    /// cannot pin down high-frequency view dependence.
    pub pe_frequencies: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_gaussians: 64,
            n_cameras: 8,
            width: 64,
            height: 64,
            orbit_radius: 4.0,
            scene_radius: 1.2,
            hash: HashGridConfig {
                n_levels: 4,
                features_per_entry: 2,
                log2_max_entries: 12,
                base_resolution: 4,
                growth_factor: 2.0,
            },
            hidden: vec![32, 32],
            pe_frequencies: 2,
        }
    }
}

/// Cameras orbiting the origin with the world +z axis as up. Azimuths come in
/// elevation pairs so a held-out view always has a nearby trained neighbor at
/// the same azimuth; the fov is wide enough that adjacent views overlap on
/// the background sphere.
fn orbit_cameras(spec: &SynthSpec, near: f64) -> Vec<Camera> {
    let mut cams = Vec::with_capacity(spec.n_cameras);
    let n_azimuths = spec.n_cameras.div_ceil(2).max(1);
    for i in 0..spec.n_cameras {
        let az = 2.0 * std::f64::consts::PI * (i / 2) as f64 / n_azimuths as f64;
        let el: f64 = if i % 2 == 0 { 0.12 } else { -0.12 };
        let eye = Vector3::new(
            spec.orbit_radius * az.cos() * el.cos(),
            spec.orbit_radius * az.sin() * el.cos(),
            spec.orbit_radius * el.sin(),
        );
        let z_cam = (-eye).normalize(); // look at origin
        let up = Vector3::new(0.0, 0.0, 1.0);
        let x_cam = z_cam.cross(&up).normalize();
        let y_cam = z_cam.cross(&x_cam).normalize();
        let rotation =
            Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), z_cam.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.6 * spec.width as f64; // ~80 degree horizontal fov
        cams.push(Camera {
            rotation,
            translation,
            fx: f,
            fy: f,
            cx: spec.width as f64 / 2.0,
            cy: spec.height as f64 / 2.0,
            width: spec.width,
            height: spec.height,
            near,
        });
    }
    cams
}

fn f32_clean(v: f64) -> f64 {
    v as f32 as f64
}

/// Builds the ground-truth model and dataset. The returned images are the
/// unquantized float renders; [`write_synth_scene`] additionally quantizes
/// through PNG for the on-disk variant.
pub fn synth_scene(spec: &SynthSpec) -> Result<(Dataset, Model)> {
    if spec.n_gaussians == 0 {
        return Err(Error::invalid(
            "synthetic scene needs at least one Gaussian",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cameras = orbit_cameras(spec, 0.2);
    let positions: Vec<Vector3<f64>> = cameras.iter().map(|c| c.position()).collect();
    let aabb = Aabb::from_points(&positions, 0.05)?;
    let mut scene = SceneParams::with_aabb(aabb);
    scene.pe_frequencies = spec.pe_frequencies;

    // Palette colors away from 0/1 keep the recovery well conditioned; the
    // first entry is near-white so single-Gaussian scenes outshine the
    // background.
    let palette = [
        Vector3::new(0.95, 0.95, 0.95),
        Vector3::new(0.85, 0.2, 0.2),
        Vector3::new(0.2, 0.8, 0.25),
        Vector3::new(0.2, 0.3, 0.85),
        Vector3::new(0.9, 0.8, 0.2),
        Vector3::new(0.8, 0.3, 0.8),
        Vector3::new(0.3, 0.8, 0.8),
        Vector3::new(0.9, 0.55, 0.2),
    ];

    let mut gt_positions = Vec::with_capacity(spec.n_gaussians);
    let mut gt_colors = Vec::with_capacity(spec.n_gaussians);
    let mut scales_raw = Vec::with_capacity(spec.n_gaussians);
    let mut opacities_raw = Vec::with_capacity(spec.n_gaussians);
    for i in 0..spec.n_gaussians {
        // Rejection-sample inside the ball.
        let p = loop {
            let p = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * spec.scene_radius;
            if p.norm() <= spec.scene_radius {
                break p;
            }
        };
        gt_positions.push(p.map(f32_clean));
        gt_colors.push(palette[i % palette.len()]);
        let activated_scale = rng.gen_range(0.4..0.85) * scene.s_max;
        scales_raw.push(f32_clean(logit(activated_scale / scene.s_max)));
        opacities_raw.push(f32_clean(logit(rng.gen_range(0.75..0.95))));
    }

    let mut set = GaussianSet::from_points(&gt_positions, &gt_colors, 0.5, scene.s_max)?;
    set.scales_raw = scales_raw;
    set.opacities_raw = opacities_raw;
    set.colors_raw = set.colors_raw.iter().map(|c| c.map(f32_clean)).collect();

    let mut model = Model::new(set, scene, spec.hash, &spec.hidden, &mut rng)?;
    // Mild spatial variation in the fields, f32-exact for checkpointing. The
    // amplitude is kept small so sphere regions no training camera covers
    // stay near the same neutral background a freshly initialized model
    // produces; held-out views then probe the learned content, not noise.
    for field in [&mut model.geo_field, &mut model.rad_field] {
        for table in &mut field.tables {
            for v in table.iter_mut() {
                *v = f32_clean(rng.gen_range(-0.01..0.01));
            }
        }
    }
    for net in [&mut model.geo_net, &mut model.color_net] {
        for w in &mut net.weights {
            w.iter_mut().for_each(|v| *v = f32_clean(*v));
        }
        for b in &mut net.biases {
            b.iter_mut().for_each(|v| *v = f32_clean(*v));
        }
    }
    model.scene.s_max = f32_clean(model.scene.s_max);

    let mut images = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let out = model.render(cam, &RasterOptions::default())?;
        images.push(out.image);
    }

    // Initial points: the ground-truth positions with a little noise, plus
    // the activated diffuse colors, imitating a sparse SfM cloud. The noise
    // stays below a typical Gaussian footprint.
    let noise = 0.3 * scene.s_max.max(1e-6);
    let initial_points: Vec<Vector3<f64>> = gt_positions
        .iter()
        .map(|p| {
            Vector3::new(
                p.x + rng.gen_range(-noise..noise),
                p.y + rng.gen_range(-noise..noise),
                p.z + rng.gen_range(-noise..noise),
            )
        })
        .collect();

    let n = cameras.len();
    let names = (0..n).map(|i| format!("synth_{i:03}")).collect();
    let splits = (0..n)
        .map(|i| {
            if i % crate::io::dataset::TEST_HOLDOUT == 0 {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect();
    Ok((
        Dataset {
            cameras,
            images,
            splits,
            names,
            initial_points,
            initial_colors: gt_colors,
        },
        model,
    ))
}

/// Writes the scene to disk in the transforms-json layout, with the images
/// quantized to 8-bit PNG, the initial points as PLY, and the ground-truth
/// model as a checkpoint. The returned dataset mirrors the on-disk
/// (quantized) images.
pub fn write_synth_scene(spec: &SynthSpec, dir: &std::path::Path) -> Result<(Dataset, Model)> {
    use crate::io::image::{quantize_image, write_png};
    let (mut dataset, model) = synth_scene(spec)?;
    std::fs::create_dir_all(dir)?;

    let mut frames = Vec::new();
    for (i, cam) in dataset.cameras.iter().enumerate() {
        let name = &dataset.names[i];
        dataset.images[i] = quantize_image(&dataset.images[i]);
        write_png(
            &dir.join(format!("{name}.png")),
            &dataset.images[i],
            cam.width,
            cam.height,
        )?;
        // Back to the OpenGL camera-to-world convention of transforms.json.
        let mut c2w_rot = cam.rotation.transpose();
        let pos = cam.position();
        // Flip the y and z columns (inverse of the load-time flip).
        for r in 0..3 {
            c2w_rot[(r, 1)] = -c2w_rot[(r, 1)];
            c2w_rot[(r, 2)] = -c2w_rot[(r, 2)];
        }
        let mut matrix = [[0.0f64; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                matrix[r][c] = c2w_rot[(r, c)];
            }
            matrix[r][3] = pos[r];
        }
        matrix[3][3] = 1.0;
        frames.push(serde_json::json!({
            "file_path": format!("./{name}"),
            "transform_matrix": matrix,
        }));
    }
    let fov_x = 2.0 * (0.5 * dataset.cameras[0].width as f64 / dataset.cameras[0].fx).atan();
    let doc = serde_json::json!({
        "camera_angle_x": fov_x,
        "frames": frames,
    });
    std::fs::write(
        dir.join("transforms.json"),
        serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::invalid(format!("transforms encode: {e}")))?,
    )?;

    crate::io::ply::write_ply(
        &dir.join("points3d.ply"),
        &crate::io::ply::PointCloud {
            positions: dataset.initial_points.clone(),
            colors: dataset.initial_colors.clone(),
        },
    )?;
    crate::io::checkpoint::save_checkpoint(&model, 0, &dir.join("gt_model.ckpt"))?;
    Ok((dataset, model))
}
