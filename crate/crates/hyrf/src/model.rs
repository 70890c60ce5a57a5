//! The full scene model: explicit Gaussian set, the two hash fields, the two
//! decoders, and the shared scene parameters. Owns the forward rendering
//! pipeline (cull, encode, decode, aggregate, splat, composite).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::camera::Camera;
use crate::decoder::{decode_color, decode_geometry, Mlp, MlpCache, RawColor, RawGeometry};
use crate::error::{Error, Result};
use crate::field::{direction_encoding_len, encode_direction, HashGrid, HashGridConfig};
use crate::gaussians::{aggregate, ActivatedGaussian, GaussianSet};
use crate::math::{contract, covariance_3d, normalize_to_aabb, project_gaussian, Aabb};
use crate::render::{
    composite_background, composite_background_cached, precull, rasterize, BackgroundCache,
    CullResult, ProjectedSplat, RasterOptions, RasterStats, RenderTarget,
};

/// Scene-level constants shared by rendering and training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub aabb: Aabb,
    /// World-unit cap on the activated Gaussian scale.
    pub s_max: f64,
    /// Background sphere radius, world units.
    pub bg_radius: f64,
    /// Transmittance threshold: background is queried where T exceeds it.
    pub tau_transmittance: f64,
    /// Pre-cull tolerance band in NDC units.
    pub cull_tolerance: f64,
    /// Frequency bands of the view-direction encoding.
    pub pe_frequencies: usize,
}

impl SceneParams {
    pub fn with_aabb(aabb: Aabb) -> Self {
        Self {
            aabb,
            s_max: 0.01 * aabb.diagonal(),
            bg_radius: 100.0,
            tau_transmittance: 0.2,
            cull_tolerance: 0.15,
            pe_frequencies: 4,
        }
    }

    pub fn background(&self) -> crate::render::BackgroundParams {
        crate::render::BackgroundParams {
            aabb: self.aabb,
            sphere_radius: self.bg_radius,
            tau_transmittance: self.tau_transmittance,
            pe_frequencies: self.pe_frequencies,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub gaussians: GaussianSet,
    pub geo_field: HashGrid,
    pub rad_field: HashGrid,
    pub geo_net: Mlp,
    pub color_net: Mlp,
    pub scene: SceneParams,
}

/// Decoder widths: two hidden layers of 64.
pub const DECODER_HIDDEN: [usize; 2] = [64, 64];

impl Model {
    /// Builds a model with fresh fields and decoders around an initialized
    /// Gaussian set. The geometry field gets half the radiance hash budget.
    pub fn new(
        gaussians: GaussianSet,
        scene: SceneParams,
        rad_config: HashGridConfig,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let geo_config = HashGridConfig {
            log2_max_entries: rad_config.log2_max_entries.saturating_sub(1),
            ..rad_config
        };
        let rad_field = HashGrid::new(rad_config, rng)?;
        let geo_field = HashGrid::new(geo_config, rng)?;
        let mut geo_dims = vec![geo_field.output_dim()];
        geo_dims.extend_from_slice(hidden);
        geo_dims.push(RawGeometry::DIM);
        let mut geo_net = Mlp::new(&geo_dims, rng)?;
        // Bias the raw rotation toward identity so early rotations are stable
        // instead of amplified normalization noise.
        let out_bias = geo_net.biases.last_mut().unwrap();
        out_bias[4] = 1.0;
        let mut color_dims =
            vec![rad_field.output_dim() + direction_encoding_len(scene.pe_frequencies)];
        color_dims.extend_from_slice(hidden);
        color_dims.push(3);
        let color_net = Mlp::new(&color_dims, rng)?;
        Ok(Self {
            gaussians,
            geo_field,
            rad_field,
            geo_net,
            color_net,
            scene,
        })
    }

    pub fn zero_grad(&mut self) {
        self.gaussians.zero_grad();
        self.geo_field.zero_grad();
        self.rad_field.zero_grad();
        self.geo_net.zero_grad();
        self.color_net.zero_grad();
    }

    /// Contracted field coordinate of a world position.
    pub fn contract_position(&self, p: &Vector3<f64>) -> Vector3<f64> {
        contract(&normalize_to_aabb(p, &self.scene.aabb))
    }

    /// Queries the geometry path for every Gaussian (no camera involved) and
    /// returns the activated opacity and world-space scale. Density control
    /// decisions are made from these.
    pub fn activated_geometry(&self) -> Result<Vec<(f64, Vector3<f64>)>> {
        let mut out = Vec::with_capacity(self.gaussians.len());
        for i in 0..self.gaussians.len() {
            let p_con = self.contract_position(&self.gaussians.positions[i]);
            let f_geo = self.geo_field.encode(&p_con)?;
            let (raw_geo, _) = decode_geometry(&f_geo, &self.geo_net)?;
            let a = aggregate(
                &raw_geo,
                &[0.0; 3],
                self.gaussians.positions[i],
                &Vector3::zeros(),
                self.gaussians.scales_raw[i],
                self.gaussians.opacities_raw[i],
                self.scene.s_max,
            );
            out.push((a.opacity, a.scale));
        }
        Ok(out)
    }

    fn forward_gaussian(
        &self,
        i: usize,
        cam: &Camera,
        cam_pos: &Vector3<f64>,
    ) -> Result<GaussianForward> {
        let position = self.gaussians.positions[i];
        let p_norm = normalize_to_aabb(&position, &self.scene.aabb);
        let p_con = contract(&p_norm);
        let f_geo = self.geo_field.encode(&p_con)?;
        let f_rad = self.rad_field.encode(&p_con)?;
        let f_dir = encode_direction(&position, cam_pos, self.scene.pe_frequencies)?;
        let (raw_geo, geo_cache) = decode_geometry(&f_geo, &self.geo_net)?;
        let (raw_color, color_cache) = decode_color(&f_rad, &f_dir, &self.color_net)?;
        let activated = aggregate(
            &raw_geo,
            &raw_color,
            position,
            &self.gaussians.colors_raw[i],
            self.gaussians.scales_raw[i],
            self.gaussians.opacities_raw[i],
            self.scene.s_max,
        );
        let cov3d = covariance_3d(&activated.scale, &activated.rotation)?;
        let projected = project_gaussian(&position, &cov3d, cam);
        Ok(GaussianForward {
            set_index: i,
            p_norm,
            p_con,
            raw_geo,
            raw_color,
            geo_cache,
            color_cache,
            activated,
            cov3d,
            projected,
        })
    }

    /// Full hybrid render. Use [`Model::render_cached`] when gradients are
    /// needed afterwards.
    pub fn render(&self, cam: &Camera, opts: &RasterOptions) -> Result<RenderOutput> {
        cam.validate()?;
        let cull = precull(&self.gaussians.positions, cam, self.scene.cull_tolerance);
        let cam_pos = cam.position();
        let mut splats = Vec::with_capacity(cull.kept_indices.len());
        let mut rotation_fallbacks = 0usize;
        for &i in &cull.kept_indices {
            let fwd = self.forward_gaussian(i, cam, &cam_pos)?;
            if fwd.activated.rotation_fallback {
                rotation_fallbacks += 1;
            }
            if let Some(p) = fwd.projected {
                splats.push(ProjectedSplat {
                    index: i,
                    mean2d: p.mean2d,
                    cov2d: p.cov2d,
                    depth: p.depth,
                    color: fwd.activated.color,
                    alpha: fwd.activated.opacity,
                });
            }
        }
        let (target, raster_stats) = rasterize(&splats, cam.width, cam.height, opts);
        let image = composite_background(
            &target,
            cam,
            &self.rad_field,
            &self.color_net,
            &self.scene.background(),
        )?;
        Ok(RenderOutput {
            image,
            target,
            raster_stats,
            rotation_fallbacks,
            n_culled: self.gaussians.len() - cull.kept_indices.len(),
        })
    }

    /// Forward pass that additionally retains everything the training
    /// backward pass consumes.
    pub fn render_cached(&self, cam: &Camera, opts: &RasterOptions) -> Result<ForwardCache> {
        cam.validate()?;
        let cull = precull(&self.gaussians.positions, cam, self.scene.cull_tolerance);
        let cam_pos = cam.position();
        let mut gaussians = Vec::with_capacity(cull.kept_indices.len());
        let mut splats = Vec::with_capacity(cull.kept_indices.len());
        for &i in &cull.kept_indices {
            let fwd = self.forward_gaussian(i, cam, &cam_pos)?;
            if let Some(p) = fwd.projected {
                // splat.index refers into the forward list, not the set.
                splats.push(ProjectedSplat {
                    index: gaussians.len(),
                    mean2d: p.mean2d,
                    cov2d: p.cov2d,
                    depth: p.depth,
                    color: fwd.activated.color,
                    alpha: fwd.activated.opacity,
                });
            }
            gaussians.push(fwd);
        }
        let (target, raster_stats) = rasterize(&splats, cam.width, cam.height, opts);
        let (image, background) = composite_background_cached(
            &target,
            cam,
            &self.rad_field,
            &self.color_net,
            &self.scene.background(),
        )?;
        Ok(ForwardCache {
            cull,
            gaussians,
            splats,
            target,
            background,
            image,
            raster_stats,
        })
    }
}

/// Cached per-Gaussian forward state.
pub struct GaussianForward {
    pub set_index: usize,
    pub p_norm: Vector3<f64>,
    pub p_con: Vector3<f64>,
    pub raw_geo: RawGeometry,
    pub raw_color: RawColor,
    pub geo_cache: MlpCache,
    pub color_cache: MlpCache,
    pub activated: ActivatedGaussian,
    pub cov3d: Matrix3<f64>,
    pub projected: Option<crate::math::Projected>,
}

pub struct ForwardCache {
    pub cull: CullResult,
    pub gaussians: Vec<GaussianForward>,
    /// `splats[k].index` indexes into `gaussians`.
    pub splats: Vec<ProjectedSplat>,
    pub target: RenderTarget,
    pub background: BackgroundCache,
    pub image: Vec<f64>,
    pub raster_stats: RasterStats,
}

pub struct RenderOutput {
    pub image: Vec<f64>,
    pub target: RenderTarget,
    pub raster_stats: RasterStats,
    pub rotation_fallbacks: usize,
    pub n_culled: usize,
}

/// Convenience constructor for a small random model, used by tests and the
/// synthetic-scene generator.
pub fn small_model_for_tests(
    n_points: usize,
    seed: u64,
    scene: SceneParams,
    rad_config: HashGridConfig,
    hidden: &[usize],
) -> Result<Model> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let half = scene.aabb.half_extent() * 0.4;
    let c = scene.aabb.center();
    let points: Vec<Vector3<f64>> = (0..n_points)
        .map(|_| {
            Vector3::new(
                c.x + rng.gen_range(-half.x..half.x),
                c.y + rng.gen_range(-half.y..half.y),
                c.z + rng.gen_range(-half.z..half.z),
            )
        })
        .collect();
    let colors: Vec<Vector3<f64>> = (0..n_points)
        .map(|_| {
            Vector3::new(
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            )
        })
        .collect();
    let set = GaussianSet::from_points(&points, &colors, 0.5, scene.s_max)?;
    Model::new(set, scene, rad_config, hidden, &mut rng)
}

impl Model {
    pub fn validate_shapes(&self) -> Result<()> {
        if self.geo_net.input_dim() != self.geo_field.output_dim() {
            return Err(Error::invalid("geometry decoder/input width mismatch"));
        }
        let want = self.rad_field.output_dim() + direction_encoding_len(self.scene.pe_frequencies);
        if self.color_net.input_dim() != want {
            return Err(Error::invalid("color decoder/input width mismatch"));
        }
        if self.geo_net.output_dim() != RawGeometry::DIM || self.color_net.output_dim() != 3 {
            return Err(Error::invalid("decoder output widths are wrong"));
        }
        Ok(())
    }
}
