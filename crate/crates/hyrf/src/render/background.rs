//! Background-sphere compositing: pixels the foreground left transparent get
//! a radiance-field color from a large sphere around the scene, weighted by
//! the residual transmittance.

use nalgebra::Vector3;

use super::RenderTarget;
use crate::camera::Camera;
use crate::decoder::{decode_color, Mlp, MlpCache};
use crate::error::Result;
use crate::field::encode_direction;
use crate::field::HashGrid;
use crate::math::{contract, normalize_to_aabb, ray_sphere_intersect, sigmoid, Aabb};

/// Everything the training pass needs to push gradients back through one
/// background query.
pub struct BackgroundQuery {
    pub pixel: usize,
    /// Contracted sphere-hit position (fixed, but needed to address tables).
    pub p_contracted: Vector3<f64>,
    /// Activated background color.
    pub c_s: Vector3<f64>,
    pub mlp_cache: MlpCache,
}

pub struct BackgroundCache {
    pub queries: Vec<BackgroundQuery>,
    pub rad_dim: usize,
}

/// Shared parameters of the background path.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundParams {
    pub aabb: Aabb,
    pub sphere_radius: f64,
    /// Pixels with transmittance at or below this skip the background query.
    pub tau_transmittance: f64,
    pub pe_frequencies: usize,
}

fn query_pixel(
    px: usize,
    py: usize,
    cam: &Camera,
    rad_field: &HashGrid,
    color_net: &Mlp,
    params: &BackgroundParams,
) -> Result<(Vector3<f64>, Vector3<f64>, MlpCache)> {
    let ray = cam.pixel_ray(px, py);
    let (_, hit) = ray_sphere_intersect(&ray, params.sphere_radius)?;
    let p_con = contract(&normalize_to_aabb(&hit, &params.aabb));
    let f_rad = rad_field.encode(&p_con)?;
    // The ray direction already is the normalized camera-to-hit direction.
    let f_dir = encode_direction(&hit, &cam.position(), params.pe_frequencies)?;
    let (c_n, cache) = decode_color(&f_rad, &f_dir, color_net)?;
    let c_s = Vector3::new(sigmoid(c_n[0]), sigmoid(c_n[1]), sigmoid(c_n[2]));
    Ok((p_con, c_s, cache))
}

/// Adds `T * c_s` to every pixel whose transmittance exceeds the threshold
/// and returns the final image; pixels at or below it keep the foreground
/// color unchanged.
pub fn composite_background(
    target: &RenderTarget,
    cam: &Camera,
    rad_field: &HashGrid,
    color_net: &Mlp,
    params: &BackgroundParams,
) -> Result<Vec<f64>> {
    let mut image = target.color.clone();
    for py in 0..target.height {
        for px in 0..target.width {
            let pi = py * target.width + px;
            let t = target.transmittance[pi];
            if t <= params.tau_transmittance {
                continue;
            }
            let (_, c_s, _) = query_pixel(px, py, cam, rad_field, color_net, params)?;
            image[pi * 3] += t * c_s.x;
            image[pi * 3 + 1] += t * c_s.y;
            image[pi * 3 + 2] += t * c_s.z;
        }
    }
    Ok(image)
}

/// Training variant: same output plus the per-query caches for the backward
/// pass.
pub fn composite_background_cached(
    target: &RenderTarget,
    cam: &Camera,
    rad_field: &HashGrid,
    color_net: &Mlp,
    params: &BackgroundParams,
) -> Result<(Vec<f64>, BackgroundCache)> {
    let mut image = target.color.clone();
    let mut queries = Vec::new();
    for py in 0..target.height {
        for px in 0..target.width {
            let pi = py * target.width + px;
            let t = target.transmittance[pi];
            if t <= params.tau_transmittance {
                continue;
            }
            let (p_contracted, c_s, mlp_cache) =
                query_pixel(px, py, cam, rad_field, color_net, params)?;
            image[pi * 3] += t * c_s.x;
            image[pi * 3 + 1] += t * c_s.y;
            image[pi * 3 + 2] += t * c_s.z;
            queries.push(BackgroundQuery {
                pixel: pi,
                p_contracted,
                c_s,
                mlp_cache,
            });
        }
    }
    Ok((
        image,
        BackgroundCache {
            queries,
            rad_dim: rad_field.output_dim(),
        },
    ))
}
