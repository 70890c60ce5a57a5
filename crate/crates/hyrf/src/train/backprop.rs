//! End-to-end reverse pass: from an image-space loss gradient back to hash
//! tables, decoder parameters, explicit Gaussian attributes and positions,
//! including the background path.

use nalgebra::{Vector2, Vector3};

use crate::camera::Camera;
use crate::error::Result;
use crate::field::encode_direction_backward;
use crate::gaussians::aggregate_backward;
use crate::math::{
    contract_backward, covariance_3d_backward, normalize_to_aabb_backward,
    project_gaussian_backward, sigmoid_grad, Quaternion,
};
use crate::model::{ForwardCache, Model};
use crate::render::{rasterize_backward, RasterOptions};

/// Consumes dL/d(final image) and accumulates gradients into the model's
/// buffers (Gaussian set, both fields, both decoders). Also records the
/// screen-space position-gradient statistics used by densification.
pub fn backward(
    model: &mut Model,
    cam: &Camera,
    cache: &ForwardCache,
    opts: &RasterOptions,
    d_image: &[f64],
) -> Result<()> {
    let (w, h) = (cam.width, cam.height);
    assert_eq!(d_image.len(), w * h * 3);

    // Background path: image = fg + T * c_s on queried pixels, so the color
    // gradient reaches c_s directly and T picks up dot(dC, c_s).
    let mut d_transmittance = vec![0.0; w * h];
    for q in &cache.background.queries {
        let pi = q.pixel;
        let t = cache.target.transmittance[pi];
        let d_c = Vector3::new(d_image[pi * 3], d_image[pi * 3 + 1], d_image[pi * 3 + 2]);
        d_transmittance[pi] += d_c.dot(&q.c_s);
        let d_c_n = [
            d_c.x * t * sigmoid_grad(q.c_s.x),
            d_c.y * t * sigmoid_grad(q.c_s.y),
            d_c.z * t * sigmoid_grad(q.c_s.z),
        ];
        let d_input = model.color_net.backward(&q.mlp_cache, &d_c_n)?;
        // Only the radiance-feature block is trainable; the sphere hit point
        // and with it the direction encoding are fixed by the camera.
        model
            .rad_field
            .encode_backward(&q.p_contracted, &d_input[..cache.background.rad_dim])?;
    }

    // Foreground: blend gradients per splat, then the per-Gaussian chain.
    let splat_grads = rasterize_backward(&cache.splats, w, h, opts, d_image, &d_transmittance);

    let rad_dim = model.rad_field.output_dim();
    let cam_pos = cam.position();
    for (splat, sg) in cache.splats.iter().zip(&splat_grads) {
        let fwd = &cache.gaussians[splat.index];
        let set_index = fwd.set_index;

        // Densification statistic: gradient magnitude of the NDC-space mean.
        let ndc_grad = Vector2::new(
            sg.d_mean2d.x * w as f64 / 2.0,
            sg.d_mean2d.y * h as f64 / 2.0,
        )
        .norm();
        model.gaussians.record_densify_stat(set_index, ndc_grad);

        let zero = sg.d_alpha == 0.0
            && sg.d_color == Vector3::zeros()
            && sg.d_mean2d == Vector2::zeros()
            && sg.d_cov2d.iter().all(|v| *v == 0.0);
        if zero {
            continue;
        }

        // Projection chain: (mean2d, cov2d) -> (world position, 3D covariance).
        let (d_pos_proj, d_cov3d) = project_gaussian_backward(
            &fwd.activated.position,
            &fwd.cov3d,
            cam,
            &sg.d_mean2d,
            &sg.d_cov2d,
        );
        let (d_scale_world, d_q_unit) =
            covariance_3d_backward(&fwd.activated.scale, &fwd.activated.rotation, &d_cov3d);

        // Activation chain back to the raw decoder outputs and residuals.
        let agg = aggregate_backward(
            &fwd.activated,
            &fwd.raw_geo,
            model.scene.s_max,
            sg.d_alpha,
            &sg.d_color,
            &d_scale_world,
            &Quaternion::new(d_q_unit.w, d_q_unit.x, d_q_unit.y, d_q_unit.z),
        );

        let d_f_geo = model
            .geo_net
            .backward(&fwd.geo_cache, &agg.d_raw_geo.to_output())?;
        let d_color_in = model
            .color_net
            .backward(&fwd.color_cache, &agg.d_raw_color)?;

        let d_p_con_geo = model.geo_field.encode_backward(&fwd.p_con, &d_f_geo)?;
        let d_p_con_rad = model
            .rad_field
            .encode_backward(&fwd.p_con, &d_color_in[..rad_dim])?;

        // Position gradient: projection + both field queries + direction PE.
        let d_p_norm = contract_backward(&fwd.p_norm, &(d_p_con_geo + d_p_con_rad));
        let d_pos_fields = normalize_to_aabb_backward(&d_p_norm, &model.scene.aabb);
        let d_pos_dir = encode_direction_backward(
            &fwd.activated.position,
            &cam_pos,
            model.scene.pe_frequencies,
            &d_color_in[rad_dim..],
        )?;

        let g = &mut model.gaussians;
        g.position_grads[set_index] += d_pos_proj + d_pos_fields + d_pos_dir;
        g.color_grads[set_index] += agg.d_color_e;
        g.scale_grads[set_index] += agg.d_scale_e;
        g.opacity_grads[set_index] += agg.d_opacity_e;
    }
    Ok(())
}
