//! Coordinate normalization, scene contraction, quaternion/covariance algebra,
//! perspective projection of Gaussians and ray-sphere intersection.
//!
//! Everything here is a pure function; the `*_backward` companions propagate
//! reverse-mode gradients and are finite-difference checked in the tests.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};

/// Diagonal low-pass term added to every projected 2D covariance, in px^2.
/// Keeps footprints at least ~0.55 px wide so no splat falls between pixels.
pub const LOW_PASS_FILTER: f64 = 0.3;

/// Logistic function, clamped to the open interval (0, 1): for |x| beyond
/// ~37 the f64 result would round to exactly 0 or 1, which downstream code
/// (logit, strict range invariants) cannot accept.
pub fn sigmoid(x: f64) -> f64 {
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    v.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// Largest f64 strictly below 1.0.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// d sigmoid(x) / dx expressed through the activated value.
pub fn sigmoid_grad(activated: f64) -> f64 {
    activated * (1.0 - activated)
}

/// Inverse sigmoid. Requires 0 < p < 1.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Axis-aligned bounding box used to normalize scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    /// Rejects boxes with a non-finite or non-positive extent on any axis;
    /// a degenerate axis would make the normalization divide by zero.
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        for k in 0..3 {
            if !min[k].is_finite() || !max[k].is_finite() {
                return Err(Error::invalid("aabb corner is not finite"));
            }
            if min[k] >= max[k] {
                return Err(Error::invalid(format!(
                    "aabb degenerate on axis {k}: min {} >= max {}",
                    min[k], max[k]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Smallest box containing all `points`, expanded symmetrically by
    /// `pad_fraction`. Near-degenerate axes (planar camera rigs) are padded
    /// relative to the largest extent so normalization never divides by a
    /// vanishing half-extent.
    pub fn from_points(points: &[Vector3<f64>], pad_fraction: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("aabb from empty point set"));
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let max_extent = (0..3).map(|k| max[k] - min[k]).fold(0.0f64, f64::max);
        for k in 0..3 {
            let extent = max[k] - min[k];
            let pad = (extent.max(max_extent) * pad_fraction.max(0.01)).max(if max_extent > 0.0 {
                0.0
            } else {
                1.0
            });
            min[k] -= pad;
            max[k] += pad;
        }
        Aabb::new(min, max)
    }

    /// Fixed symmetric box `[-half, half]^3` (synthetic-scene convention).
    pub fn symmetric(half: f64) -> Result<Self> {
        Aabb::new(
            Vector3::new(-half, -half, -half),
            Vector3::new(half, half, half),
        )
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn half_extent(&self) -> Vector3<f64> {
        (self.max - self.min) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Map `p` so the box center goes to the origin and the half-extent to unit
/// scale per axis; points inside the box land in [-1, 1]^3.
pub fn normalize_to_aabb(p: &Vector3<f64>, aabb: &Aabb) -> Vector3<f64> {
    let c = aabb.center();
    let h = aabb.half_extent();
    Vector3::new((p.x - c.x) / h.x, (p.y - c.y) / h.y, (p.z - c.z) / h.z)
}

/// Pulls a gradient w.r.t. the normalized point back to world coordinates.
pub fn normalize_to_aabb_backward(upstream: &Vector3<f64>, aabb: &Aabb) -> Vector3<f64> {
    let h = aabb.half_extent();
    Vector3::new(upstream.x / h.x, upstream.y / h.y, upstream.z / h.z)
}

/// Scene contraction: squeezes all of R^3 into the open cube (0, 1)^3.
///
/// Inside the unit ball the map is affine (0.25 p + 0.5); outside, the radius
/// is compressed to (2 - 1/|p|) so infinity lands on the cube boundary. The
/// two branches agree at |p| = 1 and the offset of 0.5 centers the output.
pub fn contract(p: &Vector3<f64>) -> Vector3<f64> {
    let n = p.norm();
    let v = if n <= 1.0 {
        p * 0.25
    } else {
        (p / n) * (0.25 * (2.0 - 1.0 / n))
    };
    // At astronomical norms the limit 0.25 * 2 * (+-1) + 0.5 rounds onto the
    // cube boundary; clamp back inside the open interval.
    Vector3::new(
        (v.x + 0.5).clamp(f64::MIN_POSITIVE, ONE_BELOW),
        (v.y + 0.5).clamp(f64::MIN_POSITIVE, ONE_BELOW),
        (v.z + 0.5).clamp(f64::MIN_POSITIVE, ONE_BELOW),
    )
}

/// Jacobian-transpose product for [`contract`].
pub fn contract_backward(p: &Vector3<f64>, upstream: &Vector3<f64>) -> Vector3<f64> {
    let n = p.norm();
    if n <= 1.0 {
        return upstream * 0.25;
    }
    // f(p) = 0.25 * g(n) * p with g(n) = 2/n - 1/n^2,
    // J = 0.25 * (g I + g' p p_hat^T), g'(n) = -2/n^2 + 2/n^3.
    let g = 2.0 / n - 1.0 / (n * n);
    let gp = -2.0 / (n * n) + 2.0 / (n * n * n);
    let p_hat = p / n;
    upstream * (0.25 * g) + p_hat * (0.25 * gp * p.dot(upstream))
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("ray direction has zero or non-finite norm"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Forward intersection of a ray with the origin-centered sphere of the given
/// radius. The origin must be inside the sphere, which guarantees one positive
/// root of the quadratic | o + t d |^2 = r^2.
pub fn ray_sphere_intersect(ray: &Ray, radius: f64) -> Result<(f64, Vector3<f64>)> {
    let a = ray.direction.dot(&ray.direction);
    let b = 2.0 * ray.origin.dot(&ray.direction);
    let c = ray.origin.dot(&ray.origin) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::invalid(format!(
            "ray misses sphere of radius {radius}; origin outside?"
        )));
    }
    let t = (-b + disc.sqrt()) / (2.0 * a);
    if t <= 0.0 {
        return Err(Error::invalid(
            "no forward sphere hit; background radius is smaller than the camera orbit",
        ));
    }
    Ok((t, ray.at(t)))
}

/// Rotation as a quaternion, stored (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Quaternion> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("cannot normalize zero quaternion"));
        }
        Ok(Quaternion::new(
            self.w / n,
            self.x / n,
            self.y / n,
            self.z / n,
        ))
    }
}

/// Unit quaternion to rotation matrix.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Matrix3<f64>> {
    if q.norm() < 1e-12 {
        return Err(Error::invalid("zero quaternion has no rotation"));
    }
    let Quaternion { w, x, y, z } = *q;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Accumulates dL/dq from dL/dR, for the unit-form matrix of
/// [`quat_to_rotation`] evaluated at `q`.
pub fn quat_to_rotation_backward(q: &Quaternion, d_rot: &Matrix3<f64>) -> Quaternion {
    let Quaternion { w, x, y, z } = *q;
    let g = |m: &Matrix3<f64>| {
        // Frobenius inner product against dL/dR.
        m.component_mul(d_rot).sum()
    };
    let dw = g(&Matrix3::new(
        0.0,
        -2.0 * z,
        2.0 * y, //
        2.0 * z,
        0.0,
        -2.0 * x, //
        -2.0 * y,
        2.0 * x,
        0.0,
    ));
    let dx = g(&Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z, //
        2.0 * y,
        -4.0 * x,
        -2.0 * w, //
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    ));
    let dy = g(&Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w, //
        2.0 * x,
        0.0,
        2.0 * z, //
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    ));
    let dz = g(&Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x, //
        2.0 * w,
        -4.0 * z,
        2.0 * y, //
        2.0 * x,
        2.0 * y,
        0.0,
    ));
    Quaternion::new(dw, dx, dy, dz)
}

/// Pulls dL/d(unit q) back through q = raw/|raw|.
pub fn quat_normalize_backward(raw: &Quaternion, d_unit: &Quaternion) -> Quaternion {
    let n = raw.norm();
    let u = [raw.w / n, raw.x / n, raw.y / n, raw.z / n];
    let d = [d_unit.w, d_unit.x, d_unit.y, d_unit.z];
    let dot: f64 = u.iter().zip(&d).map(|(a, b)| a * b).sum();
    Quaternion::new(
        (d[0] - u[0] * dot) / n,
        (d[1] - u[1] * dot) / n,
        (d[2] - u[2] * dot) / n,
        (d[3] - u[3] * dot) / n,
    )
}

/// 3D covariance of an anisotropic Gaussian: sigma = R diag(s^2) R^T.
pub fn covariance_3d(scale: &Vector3<f64>, q: &Quaternion) -> Result<Matrix3<f64>> {
    if scale.x <= 0.0 || scale.y <= 0.0 || scale.z <= 0.0 {
        return Err(Error::invalid(format!("non-positive scale {scale:?}")));
    }
    let r = quat_to_rotation(q)?;
    let d = Matrix3::from_diagonal(&Vector3::new(
        scale.x * scale.x,
        scale.y * scale.y,
        scale.z * scale.z,
    ));
    Ok(r * d * r.transpose())
}

/// Gradients of [`covariance_3d`] w.r.t. the scale vector and the (unit)
/// quaternion, given dL/dSigma as a full 3x3 matrix.
pub fn covariance_3d_backward(
    scale: &Vector3<f64>,
    q: &Quaternion,
    d_sigma: &Matrix3<f64>,
) -> (Vector3<f64>, Quaternion) {
    let r = quat_to_rotation(q).expect("validated in forward");
    // sigma = R D R^T: dL/dD = R^T G R (diagonal entries), dL/dR = (G + G^T) R D.
    let m = r.transpose() * d_sigma * r;
    let d_scale = Vector3::new(
        m[(0, 0)] * 2.0 * scale.x,
        m[(1, 1)] * 2.0 * scale.y,
        m[(2, 2)] * 2.0 * scale.z,
    );
    let d = Matrix3::from_diagonal(&Vector3::new(
        scale.x * scale.x,
        scale.y * scale.y,
        scale.z * scale.z,
    ));
    let d_rot = (d_sigma + d_sigma.transpose()) * r * d;
    (d_scale, quat_to_rotation_backward(q, &d_rot))
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    /// Pixel coordinates of the projected mean.
    pub mean2d: Vector2<f64>,
    /// 2D covariance in px^2, low-pass term included.
    pub cov2d: Matrix2<f64>,
    /// Camera-space depth, used as the blending sort key.
    pub depth: f64,
}

fn projection_jacobian(t: &Vector3<f64>, cam: &Camera) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z * inv_z,
    )
}

/// EWA-style first-order projection of a 3D Gaussian. Returns `None` when the
/// mean is at or behind the near plane (a cull, not an error).
pub fn project_gaussian(
    mean: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    cam: &Camera,
) -> Option<Projected> {
    let t = cam.to_camera_space(mean);
    if t.z <= cam.near {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    let j = projection_jacobian(&t, cam);
    let m = j * cam.rotation;
    let mut cov2d = m * cov3d * m.transpose();
    cov2d[(0, 0)] += LOW_PASS_FILTER;
    cov2d[(1, 1)] += LOW_PASS_FILTER;
    Some(Projected {
        mean2d,
        cov2d,
        depth: t.z,
    })
}

/// Gradients of [`project_gaussian`] w.r.t. the world-space mean and the 3D
/// covariance, given upstream gradients for the projected mean and covariance.
pub fn project_gaussian_backward(
    mean: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    cam: &Camera,
    d_mean2d: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = cam.to_camera_space(mean);
    let j = projection_jacobian(&t, cam);
    let m = j * cam.rotation;

    // cov2d = M cov3d M^T (+ const): dL/dcov3d = M^T G M,
    // dL/dM = (G + G^T) M cov3d, dL/dJ = dL/dM W^T.
    let d_cov3d = m.transpose() * d_cov2d * m;
    let d_m = (d_cov2d + d_cov2d.transpose()) * m * cov3d;
    let d_j = d_m * cam.rotation.transpose();

    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let mut d_t = Vector3::zeros();

    // mean2d = (fx tx/tz + cx, fy ty/tz + cy).
    d_t.x += d_mean2d.x * cam.fx * inv_z;
    d_t.y += d_mean2d.y * cam.fy * inv_z;
    d_t.z += -d_mean2d.x * cam.fx * t.x * inv_z2 - d_mean2d.y * cam.fy * t.y * inv_z2;

    // Nonconstant Jacobian entries: J00 = fx/tz, J02 = -fx tx/tz^2,
    // J11 = fy/tz, J12 = -fy ty/tz^2.
    d_t.z += d_j[(0, 0)] * (-cam.fx * inv_z2);
    d_t.x += d_j[(0, 2)] * (-cam.fx * inv_z2);
    d_t.z += d_j[(0, 2)] * (2.0 * cam.fx * t.x * inv_z2 * inv_z);
    d_t.z += d_j[(1, 1)] * (-cam.fy * inv_z2);
    d_t.y += d_j[(1, 2)] * (-cam.fy * inv_z2);
    d_t.z += d_j[(1, 2)] * (2.0 * cam.fy * t.y * inv_z2 * inv_z);

    // t = R p + trans.
    let d_mean = cam.rotation.transpose() * d_t;
    (d_mean, d_cov3d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_camera() -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
            near: 0.2,
        }
    }

    #[test]
    fn aabb_normalization() {
        let b = Aabb::symmetric(2.0).unwrap();
        assert_eq!(normalize_to_aabb(&b.center(), &b), Vector3::zeros());
        assert_eq!(normalize_to_aabb(&b.max, &b), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(
            normalize_to_aabb(&Vector3::new(1.0, 0.0, -2.0), &b),
            Vector3::new(0.5, 0.0, -1.0)
        );
    }

    #[test]
    fn aabb_rejects_degenerate() {
        let r = Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 1.0));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn contract_origin_and_unit() {
        assert_eq!(contract(&Vector3::zeros()), Vector3::new(0.5, 0.5, 0.5));
        let inner = contract(&Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(inner, Vector3::new(0.75, 0.5, 0.5));
        // Outer branch at the seam must agree with the inner value.
        let just_out = contract(&Vector3::new(1.0 + 1e-13, 0.0, 0.0));
        assert!((just_out - inner).norm() < 1e-9);
    }

    #[test]
    fn contract_outer_branch() {
        let c = contract(&Vector3::new(2.0, 0.0, 0.0));
        assert!((c - Vector3::new(0.875, 0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn contract_seam_continuity() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let a = contract(&(dir * (1.0 - 1e-12)));
            let b = contract(&(dir * (1.0 + 1e-12)));
            worst = worst.max((a - b).norm());
        }
        assert!(worst < 1e-9, "seam disagreement {worst}");
    }

    #[test]
    fn contract_range_is_open_unit_cube() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10_000 {
            let scale = 10f64.powf(rng.gen_range(-3.0..6.0));
            let p = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * scale;
            let c = contract(&p);
            for k in 0..3 {
                assert!(c[k] > 0.0 && c[k] < 1.0, "component {} out of range", c[k]);
            }
        }
    }

    #[test]
    fn contract_backward_matches_fd() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let p: Vector3<f64> = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            if (p.norm() - 1.0).abs() < 1e-3 {
                continue; // keep the FD step on one branch
            }
            let up = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let g = contract_backward(&p, &up);
            let h = 1e-6;
            for k in 0..3 {
                let mut pp = p;
                pp[k] += h;
                let mut pm = p;
                pm[k] -= h;
                let fd = (contract(&pp) - contract(&pm)).dot(&up) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() < 1e-6,
                    "axis {k}: fd {fd} analytic {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn ray_sphere_centered_and_offset() {
        let r = Ray::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let (t, p) = ray_sphere_intersect(&r, 100.0).unwrap();
        assert!((t - 100.0).abs() < 1e-9);
        assert!((p - Vector3::new(100.0, 0.0, 0.0)).norm() < 1e-9);

        let r = Ray::new(Vector3::new(0.0, 0.0, 99.0), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let (t, p) = ray_sphere_intersect(&r, 100.0).unwrap();
        assert!((t - 1.0).abs() < 1e-9);
        assert!((p - Vector3::new(0.0, 0.0, 100.0)).norm() < 1e-9);
    }

    #[test]
    fn ray_sphere_345() {
        let r = Ray::new(Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let (t, p) = ray_sphere_intersect(&r, 5.0).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!((p - Vector3::new(3.0, 4.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_sphere_origin_outside_errors() {
        let r = Ray::new(Vector3::new(10.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(ray_sphere_intersect(&r, 5.0).is_err());
    }

    #[test]
    fn quat_identity_and_x90() {
        let r = quat_to_rotation(&Quaternion::IDENTITY).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);

        let h = std::f64::consts::FRAC_PI_4;
        let q = Quaternion::new(h.cos(), h.sin(), 0.0, 0.0);
        let r = quat_to_rotation(&q).unwrap();
        let v = r * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn quat_rotation_is_orthonormal() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let q = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            let r = quat_to_rotation(&q).unwrap();
            assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quat_zero_rejected() {
        assert!(quat_to_rotation(&Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn covariance_diagonal_cases() {
        let s = covariance_3d(&Vector3::new(1.0, 1.0, 1.0), &Quaternion::IDENTITY).unwrap();
        assert!((s - Matrix3::identity()).norm() < 1e-15);

        let s = covariance_3d(&Vector3::new(2.0, 1.0, 1.0), &Quaternion::IDENTITY).unwrap();
        assert!((s - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-15);

        // 90 degrees about z swaps the x/y variances.
        let h = std::f64::consts::FRAC_PI_4;
        let q = Quaternion::new(h.cos(), 0.0, 0.0, h.sin());
        let s = covariance_3d(&Vector3::new(2.0, 1.0, 1.0), &q).unwrap();
        assert!((s - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn covariance_rejects_nonpositive_scale() {
        assert!(covariance_3d(&Vector3::new(0.0, 1.0, 1.0), &Quaternion::IDENTITY).is_err());
        assert!(covariance_3d(&Vector3::new(1.0, -1.0, 1.0), &Quaternion::IDENTITY).is_err());
    }

    #[test]
    fn covariance_is_positive_definite() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let s = Vector3::new(
                rng.gen_range(1e-3..4.0),
                rng.gen_range(1e-3..4.0),
                rng.gen_range(1e-3..4.0),
            );
            let q = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            let sigma = covariance_3d(&s, &q).unwrap();
            assert!(
                sigma.cholesky().is_some(),
                "covariance not positive definite for s={s:?}"
            );
        }
    }

    #[test]
    fn projection_on_axis() {
        let cam = test_camera();
        let sigma = Matrix3::identity() * 0.01; // sigma^2 = 0.01
        let p = project_gaussian(&Vector3::new(0.0, 0.0, 5.0), &sigma, &cam).unwrap();
        assert!((p.mean2d - Vector2::new(cam.cx, cam.cy)).norm() < 1e-12);
        // On-axis: cov2d ~= (f/z)^2 sigma^2 I + low-pass.
        let expect = (100.0f64 / 5.0).powi(2) * 0.01;
        assert!((p.cov2d[(0, 0)] - LOW_PASS_FILTER - expect).abs() < 1e-9);
        assert!((p.cov2d[(1, 1)] - LOW_PASS_FILTER - expect).abs() < 1e-9);
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
        assert!((p.depth - 5.0).abs() < 1e-15);
    }

    #[test]
    fn projection_depth_scaling_law() {
        let cam = test_camera();
        let sigma = Matrix3::identity() * 0.04;
        let a = project_gaussian(&Vector3::new(0.0, 0.0, 4.0), &sigma, &cam).unwrap();
        let b = project_gaussian(&Vector3::new(0.0, 0.0, 8.0), &sigma, &cam).unwrap();
        let sd_a = (a.cov2d[(0, 0)] - LOW_PASS_FILTER).sqrt();
        let sd_b = (b.cov2d[(0, 0)] - LOW_PASS_FILTER).sqrt();
        assert!((sd_a / sd_b - 2.0).abs() < 1e-9);
    }

    #[test]
    fn projection_culls_behind_near_plane() {
        let cam = test_camera();
        let sigma = Matrix3::identity();
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 0.1), &sigma, &cam).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, -3.0), &sigma, &cam).is_none());
    }

    #[test]
    fn projection_eigenvalues_respect_low_pass_floor() {
        let mut rng = StdRng::seed_from_u64(3);
        let cam = test_camera();
        for _ in 0..200 {
            let s = Vector3::new(
                rng.gen_range(1e-4..0.5),
                rng.gen_range(1e-4..0.5),
                rng.gen_range(1e-4..0.5),
            );
            let q = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            let sigma = covariance_3d(&s, &q).unwrap();
            let mean = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(2.0..10.0),
            );
            let p = project_gaussian(&mean, &sigma, &cam).unwrap();
            let tr = p.cov2d[(0, 0)] + p.cov2d[(1, 1)];
            let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
            let lambda_min = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
            assert!(lambda_min >= LOW_PASS_FILTER - 1e-9);
        }
    }

    #[test]
    fn projection_backward_matches_fd() {
        let mut rng = StdRng::seed_from_u64(99);
        let cam = Camera {
            rotation: quat_to_rotation(&Quaternion::new(0.9, 0.1, -0.2, 0.3).normalized().unwrap())
                .unwrap(),
            translation: Vector3::new(0.1, -0.2, 0.5),
            ..test_camera()
        };
        for _ in 0..50 {
            let mean = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(2.0..6.0),
            );
            let s = Vector3::new(
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.05..0.3),
            );
            let q = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            let cov3d = covariance_3d(&s, &q).unwrap();
            let d_mean2d = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d_cov2d = Matrix2::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let scalarize =
                |p: &Projected| p.mean2d.dot(&d_mean2d) + p.cov2d.component_mul(&d_cov2d).sum();
            let (d_mean, d_cov3d) =
                project_gaussian_backward(&mean, &cov3d, &cam, &d_mean2d, &d_cov2d);

            let h = 1e-6;
            for k in 0..3 {
                let mut mp = mean;
                mp[k] += h;
                let mut mm = mean;
                mm[k] -= h;
                let fp = scalarize(&project_gaussian(&mp, &cov3d, &cam).unwrap());
                let fm = scalarize(&project_gaussian(&mm, &cov3d, &cam).unwrap());
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - d_mean[k]).abs() < 1e-4 * fd.abs().max(1.0),
                    "mean axis {k}: fd {fd} analytic {}",
                    d_mean[k]
                );
            }
            for r in 0..3 {
                for c in 0..3 {
                    let mut cp = cov3d;
                    cp[(r, c)] += h;
                    let mut cm = cov3d;
                    cm[(r, c)] -= h;
                    let fp = scalarize(&project_gaussian(&mean, &cp, &cam).unwrap());
                    let fm = scalarize(&project_gaussian(&mean, &cm, &cam).unwrap());
                    let fd = (fp - fm) / (2.0 * h);
                    assert!(
                        (fd - d_cov3d[(r, c)]).abs() < 1e-4 * fd.abs().max(1.0),
                        "cov ({r},{c}): fd {fd} analytic {}",
                        d_cov3d[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn covariance_backward_matches_fd() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let s = Vector3::new(
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.1..2.0),
            );
            let raw = Quaternion::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let q = raw.normalized().unwrap();
            let d_sigma = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let (d_scale, d_q_unit) = covariance_3d_backward(&s, &q, &d_sigma);
            let d_q_raw = quat_normalize_backward(&raw, &d_q_unit);

            let f = |s: &Vector3<f64>, raw: &Quaternion| {
                let q = raw.normalized().unwrap();
                covariance_3d(s, &q).unwrap().component_mul(&d_sigma).sum()
            };
            let h = 1e-6;
            for k in 0..3 {
                let mut sp = s;
                sp[k] += h;
                let mut sm = s;
                sm[k] -= h;
                let fd = (f(&sp, &raw) - f(&sm, &raw)) / (2.0 * h);
                assert!((fd - d_scale[k]).abs() < 1e-5 * fd.abs().max(1.0));
            }
            let comps = [raw.w, raw.x, raw.y, raw.z];
            let anal = [d_q_raw.w, d_q_raw.x, d_q_raw.y, d_q_raw.z];
            for k in 0..4 {
                let mut cp = comps;
                cp[k] += h;
                let mut cm = comps;
                cm[k] -= h;
                let qp = Quaternion::new(cp[0], cp[1], cp[2], cp[3]);
                let qm = Quaternion::new(cm[0], cm[1], cm[2], cm[3]);
                let fd = (f(&s, &qp) - f(&s, &qm)) / (2.0 * h);
                assert!(
                    (fd - anal[k]).abs() < 1e-5 * fd.abs().max(1.0),
                    "quat comp {k}: fd {fd} analytic {}",
                    anal[k]
                );
            }
        }
    }
}
