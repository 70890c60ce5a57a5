//! Pinhole camera: world-to-camera transform, pixel projection, ray casting.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::math::Ray;

/// World-to-camera convention: `p_cam = R p_world + t`, +z looking forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Points with camera-space depth at or below this are discarded.
    pub near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.near <= 0.0 {
            return Err(Error::invalid("camera near plane must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be nonzero"));
        }
        let rrt = self.rotation * self.rotation.transpose();
        if (rrt - Matrix3::identity()).norm() > 1e-6 {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        Ok(())
    }

    pub fn to_camera_space(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// The camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Perspective projection of a camera-space point to pixel coordinates.
    pub fn project(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }

    /// Pixel coordinates to normalized device coordinates in [-1, 1].
    pub fn ndc(&self, pix: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            2.0 * pix.x / self.width as f64 - 1.0,
            2.0 * pix.y / self.height as f64 - 1.0,
        )
    }

    /// World-space ray through the center of pixel (px, py).
    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        let dir_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dir_world = self.rotation.transpose() * dir_cam;
        Ray::new(self.position(), dir_world).expect("pixel ray direction is never zero")
    }

    /// Focal length from a horizontal field of view in radians.
    pub fn focal_from_fov_x(width: usize, fov_x: f64) -> f64 {
        0.5 * width as f64 / (0.5 * fov_x).tan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_inverts_translation() {
        let h = 0.3f64;
        let rot = Matrix3::new(h.cos(), -h.sin(), 0.0, h.sin(), h.cos(), 0.0, 0.0, 0.0, 1.0);
        let cam = Camera {
            rotation: rot,
            translation: Vector3::new(1.0, 2.0, 3.0),
            fx: 50.0,
            fy: 50.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            near: 0.1,
        };
        let pos = cam.position();
        assert!(cam.to_camera_space(&pos).norm() < 1e-12);
    }

    #[test]
    fn pixel_ray_passes_through_projection() {
        let cam = Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            fx: 80.0,
            fy: 80.0,
            cx: 20.0,
            cy: 12.0,
            width: 40,
            height: 24,
            near: 0.1,
        };
        let ray = cam.pixel_ray(7, 3);
        let p = ray.at(5.0);
        let t = cam.to_camera_space(&p);
        let pix = cam.project(&t);
        assert!((pix.x - 7.5).abs() < 1e-9);
        assert!((pix.y - 3.5).abs() < 1e-9);
    }

    #[test]
    fn fov_focal_conversion() {
        // 0.6911 rad horizontal fov at 800 px gives the classic ~1111.11 focal.
        let f = Camera::focal_from_fov_x(800, 0.6911112070083618);
        assert!((f - 1111.111).abs() < 0.01, "focal {f}");
    }
}
