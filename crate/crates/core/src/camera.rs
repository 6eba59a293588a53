//! Pinhole camera with a rigid world-to-camera pose.

use nalgebra::{Matrix3, Vector3};

/// A training/evaluation viewpoint. The camera looks along +z in its own
/// frame; `rotation` must be orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Matrix3<f64>,
    /// Translation part of the world-to-camera transform.
    pub translation: Vector3<f64>,
    pub near_plane: f64,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        assert!(width > 0 && height > 0, "camera must have positive extent");
        Camera {
            width,
            height,
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            rotation,
            translation,
            near_plane: 0.2,
        }
    }

    /// Camera looking at `target` from `eye`, with +y of the image pointing
    /// roughly along `-up`.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right).normalize();
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -rotation * eye;
        Camera::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
        )
    }

    pub fn to_camera_space(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Camera origin expressed in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn tan_half_fov_x(&self) -> f64 {
        self.width as f64 / (2.0 * self.focal_x)
    }

    pub fn tan_half_fov_y(&self) -> f64 {
        self.height as f64 / (2.0 * self.focal_y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_maps_target_to_optical_axis() {
        let eye = Vector3::new(0.0, 0.0, -3.0);
        let cam = Camera::look_at(64, 64, 60.0, eye, Vector3::zeros(), Vector3::y());
        let t = cam.to_camera_space(&Vector3::zeros());
        assert_relative_eq!(t.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.z, 3.0, epsilon = 1e-12);
        // Pose rotation stays orthonormal.
        let rrt = cam.rotation * cam.rotation.transpose();
        assert_relative_eq!(rrt, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(cam.center(), eye, epsilon = 1e-12);
    }
}
