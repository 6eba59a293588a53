//! Perspective projection of 3D Gaussians into screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Vector3};

use super::{ProjectedSplat, COV2D_DILATION, RADIUS_SIGMAS};
use crate::camera::Camera;
use crate::model::GaussianSet;
use crate::parallel;
use crate::sh;

/// Ratio of the frustum half-extent used to clamp the Jacobian linearization
/// point, as in the EWA-style reference pipelines.
pub(crate) const FRUSTUM_CLAMP: f64 = 1.3;

/// Intermediates shared between projection and the backward chain.
pub(crate) struct ProjectionGeom {
    pub t: Vector3<f64>,
    /// Linearization point, clamped to the widened frustum.
    pub tx_c: f64,
    pub ty_c: f64,
    /// False where the clamp is active (gradient through t.x / t.y is cut).
    pub x_unclamped: bool,
    pub y_unclamped: bool,
    pub jacobian: Matrix2x3<f64>,
    /// Camera-space covariance `W Sigma W^T`.
    pub cov_cam: nalgebra::Matrix3<f64>,
    /// Projected covariance including the low-pass dilation.
    pub cov2d: Matrix2<f64>,
}

pub(crate) fn projection_geometry(
    set: &GaussianSet,
    camera: &Camera,
    index: usize,
) -> Option<ProjectionGeom> {
    let t = camera.to_camera_space(&set.position(index));
    if t.z <= camera.near_plane {
        return None;
    }
    let lim_x = FRUSTUM_CLAMP * camera.tan_half_fov_x();
    let lim_y = FRUSTUM_CLAMP * camera.tan_half_fov_y();
    let txtz = t.x / t.z;
    let tytz = t.y / t.z;
    let x_unclamped = (-lim_x..=lim_x).contains(&txtz);
    let y_unclamped = (-lim_y..=lim_y).contains(&tytz);
    let tx_c = txtz.clamp(-lim_x, lim_x) * t.z;
    let ty_c = tytz.clamp(-lim_y, lim_y) * t.z;

    let tz2 = t.z * t.z;
    let jacobian = Matrix2x3::new(
        camera.focal_x / t.z,
        0.0,
        -camera.focal_x * tx_c / tz2,
        0.0,
        camera.focal_y / t.z,
        -camera.focal_y * ty_c / tz2,
    );
    let cov_world = set.covariance(index);
    let cov_cam = camera.rotation * cov_world * camera.rotation.transpose();
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;

    Some(ProjectionGeom {
        t,
        tx_c,
        ty_c,
        x_unclamped,
        y_unclamped,
        jacobian,
        cov_cam,
        cov2d,
    })
}

fn project_one(
    set: &GaussianSet,
    camera: &Camera,
    index: usize,
    sh_degree: usize,
) -> Option<ProjectedSplat> {
    let geom = projection_geometry(set, camera, index)?;
    let cov = &geom.cov2d;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    if det <= 0.0 {
        return None;
    }
    let conic = [
        cov[(1, 1)] / det,
        -cov[(0, 1)] / det,
        cov[(0, 0)] / det,
    ];
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let screen_radius = RADIUS_SIGMAS * lambda_max.sqrt();

    let mean2d = [
        camera.focal_x * geom.t.x / geom.t.z + camera.principal_x,
        camera.focal_y * geom.t.y / geom.t.z + camera.principal_y,
    ];
    // Skip splats whose footprint cannot touch the image.
    if mean2d[0] + screen_radius < 0.0
        || mean2d[0] - screen_radius > camera.width as f64
        || mean2d[1] + screen_radius < 0.0
        || mean2d[1] - screen_radius > camera.height as f64
    {
        return None;
    }

    let dir_raw = set.position(index) - camera.center();
    let dir_n = dir_raw.norm();
    let dir = [dir_raw.x / dir_n, dir_raw.y / dir_n, dir_raw.z / dir_n];
    let rgb = sh::eval(
        &dir,
        &set.sh_dc_rgb(index),
        set.sh_rest_slice(index),
        sh_degree,
    );

    Some(ProjectedSplat {
        gaussian_index: index as u32,
        mean2d,
        conic,
        depth: geom.t.z,
        screen_radius,
        rgb,
        alpha_base: set.opacity(index),
    })
}

/// Project all Gaussians into a view: frustum-culled, degenerate splats
/// dropped, globally sorted by (depth, index) so per-tile lists come out
/// deterministic.
pub fn project(set: &GaussianSet, camera: &Camera, sh_degree: usize) -> Vec<ProjectedSplat> {
    let mut splats: Vec<ProjectedSplat> =
        parallel::map_range(set.count, |i| project_one(set, camera, i, sh_degree))
            .into_iter()
            .flatten()
            .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    splats
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn identity_camera() -> Camera {
        Camera::new(
            64,
            64,
            50.0,
            50.0,
            32.0,
            32.0,
            Matrix3::identity(),
            Vector3::zeros(),
        )
    }

    fn single_gaussian_at(p: [f64; 3], sigma: f64) -> GaussianSet {
        let mut set = GaussianSet::with_count(1);
        set.positions.copy_from_slice(&p);
        let ls = sigma.ln();
        set.log_scales.copy_from_slice(&[ls, ls, ls]);
        set
    }

    #[test]
    fn gaussian_behind_camera_is_culled() {
        let set = single_gaussian_at([0.0, 0.0, -1.0], 0.1);
        assert!(project(&set, &identity_camera(), 0).is_empty());
    }

    #[test]
    fn on_axis_gaussian_projects_to_principal_point() {
        let cam = identity_camera();
        for depth in [2.0, 4.0] {
            let sigma = 0.05;
            let set = single_gaussian_at([0.0, 0.0, depth], sigma);
            let splats = project(&set, &cam, 0);
            assert_eq!(splats.len(), 1);
            let s = &splats[0];
            assert_relative_eq!(s.mean2d[0], 32.0, epsilon = 1e-12);
            assert_relative_eq!(s.mean2d[1], 32.0, epsilon = 1e-12);
            assert_relative_eq!(s.depth, depth, epsilon = 1e-12);
            // On-axis isotropic footprint: J is diagonal with f/d, so the
            // largest eigenvalue is (sigma * f / d)^2 plus the dilation.
            let expect = RADIUS_SIGMAS
                * ((sigma * cam.focal_x / depth).powi(2) + COV2D_DILATION).sqrt();
            assert_relative_eq!(s.screen_radius, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn screen_radius_scales_inversely_with_depth() {
        // With a footprint well above the dilation floor, radius ~ f/d.
        let cam = identity_camera();
        let near = project(&single_gaussian_at([0.0, 0.0, 2.0], 0.5), &cam, 0);
        let far = project(&single_gaussian_at([0.0, 0.0, 4.0], 0.5), &cam, 0);
        let ratio = near[0].screen_radius / far[0].screen_radius;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn splats_are_sorted_by_depth_then_index() {
        let mut set = GaussianSet::with_count(3);
        set.positions.copy_from_slice(&[
            0.0, 0.0, 3.0, //
            0.1, 0.0, 2.0, //
            -0.1, 0.0, 3.0,
        ]);
        for v in set.log_scales.iter_mut() {
            *v = (0.05f64).ln();
        }
        let splats = project(&set, &identity_camera(), 0);
        let order: Vec<u32> = splats.iter().map(|s| s.gaussian_index).collect();
        assert_eq!(order, vec![1, 0, 2]);
    }
}
