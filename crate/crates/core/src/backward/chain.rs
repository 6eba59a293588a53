//! Chain rule from image-space splat gradients to 3D Gaussian parameters.
//!
//! Recomputes the projection intermediates per splat and propagates through
//! the conic inversion, the projected covariance, the perspective Jacobian,
//! the covariance factorization and the spherical-harmonics color.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::{GaussianGrads, SplatAcc};
use crate::camera::Camera;
use crate::model::{self, GaussianSet, SH_REST_DIM};
use crate::parallel;
use crate::render::ProjectedSplat;
use crate::render::project::projection_geometry;
use crate::sh;

struct ChainedGrad {
    gaussian: usize,
    position: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    raw_opacity: f64,
    sh_dc: [f64; 3],
    sh_rest: [f64; SH_REST_DIM],
}

/// d(rotation matrix)/d(unit quaternion component), `which` indexing
/// (w, x, y, z).
fn rotation_matrix_grad(q: &[f64; 4], which: usize) -> Matrix3<f64> {
    let (r, x, y, z) = (q[0], q[1], q[2], q[3]);
    match which {
        0 => Matrix3::new(
            0.0, -2.0 * z, 2.0 * y, //
            2.0 * z, 0.0, -2.0 * x, //
            -2.0 * y, 2.0 * x, 0.0,
        ),
        1 => Matrix3::new(
            0.0, 2.0 * y, 2.0 * z, //
            2.0 * y, -4.0 * x, -2.0 * r, //
            2.0 * z, 2.0 * r, -4.0 * x,
        ),
        2 => Matrix3::new(
            -4.0 * y, 2.0 * x, 2.0 * r, //
            2.0 * x, 0.0, 2.0 * z, //
            -2.0 * r, 2.0 * z, -4.0 * y,
        ),
        _ => Matrix3::new(
            -4.0 * z, -2.0 * r, 2.0 * x, //
            2.0 * r, -4.0 * z, 2.0 * y, //
            2.0 * x, 2.0 * y, 0.0,
        ),
    }
}

fn chain_one(
    set: &GaussianSet,
    camera: &Camera,
    splat: &ProjectedSplat,
    acc: &SplatAcc,
    sh_degree: usize,
) -> ChainedGrad {
    let g = splat.gaussian_index as usize;
    let geom = projection_geometry(set, camera, g).expect("splat was projected");

    let d_rgb = [acc[0], acc[1], acc[2]];
    let d_alpha_base = acc[3];
    let d_mean = [acc[4], acc[5]];
    let d_conic = [acc[6], acc[7], acc[8]];

    // Opacity activation.
    let raw_opacity =
        d_alpha_base * model::activate_opacity_grad(set.raw_opacities[g], set.opacity_mode);

    // Conic -> dilated 2D covariance (inverse of a symmetric 2x2).
    let m2 = geom.cov2d;
    let conic = m2.try_inverse().expect("projected covariance invertible");
    let g_conic = Matrix2::new(d_conic[0], d_conic[1] / 2.0, d_conic[1] / 2.0, d_conic[2]);
    let d_m2 = -(conic * g_conic * conic);

    // 2D covariance -> world covariance through A = J * W.
    let a = geom.jacobian * camera.rotation;
    let d_sigma = a.transpose() * d_m2 * a;

    // Sigma = M M^T with M = R * diag(s).
    let quat = set.rotation(g);
    let qn = (quat.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let q_hat = [quat[0] / qn, quat[1] / qn, quat[2] / qn, quat[3] / qn];
    let rot = model::rotation_matrix(&quat);
    let scales = set.scales(g);
    let m3 = rot * Matrix3::from_diagonal(&scales);
    let d_m3 = 2.0 * d_sigma * m3;

    let mut log_scale = [0.0; 3];
    for k in 0..3 {
        let ds: f64 = (0..3).map(|i| d_m3[(i, k)] * rot[(i, k)]).sum();
        log_scale[k] = ds * scales[k];
    }

    let d_rot_mat = m3_mul_diag(&d_m3, &scales);
    let mut d_qhat = [0.0; 4];
    for c in 0..4 {
        d_qhat[c] = frobenius_dot(&d_rot_mat, &rotation_matrix_grad(&q_hat, c));
    }
    // Through the normalization q_hat = q / |q|.
    let dot: f64 = (0..4).map(|c| q_hat[c] * d_qhat[c]).sum();
    let mut rotation = [0.0; 4];
    for c in 0..4 {
        rotation[c] = (d_qhat[c] - q_hat[c] * dot) / qn;
    }

    // 2D covariance -> camera point through the Jacobian entries.
    let d_j = 2.0 * d_m2 * geom.jacobian * geom.cov_cam;
    let t = geom.t;
    let tz2 = t.z * t.z;
    let tz3 = tz2 * t.z;
    let (fx, fy) = (camera.focal_x, camera.focal_y);
    let d_txc = d_j[(0, 2)] * (-fx / tz2);
    let d_tyc = d_j[(1, 2)] * (-fy / tz2);
    let mut d_t = Vector3::new(0.0, 0.0, 0.0);
    d_t.z += d_j[(0, 0)] * (-fx / tz2)
        + d_j[(1, 1)] * (-fy / tz2)
        + d_j[(0, 2)] * (2.0 * fx * geom.tx_c / tz3)
        + d_j[(1, 2)] * (2.0 * fy * geom.ty_c / tz3);
    if geom.x_unclamped {
        d_t.x += d_txc;
    } else {
        d_t.z += d_txc * (geom.tx_c / t.z);
    }
    if geom.y_unclamped {
        d_t.y += d_tyc;
    } else {
        d_t.z += d_tyc * (geom.ty_c / t.z);
    }

    // Projected center -> camera point.
    d_t.x += d_mean[0] * fx / t.z;
    d_t.z += d_mean[0] * (-fx * t.x / tz2);
    d_t.y += d_mean[1] * fy / t.z;
    d_t.z += d_mean[1] * (-fy * t.y / tz2);

    // Camera point -> world position.
    let mut d_pos = camera.rotation.transpose() * d_t;

    // Color -> SH coefficients and view direction.
    let dir_raw = set.position(g) - camera.center();
    let n = dir_raw.norm();
    let dir = [dir_raw.x / n, dir_raw.y / n, dir_raw.z / n];
    let basis = sh::basis(&dir, sh_degree);
    let dc = set.sh_dc_rgb(g);
    let rest = set.sh_rest_slice(g);
    let mut sh_dc = [0.0; 3];
    let mut sh_rest = [0.0; SH_REST_DIM];
    let mut masked = [0.0; 3];
    for ch in 0..3 {
        let mut pre = basis[0] * dc[ch];
        for c in 1..sh::SH_BASIS {
            pre += basis[c] * rest[(c - 1) * 3 + ch];
        }
        // Color clamp at 0: pass-through above, zero below.
        masked[ch] = if pre + 0.5 > 0.0 { d_rgb[ch] } else { 0.0 };
        sh_dc[ch] = basis[0] * masked[ch];
        for c in 1..sh::SH_BASIS {
            sh_rest[(c - 1) * 3 + ch] = basis[c] * masked[ch];
        }
    }
    let basis_grads = sh::basis_grad(&dir, sh_degree);
    let mut d_dir = Vector3::new(0.0, 0.0, 0.0);
    for axis in 0..3 {
        let mut v = 0.0;
        for ch in 0..3 {
            if masked[ch] == 0.0 {
                continue;
            }
            let mut db = basis_grads[axis][0] * dc[ch];
            for c in 1..sh::SH_BASIS {
                db += basis_grads[axis][c] * rest[(c - 1) * 3 + ch];
            }
            v += masked[ch] * db;
        }
        d_dir[axis] = v;
    }
    // Through the direction normalization.
    let dirv = Vector3::new(dir[0], dir[1], dir[2]);
    d_pos += (d_dir - dirv * dirv.dot(&d_dir)) / n;

    ChainedGrad {
        gaussian: g,
        position: [d_pos.x, d_pos.y, d_pos.z],
        rotation,
        log_scale,
        raw_opacity,
        sh_dc,
        sh_rest,
    }
}

fn m3_mul_diag(m: &Matrix3<f64>, d: &Vector3<f64>) -> Matrix3<f64> {
    let mut out = *m;
    for k in 0..3 {
        for i in 0..3 {
            out[(i, k)] = m[(i, k)] * d[k];
        }
    }
    out
}

fn frobenius_dot(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut v = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            v += a[(i, j)] * b[(i, j)];
        }
    }
    v
}

/// Chain every splat's accumulated image-space gradient into the parameter
/// slots of its Gaussian. Each Gaussian projects to at most one splat per
/// view, so the writes are disjoint.
pub(crate) fn chain_to_parameters(
    set: &GaussianSet,
    camera: &Camera,
    splats: &[ProjectedSplat],
    splat_acc: &[SplatAcc],
    sh_degree: usize,
    grads: &mut GaussianGrads,
) {
    let chained = parallel::map_range(splats.len(), |si| {
        chain_one(set, camera, &splats[si], &splat_acc[si], sh_degree)
    });
    for c in chained {
        let g = c.gaussian;
        grads.positions[3 * g..3 * g + 3].copy_from_slice(&c.position);
        grads.rotations[4 * g..4 * g + 4].copy_from_slice(&c.rotation);
        grads.log_scales[3 * g..3 * g + 3].copy_from_slice(&c.log_scale);
        grads.raw_opacities[g] = c.raw_opacity;
        grads.sh_dc[3 * g..3 * g + 3].copy_from_slice(&c.sh_dc);
        grads.sh_rest[SH_REST_DIM * g..SH_REST_DIM * (g + 1)].copy_from_slice(&c.sh_rest);
    }
}
