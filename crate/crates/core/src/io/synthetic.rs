//! Synthetic scenes: random well-conditioned Gaussians inside the unit
//! sphere, a camera ring looking inward, and ground-truth images produced by
//! the forward rasterizer itself, so the training target is exactly
//! representable.

use nalgebra::Vector3;
use rand::Rng;

use super::{camera_extent, SceneBundle, TrainView, TEST_SPLIT_STRIDE};
use crate::camera::Camera;
use crate::model::{inverse_sigmoid, GaussianSet, SH_REST_DIM};
use crate::render::{project, render};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub gaussian_count: usize,
    pub camera_count: usize,
    pub resolution: usize,
    /// Standard deviation of the noise turning ground-truth centers into
    /// initialization points.
    pub jitter: f64,
    pub background: [f64; 3],
    /// Every n-th view becomes a test view (0 disables the split).
    pub test_split_stride: usize,
    /// Amplitude of the random higher SH bands of the ground truth.
    pub sh_rest_amplitude: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            gaussian_count: 20,
            camera_count: 8,
            resolution: 64,
            jitter: 0.03,
            background: [0.0, 0.0, 0.0],
            test_split_stride: TEST_SPLIT_STRIDE,
            sh_rest_amplitude: 0.04,
        }
    }
}

fn random_ground_truth<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> GaussianSet {
    let n = spec.gaussian_count;
    let mut set = GaussianSet::with_count(n);
    let dc_norm = crate::sh::basis(&[0.0, 0.0, 1.0], 0)[0];
    for i in 0..n {
        // Uniform in a ball of radius 0.7.
        loop {
            let p = Vector3::new(
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.7..0.7),
            );
            if p.norm() <= 0.7 {
                for k in 0..3 {
                    set.positions[3 * i + k] = p[k];
                }
                break;
            }
        }
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
        for k in 0..4 {
            set.rotations[4 * i + k] = q[k] / norm;
        }
        for k in 0..3 {
            set.log_scales[3 * i + k] = rng.gen_range(0.06f64..0.16).ln();
        }
        set.raw_opacities[i] = inverse_sigmoid(rng.gen_range(0.65..0.95));
        for ch in 0..3 {
            set.sh_dc[3 * i + ch] = (rng.gen_range(0.1..0.9) - 0.5) / dc_norm;
        }
        for k in 0..SH_REST_DIM {
            set.sh_rest[SH_REST_DIM * i + k] =
                rng.gen_range(-spec.sh_rest_amplitude..=spec.sh_rest_amplitude);
        }
    }
    set
}

fn ring_camera(spec: &SyntheticSpec, index: usize) -> Camera {
    let angle = index as f64 / spec.camera_count as f64 * std::f64::consts::TAU;
    let height = if index % 2 == 0 { 0.6 } else { -0.4 };
    let eye = Vector3::new(3.0 * angle.cos(), height, 3.0 * angle.sin());
    let focal = 1.1 * spec.resolution as f64;
    Camera::look_at(
        spec.resolution,
        spec.resolution,
        focal,
        eye,
        Vector3::zeros(),
        Vector3::y(),
    )
}

/// Build a synthetic scene and return it together with the ground-truth
/// Gaussians that generated the images.
pub fn make_synthetic_scene<R: Rng>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> (SceneBundle, GaussianSet) {
    let truth = random_ground_truth(spec, rng);

    let mut views = Vec::with_capacity(spec.camera_count);
    for i in 0..spec.camera_count {
        let camera = ring_camera(spec, i);
        let splats = project(&truth, &camera, 3);
        let artifacts = render(&splats, &camera, spec.background);
        let is_test = spec.test_split_stride != 0 && i % spec.test_split_stride == 0;
        views.push(TrainView {
            name: format!("view_{i:03}"),
            camera,
            image: artifacts.image,
            is_test,
            roi: None,
        });
    }

    let n = spec.gaussian_count;
    let mut sfm_positions = Vec::with_capacity(3 * n);
    let mut sfm_colors = Vec::with_capacity(3 * n);
    let dc_norm = crate::sh::basis(&[0.0, 0.0, 1.0], 0)[0];
    for i in 0..n {
        for k in 0..3 {
            let noise: f64 = if spec.jitter > 0.0 {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
            } else {
                0.0
            };
            sfm_positions.push(truth.positions[3 * i + k] + spec.jitter * noise);
        }
        for ch in 0..3 {
            sfm_colors.push((truth.sh_dc[3 * i + ch] * dc_norm + 0.5).clamp(0.0, 1.0));
        }
    }

    let extent = camera_extent(&views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    (
        SceneBundle {
            views,
            sfm_positions,
            sfm_colors,
            scene_extent: extent,
        },
        truth,
    )
}
