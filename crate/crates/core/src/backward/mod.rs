//! Reverse-mode gradients of the rasterizer.
//!
//! Two engines produce the same gradients with different traversal
//! topologies: [`per_pixel`] walks pixels and iterates splats back to front
//! (the reference data flow), [`per_splat`] walks 32-splat buckets front to
//! back from checkpointed pixel states so every worker owns one splat's
//! accumulator at a time. Both feed the identical per-contribution formula
//! and the identical 2D-to-3D parameter chain.

pub mod chain;
mod per_pixel;
mod per_splat;

pub use per_splat::PerSplatOptions;

use crate::camera::Camera;
use crate::config::BackwardEngine;
use crate::model::{GaussianSet, SH_REST_DIM};
use crate::render::{ProjectedSplat, RenderArtifacts, ALPHA_MAX, ALPHA_MIN};

/// Per-Gaussian gradients for one rendered view: the image-space pieces the
/// blending produces plus the chained parameter gradients.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub count: usize,
    /// d(loss)/d(projected center), pixel units, 2 per Gaussian.
    pub mean2d: Vec<f64>,
    /// d(loss)/d(conic), packed (a, b, c).
    pub conic: Vec<f64>,
    /// d(loss)/d(activated opacity).
    pub alpha_base: Vec<f64>,
    /// d(loss)/d(splat color).
    pub rgb: Vec<f64>,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub raw_opacities: Vec<f64>,
    pub sh_dc: Vec<f64>,
    pub sh_rest: Vec<f64>,
    /// True for Gaussians projected into this view.
    pub visible: Vec<bool>,
}

impl GaussianGrads {
    pub fn zeros(count: usize) -> Self {
        GaussianGrads {
            count,
            mean2d: vec![0.0; 2 * count],
            conic: vec![0.0; 3 * count],
            alpha_base: vec![0.0; count],
            rgb: vec![0.0; 3 * count],
            positions: vec![0.0; 3 * count],
            rotations: vec![0.0; 4 * count],
            log_scales: vec![0.0; 3 * count],
            raw_opacities: vec![0.0; count],
            sh_dc: vec![0.0; 3 * count],
            sh_rest: vec![0.0; SH_REST_DIM * count],
            visible: vec![false; count],
        }
    }
}

/// Accumulated image-space gradient of one splat:
/// `[rgb0, rgb1, rgb2, alpha_base, mean_x, mean_y, conic_a, conic_b, conic_c]`.
pub(crate) type SplatAcc = [f64; 9];

/// Gradient contribution of one (splat, pixel) pair. `t_front` is the
/// transmittance in front of the splat, `s_behind` the color accumulated
/// behind it normalized by the transmittance after it.
#[inline]
pub(crate) fn contribution_grad(
    splat: &ProjectedSplat,
    dx: f64,
    dy: f64,
    g_exp: f64,
    alpha: f64,
    t_front: f64,
    s_behind: [f64; 3],
    dl_pix: [f64; 3],
    bg_dot: f64,
    t_final: f64,
    acc: &mut SplatAcc,
) {
    let mut dl_dalpha = 0.0;
    for ch in 0..3 {
        acc[ch] += alpha * t_front * dl_pix[ch];
        dl_dalpha += (splat.rgb[ch] - s_behind[ch]) * dl_pix[ch];
    }
    dl_dalpha *= t_front;
    // The alpha of every blended splat also scales how much background
    // shows through at the end.
    dl_dalpha += -(t_final / (1.0 - alpha)) * bg_dot;

    // Clamped blending weights stop gradients into opacity and footprint.
    if splat.alpha_base * g_exp >= ALPHA_MAX {
        return;
    }
    let dl_dg = splat.alpha_base * dl_dalpha;
    acc[3] += g_exp * dl_dalpha;

    let [ca, cb, cc] = splat.conic;
    acc[4] += dl_dg * g_exp * (ca * dx + cb * dy);
    acc[5] += dl_dg * g_exp * (cb * dx + cc * dy);
    acc[6] += dl_dg * (-0.5 * g_exp * dx * dx);
    acc[7] += dl_dg * (-g_exp * dx * dy);
    acc[8] += dl_dg * (-0.5 * g_exp * dy * dy);
}

#[inline]
pub(crate) fn splat_alpha(splat: &ProjectedSplat, dx: f64, dy: f64) -> Option<(f64, f64)> {
    let [ca, cb, cc] = splat.conic;
    let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
    if q < 0.0 {
        return None;
    }
    let g_exp = (-0.5 * q).exp();
    let alpha = (splat.alpha_base * g_exp).min(ALPHA_MAX);
    if alpha < ALPHA_MIN {
        return None;
    }
    Some((g_exp, alpha))
}

fn check_contract(artifacts: &RenderArtifacts, camera: &Camera, dl_dimage: &[f64]) {
    assert!(
        artifacts.width == camera.width && artifacts.height == camera.height,
        "artifact/camera shape mismatch"
    );
    assert_eq!(
        dl_dimage.len(),
        3 * camera.width * camera.height,
        "loss gradient shape mismatch"
    );
}

/// Run the configured gradient engine over one rendered view.
pub fn backward(
    engine: BackwardEngine,
    set: &GaussianSet,
    camera: &Camera,
    artifacts: &RenderArtifacts,
    splats: &[ProjectedSplat],
    dl_dimage: &[f64],
    sh_degree: usize,
) -> GaussianGrads {
    match engine {
        BackwardEngine::PerPixel => {
            backward_per_pixel(set, camera, artifacts, splats, dl_dimage, sh_degree)
        }
        BackwardEngine::PerSplat => backward_per_splat(
            set,
            camera,
            artifacts,
            splats,
            dl_dimage,
            sh_degree,
            PerSplatOptions::default(),
        ),
    }
}

/// Reference engine: exact reverse of the blending recurrence, walking each
/// pixel's splat list back to front.
pub fn backward_per_pixel(
    set: &GaussianSet,
    camera: &Camera,
    artifacts: &RenderArtifacts,
    splats: &[ProjectedSplat],
    dl_dimage: &[f64],
    sh_degree: usize,
) -> GaussianGrads {
    check_contract(artifacts, camera, dl_dimage);
    let splat_acc = per_pixel::accumulate(artifacts, splats, dl_dimage);
    finish(set, camera, splats, &splat_acc, sh_degree)
}

/// Bucketed engine: per tile, 32-splat buckets restart from stored pixel
/// states, advance them front to back, and add each splat's whole-tile
/// gradient once.
pub fn backward_per_splat(
    set: &GaussianSet,
    camera: &Camera,
    artifacts: &RenderArtifacts,
    splats: &[ProjectedSplat],
    dl_dimage: &[f64],
    sh_degree: usize,
    options: PerSplatOptions,
) -> GaussianGrads {
    check_contract(artifacts, camera, dl_dimage);
    let splat_acc = per_splat::accumulate(artifacts, splats, dl_dimage, options);
    finish(set, camera, splats, &splat_acc, sh_degree)
}

/// Accumulated sums whose magnitude is below the blending round-off noise
/// carry no signal, but their sign depends on summation order. Flushing them
/// to exact zero keeps the two engines' downstream optimizer trajectories
/// from being separated by noise-sign disagreements.
const GRAD_FLUSH_EPS: f64 = 1e-14;

fn flush_noise(values: &mut [f64]) {
    for v in values.iter_mut() {
        if v.abs() < GRAD_FLUSH_EPS {
            *v = 0.0;
        }
    }
}

fn finish(
    set: &GaussianSet,
    camera: &Camera,
    splats: &[ProjectedSplat],
    splat_acc: &[SplatAcc],
    sh_degree: usize,
) -> GaussianGrads {
    let mut grads = GaussianGrads::zeros(set.count);
    for (splat, acc) in splats.iter().zip(splat_acc) {
        let g = splat.gaussian_index as usize;
        grads.visible[g] = true;
        grads.rgb[3 * g..3 * g + 3].copy_from_slice(&acc[0..3]);
        grads.alpha_base[g] = acc[3];
        grads.mean2d[2 * g..2 * g + 2].copy_from_slice(&acc[4..6]);
        grads.conic[3 * g..3 * g + 3].copy_from_slice(&acc[6..9]);
    }
    chain::chain_to_parameters(set, camera, splats, splat_acc, sh_degree, &mut grads);
    flush_noise(&mut grads.mean2d);
    flush_noise(&mut grads.conic);
    flush_noise(&mut grads.alpha_base);
    flush_noise(&mut grads.rgb);
    flush_noise(&mut grads.positions);
    flush_noise(&mut grads.rotations);
    flush_noise(&mut grads.log_scales);
    flush_noise(&mut grads.raw_opacities);
    flush_noise(&mut grads.sh_dc);
    flush_noise(&mut grads.sh_rest);
    grads
}

/// Windowed positional-gradient statistics driving densification decisions.
#[derive(Debug, Clone)]
pub struct DensifyGradStats {
    pub norm_sum: Vec<f64>,
    pub hits: Vec<u32>,
}

impl DensifyGradStats {
    pub fn zeros(count: usize) -> Self {
        DensifyGradStats {
            norm_sum: vec![0.0; count],
            hits: vec![0; count],
        }
    }

    /// Add the screen-halfsize-scaled 2D positional gradient norm of every
    /// visible Gaussian and bump its hit count. The scaling keeps the usual
    /// densification threshold calibration independent of resolution.
    pub fn accumulate(&mut self, grads: &GaussianGrads, width: usize, height: usize) {
        assert_eq!(grads.count, self.norm_sum.len());
        let sx = width as f64 * 0.5;
        let sy = height as f64 * 0.5;
        for g in 0..grads.count {
            if !grads.visible[g] {
                continue;
            }
            let nx = grads.mean2d[2 * g] * sx;
            let ny = grads.mean2d[2 * g + 1] * sy;
            self.norm_sum[g] += (nx * nx + ny * ny).sqrt();
            self.hits[g] += 1;
        }
    }

    /// Windowed average norm; 0 for Gaussians never seen.
    pub fn average(&self, g: usize) -> f64 {
        if self.hits[g] == 0 {
            0.0
        } else {
            self.norm_sum[g] / self.hits[g] as f64
        }
    }

    pub fn reset(&mut self, count: usize) {
        self.norm_sum.clear();
        self.norm_sum.resize(count, 0.0);
        self.hits.clear();
        self.hits.resize(count, 0);
    }
}

/// Bucket workload of a rendered view: (total buckets, busiest tile).
/// Reported by the backward benchmark alongside timings.
pub fn bucket_counts(artifacts: &RenderArtifacts) -> (usize, usize) {
    let mut total = 0;
    let mut max_tile = 0;
    for cps in &artifacts.checkpoints {
        total += cps.len();
        max_tile = max_tile.max(cps.len());
    }
    (total, max_tile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{project, render};
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn test_camera(w: usize, h: usize, focal: f64) -> Camera {
        Camera::new(
            w,
            h,
            focal,
            focal,
            w as f64 / 2.0,
            h as f64 / 2.0,
            Matrix3::identity(),
            Vector3::zeros(),
        )
    }

    pub(crate) fn random_scene(rng: &mut ChaCha8Rng, count: usize, spread: f64) -> GaussianSet {
        let mut set = GaussianSet::with_count(count);
        for i in 0..count {
            set.positions[3 * i] = rng.gen_range(-spread..spread);
            set.positions[3 * i + 1] = rng.gen_range(-spread..spread);
            set.positions[3 * i + 2] = rng.gen_range(2.0..4.0);
            let q: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(0.1);
            for k in 0..4 {
                set.rotations[4 * i + k] = q[k] / n;
            }
            for k in 0..3 {
                set.log_scales[3 * i + k] = rng.gen_range(0.02f64..0.15).ln();
            }
            set.raw_opacities[i] = rng.gen_range(-1.0..1.5);
            for k in 0..3 {
                set.sh_dc[3 * i + k] = rng.gen_range(-0.2..0.8);
            }
            for k in 0..SH_REST_DIM {
                set.sh_rest[SH_REST_DIM * i + k] = rng.gen_range(-0.1..0.1);
            }
        }
        set
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let set = random_scene(&mut rng, 8, 0.5);
        let cam = test_camera(32, 32, 30.0);
        let splats = project(&set, &cam, 3);
        let art = render(&splats, &cam, [0.1, 0.2, 0.3]);
        let dl = vec![0.0; 3 * 32 * 32];
        for engine in [BackwardEngine::PerPixel, BackwardEngine::PerSplat] {
            let grads = backward(engine, &set, &cam, &art, &splats, &dl, 3);
            assert!(grads.positions.iter().all(|v| *v == 0.0));
            assert!(grads.sh_rest.iter().all(|v| *v == 0.0));
            assert!(grads.raw_opacities.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn culled_gaussians_have_exactly_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut set = random_scene(&mut rng, 6, 0.5);
        // Push two Gaussians behind the camera.
        set.positions[3 * 2 + 2] = -5.0;
        set.positions[3 * 4 + 2] = -5.0;
        let cam = test_camera(32, 32, 30.0);
        let splats = project(&set, &cam, 3);
        let art = render(&splats, &cam, [0.0; 3]);
        let dl: Vec<f64> = (0..3 * 32 * 32).map(|i| (i % 5) as f64 * 0.1).collect();
        let grads = backward_per_pixel(&set, &cam, &art, &splats, &dl, 3);
        for g in [2usize, 4] {
            assert!(!grads.visible[g]);
            assert!(grads.positions[3 * g..3 * g + 3].iter().all(|v| *v == 0.0));
            assert_eq!(grads.raw_opacities[g], 0.0);
        }
    }

    #[test]
    fn one_term_blend_color_gradient_is_alpha() {
        // A single splat over a pixel with unit loss gradient: the color
        // gradient is alpha * T = alpha (T starts at 1).
        let mut set = GaussianSet::with_count(1);
        set.positions.copy_from_slice(&[0.0, 0.0, 2.0]);
        for k in 0..3 {
            set.log_scales[k] = 0.4f64.ln(); // footprint much wider than a pixel
        }
        set.raw_opacities[0] = 0.3;
        let cam = test_camera(2, 2, 4.0);
        let splats = project(&set, &cam, 0);
        assert_eq!(splats.len(), 1);
        let art = render(&splats, &cam, [0.0; 3]);
        let dl = vec![1.0; 3 * 4];
        let grads = backward_per_pixel(&set, &cam, &art, &splats, &dl, 0);
        // Sum of alphas over the four covered pixels.
        let mut alpha_sum = 0.0;
        for py in 0..2 {
            for px in 0..2 {
                let dx = px as f64 + 0.5 - splats[0].mean2d[0];
                let dy = py as f64 + 0.5 - splats[0].mean2d[1];
                let [a, b, c] = splats[0].conic;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                alpha_sum += (splats[0].alpha_base * (-0.5 * q).exp()).min(ALPHA_MAX);
            }
        }
        for ch in 0..3 {
            assert!((grads.rgb[ch] - alpha_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn densify_stats_accumulate_norms_and_average() {
        let mut grads = GaussianGrads::zeros(2);
        grads.visible[0] = true;
        // Screen 2x2 so the halfsize scaling is exactly 1.
        grads.mean2d[0] = 3.0;
        grads.mean2d[1] = 4.0;
        let mut stats = DensifyGradStats::zeros(2);
        stats.accumulate(&grads, 2, 2);
        assert_eq!(stats.norm_sum[0], 5.0);
        assert_eq!(stats.hits[0], 1);
        // Invisible Gaussian untouched.
        assert_eq!(stats.hits[1], 0);
        assert_eq!(stats.average(1), 0.0);

        grads.mean2d[0] = 0.0;
        grads.mean2d[1] = 1.0;
        stats.accumulate(&grads, 2, 2);
        assert_eq!(stats.average(0), 3.0);
    }
}
