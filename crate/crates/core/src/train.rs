//! Training orchestration: the full optimize/densify loop, evaluation and
//! run reporting.
//!
//! All randomness flows from one ChaCha8 generator seeded by the run
//! configuration. Draw order per iteration: (1) one uniform for the training
//! view; at a densification event additionally (2) a partial shuffle to pick
//! the sampled score views, (3) one uniform per live Gaussian for the
//! weighted candidate keys (whole passes of an oversized step consume no
//! draws, only its remainder samples), (4) three standard normals per split
//! child. Runs with equal seeds are bit-identical.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backward::{backward, DensifyGradStats, GaussianGrads};
use crate::config::TrainConfig;
use crate::densify::{
    build_schedule, compute_scores, densify_step, DensifyStepReport, ScoreView,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::SceneBundle;
use crate::loss;
use crate::model::{inverse_sigmoid, GaussianSet, OpacityMode};
use crate::optim::{self, AdamState};
use crate::render::{project, render};

/// Wall-clock seconds per training phase.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseTimings {
    pub forward: f64,
    pub backward: f64,
    pub optimizer: f64,
    pub densify: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Everything a training run reports besides the model itself.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub losses: Vec<f64>,
    pub densify_events: Vec<DensifyStepReport>,
    /// Highest live Gaussian count seen at any iteration.
    pub peak_live: usize,
    pub final_count: usize,
    pub high_opacity_switched_at: Option<usize>,
    /// Per-view metrics on the evaluation split (test views when present,
    /// training views otherwise).
    pub final_metrics: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub timings: PhaseTimings,
}

/// Active SH degree under the warm-up schedule.
pub fn active_sh_degree(config: &TrainConfig, iteration: usize) -> usize {
    if config.sh_warmup_interval == 0 {
        3
    } else {
        (iteration / config.sh_warmup_interval).min(3)
    }
}

/// Render one view of a model at full SH degree.
pub fn render_view(set: &GaussianSet, camera: &crate::Camera, background: [f64; 3]) -> Image {
    let splats = project(set, camera, 3);
    render(&splats, camera, background).image
}

fn sample_view_indices<R: Rng>(pool: &[usize], want: usize, rng: &mut R) -> Vec<usize> {
    let mut indices = pool.to_vec();
    let take = want.min(indices.len());
    for i in 0..take {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(take);
    indices
}

fn reset_opacities(set: &mut GaussianSet, adam: &mut AdamState) {
    match set.opacity_mode {
        OpacityMode::Sigmoid => {
            for raw in set.raw_opacities.iter_mut() {
                let clipped = crate::model::sigmoid(*raw).min(0.01);
                *raw = inverse_sigmoid(clipped);
            }
        }
        OpacityMode::HighOpacityAbs => {
            for raw in set.raw_opacities.iter_mut() {
                *raw = raw.abs().min(0.01);
            }
        }
    }
    adam.reset_opacity_moments();
}

/// Run the full training loop over a loaded scene.
pub fn train(scene: &SceneBundle, config: &TrainConfig) -> Result<(GaussianSet, RunReport)> {
    config.validate(scene.point_count())?;
    let train_views = scene.train_indices();
    if train_views.is_empty() {
        return Err(Error::data("scene has no training views"));
    }

    let mut set = crate::io::init_gaussians_from_sfm(scene);
    let schedule = if config.densify_steps() > 0 {
        Some(build_schedule(
            set.count,
            config.budget,
            config.densify_steps(),
            config.schedule,
        )?)
    } else {
        None
    };

    let mut adam = AdamState::new(set.count);
    let mut grad_stats = DensifyGradStats::zeros(set.count);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = scene.scene_extent;

    let mut report = RunReport {
        losses: Vec::with_capacity(config.total_iterations),
        densify_events: Vec::new(),
        peak_live: set.count,
        final_count: set.count,
        high_opacity_switched_at: None,
        final_metrics: Vec::new(),
        mean_psnr: 0.0,
        mean_ssim: 0.0,
        timings: PhaseTimings::default(),
    };

    let run_start = Instant::now();
    for iteration in 1..=config.total_iterations {
        let view = &scene.views[train_views[rng.gen_range(0..train_views.len())]];
        let sh_degree = active_sh_degree(config, iteration);

        let t0 = Instant::now();
        let splats = project(&set, &view.camera, sh_degree);
        let artifacts = render(&splats, &view.camera, config.background);
        let (loss_value, dl_dimage) =
            loss::photometric_loss(&artifacts.image, &view.image, config.ssim_loss_weight);
        report.timings.forward += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let grads: GaussianGrads = backward(
            config.backward_engine,
            &set,
            &view.camera,
            &artifacts,
            &splats,
            &dl_dimage,
            sh_degree,
        );
        grad_stats.accumulate(&grads, view.camera.width, view.camera.height);
        report.timings.backward += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        optim::step(&mut set, &mut adam, &grads, iteration, config, extent);
        if config.opacity_reset_interval != 0 && iteration % config.opacity_reset_interval == 0
        {
            reset_opacities(&mut set, &mut adam);
        }
        report.timings.optimizer += t2.elapsed().as_secs_f64();

        if let Some(schedule) = schedule.as_ref() {
            if config.is_densify_iteration(iteration) {
                let t3 = Instant::now();
                let step_index = config.densify_step_index(iteration);
                let picked = sample_view_indices(
                    &train_views,
                    config.sampled_view_count,
                    &mut rng,
                );
                let score_views: Vec<ScoreView> = picked
                    .iter()
                    .map(|&i| ScoreView {
                        camera: &scene.views[i].camera,
                        gt: &scene.views[i].image,
                        roi: scene.views[i].roi.as_ref(),
                    })
                    .collect();
                let scores =
                    compute_scores(&set, &score_views, config, &grad_stats, sh_degree)?;
                let event = densify_step(
                    &mut set,
                    schedule,
                    step_index,
                    &scores,
                    config,
                    &mut rng,
                    &mut adam,
                    &mut grad_stats,
                )?;
                report.densify_events.push(event);
                report.timings.densify += t3.elapsed().as_secs_f64();
            }
        }

        if optim::switch_to_high_opacity(&mut set, iteration, config) {
            report.high_opacity_switched_at = Some(iteration);
        }

        report.peak_live = report.peak_live.max(set.count);
        report.losses.push(loss_value);
    }
    report.timings.total = run_start.elapsed().as_secs_f64();
    report.final_count = set.count;

    // Final metrics on the evaluation split.
    let eval_indices = {
        let test = scene.test_indices();
        if test.is_empty() {
            train_views.clone()
        } else {
            test
        }
    };
    let (metrics, mean_psnr, mean_ssim) =
        metrics_over_views(&set, scene, &eval_indices, config.background);
    report.final_metrics = metrics;
    report.mean_psnr = mean_psnr;
    report.mean_ssim = mean_ssim;

    Ok((set, report))
}

fn metrics_over_views(
    set: &GaussianSet,
    scene: &SceneBundle,
    indices: &[usize],
    background: [f64; 3],
) -> (Vec<ViewMetrics>, f64, f64) {
    let mut metrics = Vec::with_capacity(indices.len());
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for &i in indices {
        let view = &scene.views[i];
        let rendered = render_view(set, &view.camera, background);
        let psnr = loss::psnr(&rendered, &view.image);
        let ssim = loss::ssim(&rendered, &view.image).0;
        psnr_sum += psnr;
        ssim_sum += ssim;
        metrics.push(ViewMetrics {
            name: view.name.clone(),
            psnr,
            ssim,
        });
    }
    let n = indices.len().max(1) as f64;
    (metrics, psnr_sum / n, ssim_sum / n)
}

/// Evaluate a model on the scene's test split.
pub fn evaluate(
    set: &GaussianSet,
    scene: &SceneBundle,
    background: [f64; 3],
) -> Result<(Vec<ViewMetrics>, f64, f64)> {
    let test = scene.test_indices();
    if test.is_empty() {
        return Err(Error::data("scene has no test split"));
    }
    Ok(metrics_over_views(set, scene, &test, background))
}

/// Mean PSNR over the training views (used by desk-scale checks).
pub fn train_view_psnr(set: &GaussianSet, scene: &SceneBundle, background: [f64; 3]) -> f64 {
    let idx = scene.train_indices();
    metrics_over_views(set, scene, &idx, background).1
}

/// Largest relative elementwise difference between two gradient sets,
/// with an absolute floor below which values count as equal.
pub fn max_relative_grad_difference(a: &GaussianGrads, b: &GaussianGrads, floor: f64) -> f64 {
    let pairs: [(&[f64], &[f64]); 10] = [
        (&a.mean2d, &b.mean2d),
        (&a.conic, &b.conic),
        (&a.alpha_base, &b.alpha_base),
        (&a.rgb, &b.rgb),
        (&a.positions, &b.positions),
        (&a.rotations, &b.rotations),
        (&a.log_scales, &b.log_scales),
        (&a.raw_opacities, &b.raw_opacities),
        (&a.sh_dc, &b.sh_dc),
        (&a.sh_rest, &b.sh_rest),
    ];
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        assert_eq!(x.len(), y.len());
        for (u, v) in x.iter().zip(y) {
            let denom = u.abs().max(v.abs()).max(floor);
            worst = worst.max((u - v).abs() / denom);
        }
    }
    worst
}

/// Largest per-attribute-group relative L2 distance between two models.
pub fn max_relative_param_difference(a: &GaussianSet, b: &GaussianSet) -> f64 {
    assert_eq!(a.count, b.count, "models differ in size");
    let pairs: [(&[f64], &[f64]); 6] = [
        (&a.positions, &b.positions),
        (&a.rotations, &b.rotations),
        (&a.log_scales, &b.log_scales),
        (&a.raw_opacities, &b.raw_opacities),
        (&a.sh_dc, &b.sh_dc),
        (&a.sh_rest, &b.sh_rest),
    ];
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (u, v) in x.iter().zip(y) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
        let denom = na.max(nb).sqrt().max(1e-9);
        worst = worst.max(diff.sqrt() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{make_synthetic_scene, SyntheticSpec};

    fn tiny_config(iterations: usize, budget: usize) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.total_iterations = iterations;
        cfg.budget = budget;
        cfg.densify_start = 10;
        cfg.densify_end = 40;
        cfg.densify_interval = 10;
        cfg.sampled_view_count = 3;
        cfg.high_opacity_switch_iteration = iterations / 2;
        cfg.sh_warmup_interval = 20;
        cfg.seed = 7;
        cfg
    }

    fn tiny_scene(seed: u64) -> (crate::io::SceneBundle, GaussianSet) {
        let spec = SyntheticSpec {
            gaussian_count: 5,
            camera_count: 4,
            resolution: 32,
            jitter: 0.02,
            test_split_stride: 4,
            ..SyntheticSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        make_synthetic_scene(&spec, &mut rng)
    }

    #[test]
    fn short_run_reaches_budget_and_is_reproducible() {
        let (scene, _) = tiny_scene(11);
        let cfg = tiny_config(60, 12);
        let (model_a, report_a) = train(&scene, &cfg).unwrap();
        let (model_b, _) = train(&scene, &cfg).unwrap();
        assert_eq!(model_a, model_b);
        assert_eq!(model_a.count, 12);
        assert_eq!(report_a.peak_live, 12);
        assert_eq!(report_a.losses.len(), 60);
        assert_eq!(report_a.high_opacity_switched_at, Some(30));
        assert!(model_a.opacity_mode == OpacityMode::HighOpacityAbs);
        for event in &report_a.densify_events {
            assert!(event.live_after <= event.target.max(event.live_before));
        }
    }

    #[test]
    fn budget_below_points_is_a_config_error() {
        let (scene, _) = tiny_scene(12);
        let cfg = tiny_config(20, 2);
        assert!(matches!(train(&scene, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn loss_decreases_on_average() {
        let (scene, _) = tiny_scene(13);
        let mut cfg = tiny_config(150, 10);
        cfg.densify_interval = 0; // isolate the optimizer
        let (_, report) = train(&scene, &cfg).unwrap();
        let head: f64 = report.losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = report.losses[130..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < 0.8 * head,
            "loss should shrink: head {head}, tail {tail}"
        );
    }

    #[test]
    fn evaluate_requires_a_test_split() {
        let spec = SyntheticSpec {
            camera_count: 3,
            test_split_stride: 0,
            ..SyntheticSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (scene, truth) = make_synthetic_scene(&spec, &mut rng);
        assert!(evaluate(&truth, &scene, spec.background).is_err());
    }

    #[test]
    fn evaluating_ground_truth_gives_perfect_metrics() {
        let (scene, truth) = tiny_scene(14);
        let (metrics, mean_psnr, mean_ssim) =
            evaluate(&truth, &scene, [0.0, 0.0, 0.0]).unwrap();
        assert!(!metrics.is_empty());
        assert!(mean_psnr.is_infinite());
        assert!((mean_ssim - 1.0).abs() < 1e-12);
    }
}
