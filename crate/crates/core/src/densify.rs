//! Budgeted, score-guided densification: growth schedule, multi-view
//! scoring, weighted candidate sampling, split/clone execution and
//! transparent-Gaussian pruning.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backward::DensifyGradStats;
use crate::camera::Camera;
use crate::config::{ScheduleKind, TrainConfig};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss;
use crate::model::{self, GaussianSet};
use crate::optim::AdamState;
use crate::render::{project, render, render_with_stats};

/// Scale divisor applied to both children of a split.
pub const SPLIT_SCALE_FACTOR: f64 = 1.6;

/// Precomputed cumulative Gaussian-count targets per densification step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthSchedule {
    pub initial: usize,
    pub budget: usize,
    /// `targets[k]` for k = 0..=steps; `targets[0] == initial`,
    /// `targets[steps] == budget`.
    pub targets: Vec<usize>,
}

impl GrowthSchedule {
    pub fn steps(&self) -> usize {
        self.targets.len() - 1
    }

    /// Target live count at step `k` (clamped to the final step).
    pub fn target(&self, k: usize) -> usize {
        self.targets[k.min(self.steps())]
    }
}

/// Build the growth schedule from the initial count `initial` to the budget
/// over `steps` densification events.
///
/// The vertex-form curve `T(k) = B - (B - S)(1 - k/N)^2` starts at the
/// initial count and peaks exactly at the budget; its increments shrink
/// toward zero. Integer targets are produced by flooring the real increments
/// and distributing the remainder over the earliest (largest) steps, which
/// keeps the increments non-increasing and the endpoints exact.
pub fn build_schedule(
    initial: usize,
    budget: usize,
    steps: usize,
    kind: ScheduleKind,
) -> Result<GrowthSchedule> {
    if budget < initial {
        return Err(Error::config(format!(
            "budget {budget} below initial count {initial}"
        )));
    }
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    let targets = match kind {
        ScheduleKind::Vertex => {
            let total = budget - initial;
            let n = steps as f64;
            let real = |k: usize| -> f64 {
                let u = 1.0 - k as f64 / n;
                budget as f64 - total as f64 * u * u
            };
            let mut increments: Vec<usize> = (0..steps)
                .map(|k| (real(k + 1) - real(k)).floor().max(0.0) as usize)
                .collect();
            let remainder = total - increments.iter().sum::<usize>();
            debug_assert!(remainder <= steps);
            for inc in increments.iter_mut().take(remainder) {
                *inc += 1;
            }
            let mut targets = Vec::with_capacity(steps + 1);
            let mut live = initial;
            targets.push(live);
            for inc in increments {
                live += inc;
                targets.push(live);
            }
            targets
        }
        ScheduleKind::PaperEq2 => {
            // Literal printed coefficients, kept for comparison only.
            let (b, s, n) = (budget as f64, initial as f64, steps as f64);
            (0..=steps)
                .map(|k| {
                    let x = k as f64;
                    let a = (b - s - 2.0 * n) / (n * n) * x * x + 2.0 * x + b;
                    a.round().max(0.0) as usize
                })
                .collect()
        }
    };
    Ok(GrowthSchedule {
        initial,
        budget,
        targets,
    })
}

/// Raw (pre-scaling) per-Gaussian component sums over the sampled views.
#[derive(Debug, Clone)]
pub struct ComponentTotals {
    pub grad: Vec<f64>,
    pub pix_count: Vec<f64>,
    pub dist: Vec<f64>,
    pub saliency: Vec<f64>,
    pub blend: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub scale_product: Vec<f64>,
}

/// Densification priorities: the final sampling weight per Gaussian plus the
/// raw component sums and the largest screen radius seen across the sampled
/// views (consumed by the split test).
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub raw: ComponentTotals,
    pub max_screen_radius: Vec<f64>,
}

/// One sampled view handed to the scorer.
pub struct ScoreView<'a> {
    pub camera: &'a Camera,
    pub gt: &'a Image,
    pub roi: Option<&'a Mask>,
}

/// Divide by the median of the nonzero entries, clamped to [0, 10]. Zero
/// entries stay zero; an all-zero vector is returned unchanged.
pub fn median_scale(values: &[f64]) -> Vec<f64> {
    let mut nonzero: Vec<f64> = values.iter().copied().filter(|v| *v != 0.0).collect();
    if nonzero.is_empty() {
        return values.to_vec();
    }
    nonzero.sort_by(f64::total_cmp);
    let mid = nonzero.len() / 2;
    let median = if nonzero.len() % 2 == 1 {
        nonzero[mid]
    } else {
        0.5 * (nonzero[mid - 1] + nonzero[mid])
    };
    values
        .iter()
        .map(|v| (v / median).clamp(0.0, 10.0))
        .collect()
}

/// Weighted sum of the median-scaled per-view components, multiplied by the
/// view's photometric loss.
pub fn combine_view_components(
    components: &[&[f64]; 8],
    weights: &[f64; 8],
    photometric: f64,
    out: &mut [f64],
) {
    for (component, weight) in components.iter().zip(weights) {
        if *weight == 0.0 {
            continue;
        }
        let scaled = median_scale(component);
        for (o, s) in out.iter_mut().zip(&scaled) {
            *o += photometric * weight * s;
        }
    }
}

/// Evaluate the eight-component score over the sampled views.
pub fn compute_scores(
    set: &GaussianSet,
    views: &[ScoreView<'_>],
    config: &TrainConfig,
    grad_stats: &DensifyGradStats,
    sh_degree: usize,
) -> Result<ScoreReport> {
    if views.is_empty() {
        return Err(Error::config("scoring needs at least one sampled view"));
    }
    let n = set.count;
    let weights = config.score_weights.as_array();
    let mut scores = vec![0.0; n];
    let mut max_radius = vec![0.0f64; n];
    let mut raw = ComponentTotals {
        grad: vec![0.0; n],
        pix_count: vec![0.0; n],
        dist: vec![0.0; n],
        saliency: vec![0.0; n],
        blend: vec![0.0; n],
        depth: vec![0.0; n],
        opacity: vec![0.0; n],
        scale_product: vec![0.0; n],
    };

    let grad_avg: Vec<f64> = (0..n).map(|g| grad_stats.average(g)).collect();
    let opacity: Vec<f64> = (0..n).map(|g| set.opacity(g)).collect();
    let scale_product: Vec<f64> = (0..n)
        .map(|g| {
            let s = set.scales(g);
            s.x * s.y * s.z
        })
        .collect();

    for view in views {
        let splats = project(set, view.camera, sh_degree);
        let first = render(&splats, view.camera, config.background);
        let sal = loss::saliency(
            view.gt,
            &first.image,
            view.roi,
            config.saliency_lambda1,
            config.saliency_lambda2,
        );
        let (_, stats) = render_with_stats(&splats, view.camera, config.background, &sal, n);
        let photometric = loss::l1_loss(&first.image, view.gt).0;

        for splat in &splats {
            let g = splat.gaussian_index as usize;
            max_radius[g] = max_radius[g].max(splat.screen_radius);
        }

        let components: [&[f64]; 8] = [
            &grad_avg,
            &stats.pixel_count,
            &stats.distance_sum,
            &stats.saliency_sum,
            &stats.blend_weight_sum,
            &stats.depth,
            &opacity,
            &scale_product,
        ];
        combine_view_components(&components, &weights, photometric, &mut scores);

        for g in 0..n {
            raw.grad[g] += grad_avg[g];
            raw.pix_count[g] += stats.pixel_count[g];
            raw.dist[g] += stats.distance_sum[g];
            raw.saliency[g] += stats.saliency_sum[g];
            raw.blend[g] += stats.blend_weight_sum[g];
            raw.depth[g] += stats.depth[g];
            raw.opacity[g] += opacity[g];
            raw.scale_product[g] += scale_product[g];
        }
    }

    debug_assert!(scores.iter().all(|s| s.is_finite() && *s >= 0.0));
    Ok(ScoreReport {
        scores,
        raw,
        max_screen_radius: max_radius,
    })
}

/// Draw `count` indices with probability proportional to `weights`.
///
/// Without replacement this uses exponential keys (`-ln(u) / w`, smallest
/// first); zero-weight entries rank behind every positive one. The draw
/// order is one uniform per entry, in index order.
pub fn sample_candidates<R: Rng>(
    weights: &[f64],
    count: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::data("sampling weights sum to zero"));
    }
    if with_replacement {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cumulative.push(acc);
        }
        let picks = (0..count)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..total);
                cumulative.partition_point(|c| *c <= u).min(weights.len() - 1)
            })
            .collect();
        return Ok(picks);
    }
    if count > weights.len() {
        return Err(Error::data(format!(
            "cannot sample {count} of {} without replacement",
            weights.len()
        )));
    }
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let key = if *w > 0.0 { -u.ln() / w } else { f64::INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(count).map(|(_, i)| i).collect())
}

/// What one densification event did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DensifyStepReport {
    pub step_index: usize,
    pub target: usize,
    pub live_before: usize,
    pub pruned: usize,
    pub added: usize,
    pub split: usize,
    pub cloned: usize,
    pub live_after: usize,
}

/// Execute one densification event: prune transparent Gaussians, then add
/// exactly `target - live` primitives chosen by score. Candidates above the
/// gradient threshold split (two children sampled from the parent density,
/// scales shrunk) or clone depending on the radius test; candidates below it
/// clone in place so the step always lands on the scheduled target.
///
/// Optimizer moments and the gradient window are kept row-consistent:
/// surviving rows carry their state, new rows start from zero.
#[allow(clippy::too_many_arguments)]
pub fn densify_step<R: Rng>(
    set: &mut GaussianSet,
    schedule: &GrowthSchedule,
    step_index: usize,
    report: &ScoreReport,
    config: &TrainConfig,
    rng: &mut R,
    adam: &mut AdamState,
    grad_stats: &mut DensifyGradStats,
) -> Result<DensifyStepReport> {
    let live_before = set.count;
    if step_index > schedule.steps() {
        return Ok(DensifyStepReport {
            step_index,
            target: schedule.budget,
            live_before,
            pruned: 0,
            added: 0,
            split: 0,
            cloned: 0,
            live_after: live_before,
        });
    }
    let target = schedule.target(step_index);
    let grad_avg: Vec<f64> = (0..set.count).map(|g| grad_stats.average(g)).collect();

    // Prune transparent Gaussians first.
    let survivors: Vec<usize> = (0..set.count)
        .filter(|&g| set.opacity(g) >= config.prune_opacity_epsilon)
        .collect();
    let pruned = set.count - survivors.len();
    if pruned > 0 {
        set.retain_rows(&survivors);
        adam.remap_rows(&survivors, 0);
    }
    let scores: Vec<f64> = survivors.iter().map(|&g| report.scores[g]).collect();
    let radii: Vec<f64> = survivors
        .iter()
        .map(|&g| report.max_screen_radius[g])
        .collect();
    let grads: Vec<f64> = survivors.iter().map(|&g| grad_avg[g]).collect();

    let to_add = target.saturating_sub(set.count);
    let mut split = 0;
    let mut cloned = 0;
    if to_add > 0 {
        // Budget attainment is unconditional: when a step must add more than
        // the live count, whole passes pick every live Gaussian once (no
        // draws) and only the remainder is sampled.
        let candidates = if config.sample_with_replacement || to_add <= set.count {
            sample_candidates(&scores, to_add, config.sample_with_replacement, rng)?
        } else {
            let live = set.count;
            let mut picks = Vec::with_capacity(to_add);
            for _ in 0..to_add / live {
                picks.extend(0..live);
            }
            picks.extend(sample_candidates(&scores, to_add % live, false, rng)?);
            picks
        };
        let mut split_parents = vec![false; set.count];
        let count_before_appends = set.count;
        for c in candidates {
            let wants_split = grads[c] > config.gradient_threshold && {
                let metric = if config.radius_test_world {
                    let s = set.scales(c);
                    s.x.max(s.y).max(s.z)
                } else {
                    radii[c]
                };
                metric > config.radius_threshold
            };
            if wants_split && !split_parents[c] {
                split_parents[c] = true;
                split += 1;
                for _ in 0..2 {
                    let child = set.push_copy_of(c);
                    let rot = model::rotation_matrix(&set.rotation(c));
                    let scales = set.scales(c);
                    let mut draw = || -> f64 { StandardNormal.sample(rng) };
                    let eps = nalgebra::Vector3::new(draw(), draw(), draw());
                    let offset = rot * nalgebra::Vector3::new(
                        scales.x * eps.x,
                        scales.y * eps.y,
                        scales.z * eps.z,
                    );
                    for k in 0..3 {
                        set.positions[3 * child + k] += offset[k];
                        set.log_scales[3 * child + k] -= SPLIT_SCALE_FACTOR.ln();
                    }
                }
            } else {
                // Exact duplicate; also the fallback below the gradient
                // threshold and for re-sampled split parents.
                set.push_copy_of(c);
                cloned += 1;
            }
        }
        // Remove split parents; appended rows all survive.
        let keep: Vec<usize> = (0..count_before_appends)
            .filter(|&g| !split_parents[g])
            .chain(count_before_appends..set.count)
            .collect();
        let appended = set.count - count_before_appends;
        set.retain_rows(&keep);
        adam.remap_rows(&keep[..count_before_appends - split], appended);
    }

    grad_stats.reset(set.count);
    let live_after = set.count;
    debug_assert!(live_after <= target.max(live_before));
    Ok(DensifyStepReport {
        step_index,
        target,
        live_before,
        pruned,
        added: live_after + pruned - live_before,
        split,
        cloned,
        live_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_zero_growth() {
        let s = build_schedule(1000, 1000, 5, ScheduleKind::Vertex).unwrap();
        assert!(s.targets.iter().all(|t| *t == 1000));
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = build_schedule(100, 500, 2, ScheduleKind::Vertex).unwrap();
        assert_eq!(s.targets, vec![100, 400, 500]);
    }

    #[test]
    fn schedule_rejects_budget_below_initial() {
        assert!(build_schedule(10, 5, 3, ScheduleKind::Vertex).is_err());
    }

    #[test]
    fn schedule_increments_non_increasing_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let s = rng.gen_range(1..5000usize);
            let b = s + rng.gen_range(0..20000usize);
            let n = rng.gen_range(1..80usize);
            let sched = build_schedule(s, b, n, ScheduleKind::Vertex).unwrap();
            assert_eq!(sched.targets[0], s);
            assert_eq!(*sched.targets.last().unwrap(), b);
            let mut prev_inc = usize::MAX;
            for w in sched.targets.windows(2) {
                let inc = w[1] - w[0];
                assert!(inc <= prev_inc, "increments must not grow: {sched:?}");
                prev_inc = inc;
            }
        }
    }

    #[test]
    fn paper_eq2_schedule_is_literal() {
        let s = build_schedule(100, 500, 2, ScheduleKind::PaperEq2).unwrap();
        // A(0) = B, A(N) = 2B - S for the printed coefficients.
        assert_eq!(s.targets[0], 500);
        assert_eq!(s.targets[2], 900);
    }

    #[test]
    fn median_scaling_normalizes_uniform_rescaling() {
        let v = vec![0.0, 2.0, 4.0, 8.0, 1.0];
        let a = median_scale(&v);
        let scaled: Vec<f64> = v.iter().map(|x| x * 7.3).collect();
        let b = median_scale(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // Zeros stay zero, values are clamped to [0, 10].
        assert_eq!(a[0], 0.0);
        assert!(a.iter().all(|x| *x <= 10.0));
        let spiky = vec![1.0, 1.0, 1000.0];
        assert_eq!(median_scale(&spiky)[2], 10.0);
    }

    #[test]
    fn combine_is_invariant_to_component_rescaling() {
        let comp_a = vec![1.0, 2.0, 3.0, 4.0];
        let comp_b = vec![0.5, 0.0, 1.5, 2.5];
        let weights = [2.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let zeros = vec![0.0; 4];
        let mut out1 = vec![0.0; 4];
        combine_view_components(
            &[&comp_a, &comp_b, &zeros, &zeros, &zeros, &zeros, &zeros, &zeros],
            &weights,
            0.7,
            &mut out1,
        );
        let comp_a_scaled: Vec<f64> = comp_a.iter().map(|v| v * 123.0).collect();
        let mut out2 = vec![0.0; 4];
        combine_view_components(
            &[
                &comp_a_scaled,
                &comp_b,
                &zeros,
                &zeros,
                &zeros,
                &zeros,
                &zeros,
                &zeros,
            ],
            &weights,
            0.7,
            &mut out2,
        );
        for (x, y) in out1.iter().zip(&out2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sample_candidates(&[1.0, 2.0], 0, false, &mut rng)
            .unwrap()
            .is_empty());
        let only = sample_candidates(&[0.0, 5.0, 0.0], 1, false, &mut rng).unwrap();
        assert_eq!(only, vec![1]);
        assert!(sample_candidates(&[1.0], 2, false, &mut rng).is_err());
        assert!(sample_candidates(&[0.0, 0.0], 1, false, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let weights: Vec<f64> = (1..40).map(|i| i as f64).collect();
        let a = sample_candidates(&weights, 10, false, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let b = sample_candidates(&weights, 10, false, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combine_with_unit_medians_is_the_plain_weighted_sum() {
        // Three Gaussians with the middle value pinned at 1: every component
        // median is 1, no value exceeds the clamp, so the score is exactly
        // P_i times the weighted component sum.
        let comps: [Vec<f64>; 8] = [
            vec![0.5, 1.0, 1.5],
            vec![0.25, 1.0, 2.0],
            vec![0.4, 1.0, 3.0],
            vec![0.75, 1.0, 1.25],
            vec![0.1, 1.0, 9.0],
            vec![0.9, 1.0, 1.1],
            vec![0.6, 1.0, 4.0],
            vec![0.3, 1.0, 2.5],
        ];
        let weights = [50.0, 0.1, 50.0, 10.0, 50.0, 5.0, 100.0, 25.0];
        let p = 0.37;
        let refs: [&[f64]; 8] = std::array::from_fn(|i| comps[i].as_slice());
        let mut out = vec![0.0; 3];
        combine_view_components(&refs, &weights, p, &mut out);
        for g in 0..3 {
            let expect: f64 = (0..8).map(|k| weights[k] * comps[k][g]).sum::<f64>() * p;
            assert!((out[g] - expect).abs() < 1e-9, "{} vs {expect}", out[g]);
        }
    }

    fn two_gaussian_scene() -> (GaussianSet, crate::camera::Camera) {
        let mut set = GaussianSet::with_count(2);
        // Identical Gaussians at mirrored, non-overlapping positions, so
        // their footprints never interact through the blending order.
        for (i, x) in [(0usize, -0.45f64), (1, 0.45)] {
            set.positions[3 * i] = x;
            set.positions[3 * i + 2] = 3.0;
            for k in 0..3 {
                set.log_scales[3 * i + k] = 0.06f64.ln();
            }
            set.raw_opacities[i] = 1.0;
            set.sh_dc[3 * i] = 0.5;
        }
        let camera = crate::camera::Camera::new(
            32,
            32,
            30.0,
            30.0,
            16.0,
            16.0,
            nalgebra::Matrix3::identity(),
            nalgebra::Vector3::zeros(),
        );
        (set, camera)
    }

    fn config_for_scores() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.budget = 100;
        cfg.radius_threshold = 1.0;
        cfg
    }

    #[test]
    fn symmetric_gaussians_score_identically() {
        let (set, camera) = two_gaussian_scene();
        let gt = Image::filled(32, 32, [0.3, 0.3, 0.3]);
        let cfg = config_for_scores();
        let stats = DensifyGradStats::zeros(2);
        let view = ScoreView {
            camera: &camera,
            gt: &gt,
            roi: None,
        };
        let report = compute_scores(&set, &[view], &cfg, &stats, 0).unwrap();
        assert!((report.scores[0] - report.scores[1]).abs() < 1e-9);
        assert!(report.scores[0] > 0.0);
    }

    #[test]
    fn out_of_frustum_gaussian_has_zero_view_components() {
        let (mut set, camera) = two_gaussian_scene();
        set.positions[3 + 2] = -4.0; // second Gaussian behind the camera
        let gt = Image::filled(32, 32, [0.3, 0.3, 0.3]);
        let cfg = config_for_scores();
        let stats = DensifyGradStats::zeros(2);
        let view = ScoreView {
            camera: &camera,
            gt: &gt,
            roi: None,
        };
        let report = compute_scores(&set, &[view], &cfg, &stats, 0).unwrap();
        assert_eq!(report.raw.pix_count[1], 0.0);
        assert_eq!(report.raw.dist[1], 0.0);
        assert_eq!(report.raw.saliency[1], 0.0);
        assert_eq!(report.raw.blend[1], 0.0);
        assert_eq!(report.raw.depth[1], 0.0);
        // Opacity and scale still contribute to the final score.
        assert!(report.scores[1] > 0.0);
        assert!(report.raw.opacity[1] > 0.0);
        assert!(report.raw.scale_product[1] > 0.0);
    }

    #[test]
    fn empty_view_list_is_rejected() {
        let (set, _) = two_gaussian_scene();
        let cfg = config_for_scores();
        let stats = DensifyGradStats::zeros(2);
        assert!(compute_scores(&set, &[], &cfg, &stats, 0).is_err());
    }

    fn run_step(
        set: &mut GaussianSet,
        schedule: &GrowthSchedule,
        step: usize,
        cfg: &TrainConfig,
        grad_avg: f64,
    ) -> DensifyStepReport {
        let n = set.count;
        let report = ScoreReport {
            scores: vec![1.0; n],
            raw: ComponentTotals {
                grad: vec![0.0; n],
                pix_count: vec![0.0; n],
                dist: vec![0.0; n],
                saliency: vec![0.0; n],
                blend: vec![0.0; n],
                depth: vec![0.0; n],
                opacity: vec![0.0; n],
                scale_product: vec![0.0; n],
            },
            max_screen_radius: vec![5.0; n],
        };
        let mut adam = AdamState::new(n);
        let mut stats = DensifyGradStats::zeros(n);
        for g in 0..n {
            stats.norm_sum[g] = grad_avg;
            stats.hits[g] = 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        densify_step(set, schedule, step, &report, cfg, &mut rng, &mut adam, &mut stats)
            .unwrap()
    }

    #[test]
    fn step_adds_exactly_the_target_difference() {
        let (set, _) = two_gaussian_scene();
        let mut set = set;
        for _ in 0..98 {
            set.push_copy_of(0);
        }
        assert_eq!(set.count, 100);
        let schedule = build_schedule(100, 200, 4, ScheduleKind::Vertex).unwrap();
        let mut cfg = config_for_scores();
        cfg.gradient_threshold = 1e9; // force in-place clones
        let target = schedule.target(1);
        let event = run_step(&mut set, &schedule, 1, &cfg, 0.0);
        assert_eq!(event.target, target);
        assert_eq!(event.added, target - 100);
        assert_eq!(event.live_after, target);
        assert_eq!(set.count, target);
        assert_eq!(event.split, 0);
    }

    #[test]
    fn step_with_live_at_target_adds_nothing() {
        let (mut set, _) = two_gaussian_scene();
        let schedule = build_schedule(2, 2, 3, ScheduleKind::Vertex).unwrap();
        let cfg = config_for_scores();
        let event = run_step(&mut set, &schedule, 1, &cfg, 0.0);
        assert_eq!(event.added, 0);
        assert_eq!(set.count, 2);
    }

    #[test]
    fn clone_renders_identically_to_its_parent() {
        let (set, camera) = two_gaussian_scene();
        let mut set = set;
        set.retain_rows(&[0]);
        let schedule = build_schedule(1, 2, 1, ScheduleKind::Vertex).unwrap();
        let mut cfg = config_for_scores();
        cfg.gradient_threshold = 1e9; // below threshold: clone in place
        let parent = set.clone();
        let event = run_step(&mut set, &schedule, 1, &cfg, 0.0);
        assert_eq!(event.cloned, 1);
        assert_eq!(set.count, 2);
        let mut child = set.clone();
        child.retain_rows(&[1]);
        let render_one = |s: &GaussianSet| {
            let splats = crate::render::project(s, &camera, 3);
            crate::render::render(&splats, &camera, [0.0; 3]).image.data
        };
        assert_eq!(render_one(&parent), render_one(&child));
    }

    #[test]
    fn split_replaces_parent_with_two_smaller_children() {
        let (set, _) = two_gaussian_scene();
        let mut set = set;
        set.retain_rows(&[0]);
        let parent_log_scale = set.log_scales[0];
        let schedule = build_schedule(1, 2, 1, ScheduleKind::Vertex).unwrap();
        let mut cfg = config_for_scores();
        cfg.gradient_threshold = 1e-9;
        cfg.radius_threshold = 1e-9; // force the split branch
        let event = run_step(&mut set, &schedule, 1, &cfg, 1.0);
        assert_eq!(event.split, 1);
        assert_eq!(event.cloned, 0);
        assert_eq!(set.count, 2);
        for child in 0..2 {
            assert!(
                (set.log_scales[3 * child] - (parent_log_scale - SPLIT_SCALE_FACTOR.ln()))
                    .abs()
                    < 1e-12
            );
        }
        // Children positions differ (sampled from the parent density).
        assert_ne!(set.position(0), set.position(1));
    }

    #[test]
    fn oversized_step_runs_full_passes_plus_a_sampled_remainder() {
        // Adding more than the live count: 2 -> 9 in one step is three full
        // passes over both Gaussians plus one sampled remainder.
        let (mut set, _) = two_gaussian_scene();
        let schedule = build_schedule(2, 9, 1, ScheduleKind::Vertex).unwrap();
        let mut cfg = config_for_scores();
        cfg.gradient_threshold = 1e9;
        let event = run_step(&mut set, &schedule, 1, &cfg, 0.0);
        assert_eq!(event.added, 7);
        assert_eq!(event.live_after, 9);
        assert_eq!(set.count, 9);
    }

    #[test]
    fn transparent_gaussians_are_pruned_first() {
        let (mut set, _) = two_gaussian_scene();
        set.raw_opacities[1] = inverse_sigmoid_raw(0.001);
        let schedule = build_schedule(2, 4, 1, ScheduleKind::Vertex).unwrap();
        let mut cfg = config_for_scores();
        cfg.gradient_threshold = 1e9;
        // One survivor must supply three additions.
        cfg.sample_with_replacement = true;
        let event = run_step(&mut set, &schedule, 1, &cfg, 0.0);
        assert_eq!(event.pruned, 1);
        assert_eq!(event.added, 3);
        assert_eq!(event.live_after, 4);
        assert_eq!(set.count, 4);
        // The transparent Gaussian is gone: all survivors are copies of row 0.
        assert!(set.raw_opacities.iter().all(|r| *r == 1.0));
    }

    fn inverse_sigmoid_raw(v: f64) -> f64 {
        crate::model::inverse_sigmoid(v)
    }

    #[test]
    fn sampling_matches_weights_frequencies() {
        // Weights (1, 1, 2): draws of size 1 should land ~ (0.25, 0.25, 0.5).
        let weights = [1.0, 1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let pick = sample_candidates(&weights, 1, false, &mut rng).unwrap()[0];
            counts[pick] += 1;
        }
        let expected = [0.25 * n as f64, 0.25 * n as f64, 0.5 * n as f64];
        for (c, e) in counts.iter().zip(&expected) {
            let sigma = (e * (1.0 - e / n as f64)).sqrt();
            assert!(
                (*c as f64 - e).abs() < 3.0 * sigma,
                "count {c} vs expected {e} (3 sigma {sigma})"
            );
        }
    }
}
