//! Per-attribute Adam with batched higher-band SH updates and the
//! high-opacity activation switch.

use crate::backward::GaussianGrads;
use crate::config::{ShBatchGradMode, TrainConfig};
use crate::model::{sigmoid, GaussianSet, OpacityMode, SH_REST_DIM};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

/// Parameter groups with independent step counters and learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Position,
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
}

/// First/second moments per attribute group plus the gradient accumulator of
/// the batched SH group.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: [Vec<f64>; 6],
    v: [Vec<f64>; 6],
    steps: [u64; 6],
    sh_accum: Vec<f64>,
    sh_accum_count: usize,
}

const GROUP_STRIDES: [usize; 6] = [3, 4, 3, 1, 3, SH_REST_DIM];

fn group_index(group: Group) -> usize {
    match group {
        Group::Position => 0,
        Group::Rotation => 1,
        Group::Scale => 2,
        Group::Opacity => 3,
        Group::ShDc => 4,
        Group::ShRest => 5,
    }
}

impl AdamState {
    pub fn new(count: usize) -> Self {
        let make = |stride: usize| vec![0.0; stride * count];
        AdamState {
            m: [make(3), make(4), make(3), make(1), make(3), make(SH_REST_DIM)],
            v: [make(3), make(4), make(3), make(1), make(3), make(SH_REST_DIM)],
            steps: [0; 6],
            sh_accum: vec![0.0; SH_REST_DIM * count],
            sh_accum_count: 0,
        }
    }

    pub fn step_count(&self, group: Group) -> u64 {
        self.steps[group_index(group)]
    }

    /// Drop rows not in `survivors`, then append `added` zero-state rows.
    pub fn remap_rows(&mut self, survivors: &[usize], added: usize) {
        for gi in 0..6 {
            let stride = GROUP_STRIDES[gi];
            self.m[gi] = crate::model::gather(&self.m[gi], survivors, stride);
            self.v[gi] = crate::model::gather(&self.v[gi], survivors, stride);
            self.m[gi].extend(std::iter::repeat(0.0).take(stride * added));
            self.v[gi].extend(std::iter::repeat(0.0).take(stride * added));
        }
        self.sh_accum = crate::model::gather(&self.sh_accum, survivors, SH_REST_DIM);
        self.sh_accum
            .extend(std::iter::repeat(0.0).take(SH_REST_DIM * added));
    }

    /// Zero the opacity moments (used by the optional opacity reset).
    pub fn reset_opacity_moments(&mut self) {
        let gi = group_index(Group::Opacity);
        self.m[gi].iter_mut().for_each(|v| *v = 0.0);
        self.v[gi].iter_mut().for_each(|v| *v = 0.0);
    }

    fn update_group(&mut self, gi: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m[gi].len());
        self.steps[gi] += 1;
        let t = self.steps[gi] as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let m = &mut self.m[gi];
        let v = &mut self.v[gi];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Exponentially interpolated position learning rate over the run.
pub fn position_lr(config: &TrainConfig, scene_extent: f64, iteration: usize) -> f64 {
    let scale = if config.lr_position_scaled_by_extent {
        scene_extent
    } else {
        1.0
    };
    let init = config.lr_position_init * scale;
    let last = config.lr_position_final * scale;
    let t = (iteration as f64 / config.total_iterations as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + last.ln() * t).exp()
}

/// One optimizer step at `iteration` (1-based). All groups except the
/// higher SH bands update every call; `sh_rest` accumulates its gradient and
/// takes one step per `sh_batch_interval` iterations. Quaternions are
/// renormalized afterwards.
pub fn step(
    set: &mut GaussianSet,
    adam: &mut AdamState,
    grads: &GaussianGrads,
    iteration: usize,
    config: &TrainConfig,
    scene_extent: f64,
) {
    assert_eq!(grads.count, set.count, "gradient/model row mismatch");
    let pos_lr = position_lr(config, scene_extent, iteration);
    adam.update_group(0, &mut set.positions, &grads.positions, pos_lr);
    adam.update_group(1, &mut set.rotations, &grads.rotations, config.lr_rotation);
    adam.update_group(2, &mut set.log_scales, &grads.log_scales, config.lr_scale);
    adam.update_group(
        3,
        &mut set.raw_opacities,
        &grads.raw_opacities,
        config.lr_opacity,
    );
    adam.update_group(4, &mut set.sh_dc, &grads.sh_dc, config.lr_sh_dc);

    if config.sh_batch_interval <= 1 {
        adam.update_group(5, &mut set.sh_rest, &grads.sh_rest, config.lr_sh_rest);
    } else {
        match config.sh_batch_grad_mode {
            ShBatchGradMode::Latest => adam.sh_accum.copy_from_slice(&grads.sh_rest),
            _ => {
                for (a, g) in adam.sh_accum.iter_mut().zip(&grads.sh_rest) {
                    *a += g;
                }
            }
        }
        adam.sh_accum_count += 1;
        if iteration % config.sh_batch_interval == 0 {
            let scale = match config.sh_batch_grad_mode {
                ShBatchGradMode::Mean => 1.0 / adam.sh_accum_count as f64,
                ShBatchGradMode::Sum | ShBatchGradMode::Latest => 1.0,
            };
            let batched: Vec<f64> = adam.sh_accum.iter().map(|g| g * scale).collect();
            adam.update_group(5, &mut set.sh_rest, &batched, config.lr_sh_rest);
            adam.sh_accum.iter_mut().for_each(|v| *v = 0.0);
            adam.sh_accum_count = 0;
        }
    }

    set.renormalize_rotations();
}

/// Convert to high-opacity Gaussians at the configured iteration: the
/// activation becomes `abs` and every raw opacity is re-encoded so its
/// activated value is unchanged at the switch instant.
pub fn switch_to_high_opacity(
    set: &mut GaussianSet,
    iteration: usize,
    config: &TrainConfig,
) -> bool {
    if !config.high_opacity_enabled
        || set.opacity_mode != OpacityMode::Sigmoid
        || iteration != config.high_opacity_switch_iteration
    {
        return false;
    }
    for raw in set.raw_opacities.iter_mut() {
        *raw = sigmoid(*raw);
    }
    set.opacity_mode = OpacityMode::HighOpacityAbs;
    true
}
