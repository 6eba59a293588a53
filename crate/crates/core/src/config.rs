//! Training configuration and its on-disk representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into run-configuration files.
pub const RUN_CONFIG_VERSION: u32 = 1;

/// Which gradient engine drives backpropagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackwardEngine {
    /// Reference traversal: walk pixels, iterate splats back to front.
    PerPixel,
    /// Bucketed traversal: walk 32-splat buckets front to back from stored
    /// pixel-state checkpoints.
    PerSplat,
}

/// Growth-curve variant for the densification schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Vertex-form parabola from the initial count to the budget, with the
    /// peak exactly at the budget.
    Vertex,
    /// Literal quadratic `(B - S - 2N)/N^2 * k^2 + 2k + B`, kept for
    /// comparison; does not honor the endpoint constraints.
    PaperEq2,
}

/// Weights of the eight per-Gaussian score components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub grad: f64,
    pub pix: f64,
    pub dist: f64,
    pub sal: f64,
    pub blend: f64,
    pub depth: f64,
    pub opac: f64,
    pub scale: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            grad: 50.0,
            pix: 0.1,
            dist: 50.0,
            sal: 10.0,
            blend: 50.0,
            depth: 5.0,
            opac: 100.0,
            scale: 25.0,
        }
    }
}

impl ScoreWeights {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.grad, self.pix, self.dist, self.sal, self.blend, self.depth, self.opac,
            self.scale,
        ]
    }
}

/// How the accumulated higher-band SH gradients enter the batched step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShBatchGradMode {
    Mean,
    Sum,
    Latest,
}

/// Full training configuration. Serialized as a versioned TOML file so a run
/// can be replayed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    pub total_iterations: usize,

    // Densification window and cadence.
    pub densify_interval: usize,
    pub densify_start: usize,
    pub densify_end: usize,
    /// Exact final Gaussian count.
    pub budget: usize,
    pub schedule: ScheduleKind,
    pub prune_opacity_epsilon: f64,
    /// Averaged positional-gradient threshold separating split/clone
    /// candidates from in-place clones.
    pub gradient_threshold: f64,
    /// Radius threshold of the split test.
    pub radius_threshold: f64,
    /// Compare world-space scale instead of screen radius in the split test.
    pub radius_test_world: bool,
    /// Sample densification candidates with replacement.
    pub sample_with_replacement: bool,
    pub sampled_view_count: usize,
    pub score_weights: ScoreWeights,
    pub saliency_lambda1: f64,
    pub saliency_lambda2: f64,
    /// Re-enable the periodic opacity reset of the evolutionary pipeline
    /// (off by default; it fights a constructive schedule).
    pub opacity_reset_interval: usize,

    // Optimizer.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    /// Multiplied by the scene extent to obtain the absolute position rates.
    pub lr_position_scaled_by_extent: bool,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub sh_batch_interval: usize,
    pub sh_batch_grad_mode: ShBatchGradMode,
    /// Active SH degree rises by one every this many iterations (0 keeps
    /// all bands active from the start).
    pub sh_warmup_interval: usize,

    // High-opacity conversion.
    pub high_opacity_switch_iteration: usize,
    pub high_opacity_enabled: bool,

    // Loss.
    pub ssim_loss_weight: f64,

    pub backward_engine: BackwardEngine,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: RUN_CONFIG_VERSION,
            total_iterations: 30_000,
            densify_interval: 500,
            densify_start: 500,
            densify_end: 15_000,
            budget: 0,
            schedule: ScheduleKind::Vertex,
            prune_opacity_epsilon: 0.005,
            gradient_threshold: 2e-4,
            radius_threshold: 0.0,
            radius_test_world: false,
            sample_with_replacement: false,
            sampled_view_count: 10,
            score_weights: ScoreWeights::default(),
            saliency_lambda1: 0.5,
            saliency_lambda2: 0.5,
            opacity_reset_interval: 0,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_position_scaled_by_extent: true,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 0.025,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 1e-3,
            sh_batch_interval: 16,
            sh_batch_grad_mode: ShBatchGradMode::Mean,
            sh_warmup_interval: 1000,
            high_opacity_switch_iteration: 15_000,
            high_opacity_enabled: true,
            ssim_loss_weight: 0.2,
            backward_engine: BackwardEngine::PerSplat,
            background: [0.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Number of densification events inside the window.
    pub fn densify_steps(&self) -> usize {
        if self.densify_interval == 0 || self.densify_end < self.densify_start {
            return 0;
        }
        (self.densify_end - self.densify_start) / self.densify_interval + 1
    }

    /// Whether `iteration` (1-based) is a densification event.
    pub fn is_densify_iteration(&self, iteration: usize) -> bool {
        self.densify_interval != 0
            && iteration >= self.densify_start
            && iteration <= self.densify_end
            && (iteration - self.densify_start) % self.densify_interval == 0
    }

    /// Schedule step index (1-based) of a densification iteration.
    pub fn densify_step_index(&self, iteration: usize) -> usize {
        debug_assert!(self.is_densify_iteration(iteration));
        (iteration - self.densify_start) / self.densify_interval + 1
    }

    /// Default radius threshold: 1% of the scene extent.
    pub fn derive_radius_threshold(&mut self, scene_extent: f64) {
        if self.radius_threshold == 0.0 {
            self.radius_threshold = 0.01 * scene_extent;
        }
    }

    pub fn validate(&self, initial_points: usize) -> Result<()> {
        if self.budget < initial_points {
            return Err(Error::config(format!(
                "budget {} is below the initial point count {}",
                self.budget, initial_points
            )));
        }
        if self.total_iterations == 0 {
            return Err(Error::config("total_iterations must be positive"));
        }
        if self.densify_interval != 0 {
            if self.densify_end < self.densify_start {
                return Err(Error::config("densify window is empty"));
            }
            if (self.densify_end - self.densify_start) % self.densify_interval != 0 {
                return Err(Error::config(
                    "densify_interval must divide the densification window",
                ));
            }
        }
        if self.sampled_view_count == 0 {
            return Err(Error::config("sampled_view_count must be positive"));
        }
        let w = self.score_weights.as_array();
        if w.iter().any(|v| *v < 0.0) {
            return Err(Error::config("score weights must be non-negative"));
        }
        if self.saliency_lambda1 < 0.0 || self.saliency_lambda2 < 0.0 {
            return Err(Error::config("saliency lambdas must be non-negative"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad run config: {e}")))?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported run config version {} (expected {})",
                cfg.version, RUN_CONFIG_VERSION
            )));
        }
        Ok(cfg)
    }
}
