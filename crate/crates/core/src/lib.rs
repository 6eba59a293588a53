//! Deterministic CPU training engine for 3D Gaussian splatting with an
//! exact, user-set primitive budget.
//!
//! The pipeline: project Gaussians into a view ([`render::project`]), blend
//! them tile by tile ([`render::render`]), differentiate the image loss
//! ([`loss`]), backpropagate with one of two equivalent engines
//! ([`backward`]), step a per-attribute Adam ([`optim`]) and grow the model
//! along a precomputed schedule toward the budget ([`densify`]).

pub mod backward;
pub mod camera;
pub mod config;
pub mod densify;
pub mod error;
pub mod image;
pub mod io;
pub mod loss;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod render;
pub mod sh;
pub mod train;

pub use camera::Camera;
pub use config::{BackwardEngine, ScheduleKind, ScoreWeights, TrainConfig};
pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use model::{GaussianSet, OpacityMode};
