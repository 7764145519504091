//! Latent-RANSAC: hypothesis filtering by collisions in a random-grid hash of
//! a latent model space, plus the classic RANSAC pipeline for comparison.

pub mod bench;
pub mod calibrate;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod solvers;
pub mod stopping;
pub mod synth;

pub use embedding::{EmbeddingConfig, LatentVector};
pub use engine::{estimate, DetectionModel, EstimateResult, EstimatorConfig, Mode, StopReason};
pub use error::{Error, Result};
pub use geometry::{Homography, Match2D, Match3D, MatchSet, Model, ProblemKind, RigidMotion};
pub use grid::{Collision, GridConfig, RandomGrid};
pub use synth::{synth, Instance, InstanceSpec};
