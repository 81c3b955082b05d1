//! Sparse recovery with periodic sketched ISTA and deep-unfolded parameters.
//!
//! The solver alternates full gradient steps `x − η Aᵀ(Ax − y)` with cheaper
//! sketched steps that only touch the precomputed `SA` and `Sy`. Step sizes and
//! thresholds are learned per iteration by reverse-mode differentiation through
//! the unrolled iterations ([`unfold`]). [`complexity`] counts the arithmetic of
//! each schedule and [`analysis`] evaluates the error bound and its assumptions.

pub mod analysis;
pub mod cli;
pub mod complexity;
pub mod config;
pub mod error;
pub mod model;
pub mod num;
pub mod sketch;
pub mod solver;
pub mod unfold;

pub use config::{ExperimentConfig, ParamsFile};
pub use error::{Error, Result};
pub use model::{Ensemble, MseCurve, MseMode, Problem, SignalModel, SystemSpec};
pub use num::{Matrix, Rng};
pub use sketch::{Sketch, SketchKind, SketchedSystem};
pub use solver::{Branch, ParamSchedule, Trajectory, Variant};
pub use unfold::{train, TrainConfig, TrainOutcome};
