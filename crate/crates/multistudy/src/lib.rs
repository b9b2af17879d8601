//! Merge-vs-ensemble analysis for collections of related linear regression
//! studies.
//!
//! Given several training studies that share a mean model but may differ
//! through random coefficient perturbations, this crate answers a practical
//! question: is it better to pool all rows into one merged fit, or to fit each
//! study separately and average the predictions? The answer depends on how
//! heterogeneous the studies are, and the crate provides:
//!
//! * analytic excess prediction error for merged and ensembled least-squares
//!   and ridge learners ([`error_theory`]),
//! * closed-form transition points and intervals in the heterogeneity scale
//!   at which ensembling overtakes merging ([`transition`]),
//! * optimal ensemble weights and the corresponding optimally-weighted
//!   transition point ([`weights`]),
//! * a method-of-moments estimator for the heterogeneity level on real data
//!   ([`varcomp`]),
//! * a deterministic Monte Carlo harness that verifies the analytic theory
//!   and locates empirical crossings ([`simulation`]).
//!
//! The crate is `no_std`-compatible (with `alloc`); the companion CLI crate
//! adds file formats and a command-line front end.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod error_theory;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod simulation;
pub mod transition;
pub mod varcomp;
pub mod weights;

pub use error::{Error, Result};
pub use estimators::{EnsembleWeights, Learner, LearnerFit, LearnerKind, RidgeConfig, ScalingMode};
pub use model::{
    generate_study, heterogeneity_summary, stack_studies, GeneratorConfig, HeterogeneitySummary,
    RandomEffectsStructure, StudyData,
};
pub use simulation::{
    compare_at, crossing_from_curve, empirical_transition, run_sweep, ArmStats, CurveSign,
    EmpiricalTransition, FlatRow, LearnerPoint, LearnerTau, PointResult, PointSpec, SweepConfig,
    SweepResult, WeightScheme,
};
pub use transition::{recommend, Recommendation, TransitionKind, TransitionResult};
pub use varcomp::{estimate_varcomp, PerCoefficient, VarCompEstimate};
pub use weights::OptimalWeights;
