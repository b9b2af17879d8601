//! Error type shared by all modules.

use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Everything that can go wrong while validating inputs or evaluating the
/// analytic formulas.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A study collection was empty where at least one study is required.
    #[error("empty study collection")]
    EmptyStudies,

    /// Two inputs that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    /// A NaN or infinity was found where finite data is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A symmetric system was singular or too ill-conditioned to solve.
    #[error("singular or near-singular {context}: condition number {cond:.3e} exceeds 1e15")]
    SingularSystem { context: String, cond: f64 },

    /// Inverse-standard-deviation scaling hit a constant column.
    #[error("degenerate scaling: design column {column} has zero standard deviation")]
    DegenerateScaling { column: usize },

    /// A variance parameter was negative or non-finite.
    #[error("invalid variance {value}: variances must be finite and non-negative")]
    InvalidVariance { value: f64 },

    /// Ensemble weights did not sum to one within tolerance.
    #[error("ensemble weights sum to {sum}, expected 1 within 1e-8")]
    WeightSum { sum: f64 },

    /// A study index fell outside the configured collection.
    #[error("study index {index} out of range for {count} studies")]
    StudyIndex { index: usize, count: usize },

    /// An operation needs more studies than were supplied.
    #[error("need at least {needed} studies, found {found}")]
    InsufficientStudies { needed: usize, found: usize },

    /// A study has too few rows for the requested fit.
    #[error("insufficient data in {context}: {detail}")]
    InsufficientData { context: String, detail: String },

    /// A closed-form expression degenerated (zero denominator or similar).
    #[error("degenerate system in {context}")]
    DegenerateSystem { context: String },

    /// A bracketing root search found no sign change.
    #[error("no crossing found in {context}")]
    NoCrossing { context: String },

    /// A sweep or bootstrap configuration was rejected.
    #[error("invalid configuration: {context}")]
    InvalidConfig { context: String },

    /// Too many Monte Carlo replicates had to be excluded.
    #[error("excluded {excluded} of {total} replicates (more than 1%)")]
    ExcessiveExclusions { excluded: usize, total: usize },
}
