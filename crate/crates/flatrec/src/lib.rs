//! Rating-transformation toolkit for top-N recommendation experiments.
//!
//! The crate turns raw rating datasets into transformed value matrices
//! (percentile, smoothed percentile, z-score), measures how flat the
//! resulting value distributions are, trains rating-magnitude recommenders on
//! them, and evaluates ranking quality under cross-validation.
//!
//! The numeric core is generic over the scalar type through [`Scalar`];
//! `f64`-based aliases for the main types are exported at the crate root
//! ([`Dataset64`], [`ValueMatrix64`], ...), with `f32` twins alongside them.

pub mod data;
pub mod distmetrics;
pub mod error;
pub mod eval;
pub mod recsys;
pub mod scalar;
pub mod transform;

pub use data::{Dataset, Delimiter, FoldSplit, ItemId, LoadOptions, Rating, RatingScale, UserId};
pub use error::{Error, Result};
pub use eval::{
    grid_search, run_experiment, standard_conditions, Condition, EvalReport, ExperimentOptions,
    GridAxes, GridSearchResult,
};
pub use recsys::{Algorithm, ModelConfig, RecommendationList, Recommender, TrainedModel};
pub use scalar::Scalar;
pub use transform::{
    IndexRule, MatrixEntry, OffsetPolicy, Orientation, TransformSpec, ValueMatrix,
};

/// `f64` dataset.
pub type Dataset64 = Dataset<f64>;
/// `f32` dataset.
pub type Dataset32 = Dataset<f32>;
/// `f64` rating scale.
pub type RatingScale64 = RatingScale<f64>;
/// `f32` rating scale.
pub type RatingScale32 = RatingScale<f32>;
/// `f64` transformed matrix.
pub type ValueMatrix64 = ValueMatrix<f64>;
/// `f32` transformed matrix.
pub type ValueMatrix32 = ValueMatrix<f32>;
