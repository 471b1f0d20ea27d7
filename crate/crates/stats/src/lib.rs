//! Statistical procedures for the exposure atlas: correlations, smoothing,
//! bootstrap bands, variance decomposition, fixed-effects regression,
//! regression forests with exact TreeSHAP, ALE and dominance analysis.

mod error;

pub mod ale;
pub mod bootstrap;
pub mod correlation;
pub mod dominance;
pub mod fe;
pub mod forest;
pub mod linalg;
pub mod loess;
pub mod series;
pub mod shap;
pub mod vardecomp;

pub use error::StatsError;
pub use forest::{fit_forest, Forest, ForestParams, Node, Tree};
pub use series::Series;
pub use shap::{mean_abs_shap, permutation_importance, tree_shap, Attribution};
