//! Principal component analysis, Hotelling T² / Q-residual outlier
//! rejection and extended multiplicative signal correction.

mod emsc;
mod outliers;
mod pca;

pub use emsc::{emsc_build_model, emsc_correct, EmscModel, EmscResult, BASELINE_ORDER};
pub use outliers::{percentile, remove_outliers, OutlierFilter, OutlierOutcome, OutlierReport};
pub use pca::{
    pca_fit, scores_and_residuals, ComponentSelector, PcaModel, Projection, MIN_COMPONENT_VARIANCE,
};
