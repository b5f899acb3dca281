//! Evaluation metrics, calibration, principal-component projections and
//! intervention curves.

mod curve;
mod pca;
mod scores;

pub use curve::{
    cell_seed, curve_gain, curve_predictions, default_k_grid, intervention_curve, score, CurvePoint, CurveRun, SeedScores, Spread,
};
pub use pca::{pca2, PcaProjection};
pub use scores::{aupr, auroc, brier, calibration_bins, CalibrationBins, DEFAULT_CALIBRATION_BINS};
