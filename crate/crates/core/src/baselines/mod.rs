//! Classical baseline classifiers: L2 logistic regression on raw flattened
//! time series, logistic regression on aggregated features, and a random
//! forest on aggregated features.

mod forest;
mod logistic;

pub use forest::{load_forest, rf_predict, rf_train, save_forest, Forest, Node, Tree};
pub use logistic::{lr_objective, lr_predict, lr_train, lr_train_from, LinearModel, LrConfig};

use crate::pipeline::FeatureFrame;

/// Aggregates each time series into a single value: the per-feature mean
/// across the T days. Static features pass through unchanged since they are
/// constant across rows.
pub fn aggregate_features(frame: &FeatureFrame) -> Vec<f64> {
    let mut out = vec![0.0; frame.dims];
    for t in 0..frame.t_days {
        for (d, o) in out.iter_mut().enumerate() {
            *o += frame.values[t * frame.dims + d];
        }
    }
    let inv = 1.0 / frame.t_days as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    out
}
