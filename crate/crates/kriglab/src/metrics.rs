//! Error measures and classification rates over reference sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    /// Absent when the reference responses are constant.
    pub rmae: Option<f64>,
    pub r2: Option<f64>,
    pub n_ref: usize,
}

/// MAE, RMSE, RMAE (max error over the population std of `y_true`) and R^2.
pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let m = y_true.len();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "metrics need at least two reference points".into(),
        ));
    }
    let mf = m as f64;
    let mut sum_abs = 0.0;
    let mut sum_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = (t - p).abs();
        sum_abs += e;
        sum_sq += e * e;
        max_abs = max_abs.max(e);
    }
    let mean = y_true.iter().sum::<f64>() / mf;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    let std = (ss_tot / mf).sqrt();
    let degenerate = ss_tot <= 1e-300;
    let mae = sum_abs / mf;
    // guard against rounding putting RMSE a hair below MAE
    let rmse = (sum_sq / mf).sqrt().max(mae);
    Ok(MetricReport {
        mae,
        rmse,
        rmae: (!degenerate).then(|| max_abs / std),
        r2: (!degenerate).then(|| 1.0 - sum_sq / ss_tot),
        n_ref: m,
    })
}

/// Per-class accuracy in percent: (label 1, label 0). A rate is absent when
/// the class does not occur in `truth`.
pub fn classification_rates(truth: &[bool], pred: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (t, p) in truth.iter().zip(pred) {
        if *t {
            pos += 1;
            tp += usize::from(*p);
        } else {
            neg += 1;
            tn += usize::from(!*p);
        }
    }
    let rate = |hit: usize, total: usize| (total > 0).then(|| 100.0 * hit as f64 / total as f64);
    Ok((rate(tp, pos), rate(tn, neg)))
}

/// Class label of a continuous indicator: 1 for values >= 0.
pub fn classify(v: f64) -> bool {
    v >= 0.0
}
