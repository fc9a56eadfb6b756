//! Relative squared-error metrics and the per-run error report.
//!
//! Every benchmark score is the same primitive: the squared l2 distance
//! between a truth vector and an estimate vector on a test grid, divided by
//! the squared norm of the truth, averaged over a set of functions. The
//! three uses are state filtering (recovered solutions vs. reference
//! trajectories), equation recovery (true vs. learned operator applied to
//! the same functions), and operator learning (solutions of the learned
//! equation vs. reference solutions).

use ndarray::Array1;

/// A metric evaluation failed in a way that invalidates the entry rather
/// than the run.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    /// The truth vector has zero norm, so the relative error is undefined.
    #[error("relative error undefined: truth vector has zero norm")]
    ZeroDenominator,

    /// Truth and estimate were sampled on different grids.
    #[error("metric length mismatch: truth {truth}, estimate {estimate}")]
    LengthMismatch { truth: usize, estimate: usize },

    /// The computed value was NaN or infinite.
    #[error("metric value is not finite")]
    NotFinite,
}

/// Squared l2 error of `estimate` against `truth`, relative to the squared
/// norm of `truth`.
pub fn relative_sq_error(truth: &Array1<f64>, estimate: &Array1<f64>) -> Result<f64, MetricError> {
    if truth.len() != estimate.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            estimate: estimate.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, e) in truth.iter().zip(estimate.iter()) {
        let d = t - e;
        num += d * d;
        den += t * t;
    }
    if den == 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    let value = num / den;
    if !value.is_finite() {
        return Err(MetricError::NotFinite);
    }
    Ok(value)
}

/// Mean of [`relative_sq_error`] over paired (truth, estimate) vectors.
pub fn mean_relative_sq_error(
    pairs: &[(Array1<f64>, Array1<f64>)],
) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::ZeroDenominator);
    }
    let mut total = 0.0;
    for (truth, estimate) in pairs {
        total += relative_sq_error(truth, estimate)?;
    }
    Ok(total / pairs.len() as f64)
}

/// One scored entry of a run: a metric name, the function set it was
/// averaged over, and the value.
///
/// Metric names in the emitted CSV are `filter`, `eql`, and `opl`; the
/// Duffing forecasting windows append their horizon, e.g. `opl_t3`. Splits
/// are `train`, `id` (fresh draws from the training distribution), and
/// `ood`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub split: String,
    pub value: f64,
}

/// All scores from one (experiment, method, seed) run plus metadata.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Entries whose denominators vanished, kept out of `rows` so every
    /// reported value is nonnegative and finite.
    pub invalid: Vec<String>,
    pub wall_seconds: f64,
}

impl ErrorReport {
    pub fn new(experiment: &str, method: &str, seed: u64) -> Self {
        ErrorReport {
            experiment: experiment.to_string(),
            method: method.to_string(),
            seed,
            rows: Vec::new(),
            invalid: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    /// Record a computed metric, or flag the entry as invalid if the
    /// computation failed.
    pub fn push<E: std::fmt::Display>(&mut self, metric: &str, split: &str, value: Result<f64, E>) {
        match value {
            Ok(v) if v.is_finite() && v >= 0.0 => self.rows.push(MetricRow {
                metric: metric.to_string(),
                split: split.to_string(),
                value: v,
            }),
            Ok(_) => self.invalid.push(format!("{metric}/{split}: not finite")),
            Err(e) => self.invalid.push(format!("{metric}/{split}: {e}")),
        }
    }

    /// Look up a recorded value by metric and split.
    pub fn value(&self, metric: &str, split: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.split == split)
            .map(|r| r.value)
    }
}
