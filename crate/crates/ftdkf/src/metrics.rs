//! Metric records produced by Monte-Carlo runs and their CSV emission.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Aggregated metrics for one estimator at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub estimator: String,
    /// Grouping label (scenario name, possibly suffixed by sweep variant).
    pub run_group: String,
    pub k: usize,
    /// Per-state-component MSE, averaged over runs and (for distributed
    /// estimators) sensors.
    pub component_mse: Vec<f64>,
    /// Squared-norm MSE of the fused estimate; NaN when fusion is off.
    pub fused_mse: f64,
    /// Per-sensor squared-norm MSE.
    pub sensor_mse: Vec<f64>,
    /// Minimum eigenvalue of the inverse covariances across the window,
    /// sensors and runs.
    pub min_eig_info: f64,
}

pub const CSV_HEADER: &str = "estimator,run_group,k,component,mse,fused_mse,min_eig_info";

/// Deterministic CSV rendering: one row per (estimator, k, component), in
/// record order.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * records.len() + 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rec in records {
        for (c, mse) in rec.component_mse.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                rec.estimator, rec.run_group, rec.k, c, mse, rec.fused_mse, rec.min_eig_info
            ));
        }
    }
    out
}

/// Write records to a CSV file.
pub fn emit_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(to_csv(records).as_bytes())?;
    Ok(())
}

/// Mean of a per-instant series over the final 20% of the horizon; the
/// "steady state" figure used in comparisons.
pub fn steady_state_mean(series: &[f64]) -> f64 {
    let tail = (series.len() / 5).max(1).min(series.len());
    let slice = &series[series.len() - tail..];
    slice.iter().sum::<f64>() / tail as f64
}
