//! Monte-Carlo orchestration: drive truth, measurements, network and every
//! selected estimator over the horizon, and aggregate per-instant MSE
//! records. Runs are embarrassingly parallel with per-run seeds; the
//! reduction is a sequential fold over run-ordered results, so the output
//! is identical for any worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::baseline::{CentralizedKf, DropLateBank};
use crate::error::{Error, Result};
use crate::filter::FilterBank;
use crate::fusion::{self, CrossCovTracker};
use crate::graph;
use crate::linalg;
use crate::metrics::MetricsRecord;
use crate::model::{self, NoiseSource};
use crate::network::NetworkState;
use crate::scenario::{EstimatorKind, FusionMode, Scenario};

/// Accumulated squared errors for one estimator in one run.
struct EstimatorRun {
    /// [instant][component] squared error summed over sensors.
    comp_sq: Vec<Vec<f64>>,
    /// [instant][sensor] squared-norm error.
    sensor_sq: Vec<Vec<f64>>,
    /// [instant] squared-norm error of the fused estimate (NaN without
    /// fusion).
    fused_sq: Vec<f64>,
    /// [instant] minimum inverse-covariance eigenvalue across the window
    /// and sensors.
    min_info: Vec<f64>,
}

impl EstimatorRun {
    fn new(horizon: usize, dim: usize, sensors: usize) -> Self {
        Self {
            comp_sq: vec![vec![0.0; dim]; horizon],
            sensor_sq: vec![vec![0.0; sensors]; horizon],
            fused_sq: vec![f64::NAN; horizon],
            min_info: vec![f64::INFINITY; horizon],
        }
    }

    fn record_local(&mut self, at: usize, sensor: usize, err: &DVector<f64>) {
        for (c, e) in err.iter().enumerate() {
            self.comp_sq[at][c] += e * e;
        }
        self.sensor_sq[at][sensor] = err.norm_squared();
    }
}

fn run_context(e: Error, run: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("run {run}: {m}")),
        Error::Singular(c) => Error::Numerical(format!("run {run}: singular matrix in {c}")),
        other => other,
    }
}

/// Simulate a single Monte-Carlo run; estimator results follow the order of
/// `scenario.estimators`.
fn run_single(scenario: &Scenario, run: usize) -> Result<Vec<EstimatorRun>> {
    let noise = NoiseSource::new(scenario.seed, run as u64);
    let horizon = scenario.horizon;
    let dim = scenario.system.state_dim;
    let sensors = &scenario.sensors;

    // Shared truth and measurements: every estimator sees the same world.
    let mut truth = Vec::with_capacity(horizon + 1);
    truth.push(noise.initial_state(&scenario.system));
    for k in 1..=horizon {
        let next = model::step_truth(&scenario.system, k - 1, &truth[k - 1], &noise)?;
        truth.push(next);
    }
    let mut measurements: Vec<Vec<DVector<f64>>> = Vec::with_capacity(horizon + 1);
    measurements.push(Vec::new());
    for (k, x) in truth.iter().enumerate().skip(1) {
        let ys = sensors
            .iter()
            .map(|s| model::measure(s, k, x, &noise))
            .collect::<Result<Vec<_>>>()?;
        measurements.push(ys);
    }

    let rounds = graph::diameter(&scenario.topology)?.max(1);
    let mut out = Vec::with_capacity(scenario.estimators.len());
    for kind in &scenario.estimators {
        let stats = match kind {
            EstimatorKind::Proposed => run_proposed(
                scenario,
                run,
                rounds,
                &truth,
                &measurements,
            )
            .map_err(|e| run_context(e, run))?,
            EstimatorKind::DropLate => {
                run_drop_late(scenario, run, rounds, &truth, &measurements)
                    .map_err(|e| run_context(e, run))?
            }
            EstimatorKind::Centralized => {
                run_centralized(scenario, &truth, &measurements).map_err(|e| run_context(e, run))?
            }
        };
        debug_assert_eq!(stats.comp_sq.len(), horizon);
        debug_assert_eq!(stats.comp_sq[0].len(), dim);
        out.push(stats);
    }
    Ok(out)
}

fn run_proposed(
    scenario: &Scenario,
    run: usize,
    rounds: usize,
    truth: &[DVector<f64>],
    measurements: &[Vec<DVector<f64>>],
) -> Result<EstimatorRun> {
    let dim = scenario.system.state_dim;
    let n = scenario.sensors.len();
    let d_t = scenario.delay.max_delay;
    let mut bank = FilterBank::new(
        scenario.system.clone(),
        scenario.sensors.clone(),
        scenario.topology.clone(),
        d_t,
        rounds,
    );
    let mut net = NetworkState::new(
        &scenario.topology,
        scenario.delay.clone(),
        scenario.seed,
        run as u64,
    );
    let mut tracker = match scenario.fusion {
        FusionMode::None => None,
        _ => Some(CrossCovTracker::new(n, &scenario.system.init_cov)),
    };
    let mut stats = EstimatorRun::new(scenario.horizon, dim, n);
    for k in 1..=scenario.horizon {
        bank.step(k, &measurements[k], &mut net)?;
        let at = k - 1;
        for (i, est) in bank.current().iter().enumerate() {
            stats.record_local(at, i, &(&est.state - &truth[k]));
        }
        stats.min_info[at] = bank.min_information_eigenvalue()?;
        if let Some(tracker) = tracker.as_mut() {
            let factors = bank.update_factors()?;
            let covs: Vec<&DMatrix<f64>> = bank.current().iter().map(|e| &e.cov).collect();
            tracker.step(
                scenario.system.phi(k - 1),
                scenario.system.q(k - 1),
                &factors,
                &covs,
            )?;
            let xi = tracker.joint();
            let weights = match scenario.fusion {
                FusionMode::Matrix => fusion::matrix_weights(&xi, dim)?,
                FusionMode::Vector => fusion::vector_weights(&xi, dim)?,
                FusionMode::None => unreachable!(),
            };
            let states: Vec<DVector<f64>> =
                bank.current().iter().map(|e| e.state.clone()).collect();
            let fused = fusion::fuse(&states, &weights)?;
            stats.fused_sq[at] = (fused - &truth[k]).norm_squared();
        }
    }
    Ok(stats)
}

fn run_drop_late(
    scenario: &Scenario,
    run: usize,
    rounds: usize,
    truth: &[DVector<f64>],
    measurements: &[Vec<DVector<f64>>],
) -> Result<EstimatorRun> {
    let dim = scenario.system.state_dim;
    let n = scenario.sensors.len();
    let mut bank = DropLateBank::new(
        scenario.system.clone(),
        scenario.sensors.clone(),
        scenario.topology.clone(),
        rounds,
    );
    // Only consulted for its deterministic per-link delay draws.
    let net = NetworkState::new(
        &scenario.topology,
        scenario.delay.clone(),
        scenario.seed,
        run as u64,
    );
    let mut stats = EstimatorRun::new(scenario.horizon, dim, n);
    for k in 1..=scenario.horizon {
        bank.step(k, &measurements[k], &net)?;
        let at = k - 1;
        let mut worst = f64::INFINITY;
        for (i, est) in bank.current().iter().enumerate() {
            stats.record_local(at, i, &(&est.state - &truth[k]));
            let info = linalg::spd_inverse(&est.cov, "drop-late covariance")?;
            worst = worst.min(linalg::min_eigenvalue(&info));
        }
        stats.min_info[at] = worst;
    }
    Ok(stats)
}

fn run_centralized(
    scenario: &Scenario,
    truth: &[DVector<f64>],
    measurements: &[Vec<DVector<f64>>],
) -> Result<EstimatorRun> {
    let dim = scenario.system.state_dim;
    let mut kf = CentralizedKf::new(scenario.system.clone(), scenario.sensors.clone());
    let mut stats = EstimatorRun::new(scenario.horizon, dim, 1);
    for k in 1..=scenario.horizon {
        kf.step(k, &measurements[k])?;
        let at = k - 1;
        stats.record_local(at, 0, &(&kf.current().state - &truth[k]));
        let info = linalg::spd_inverse(&kf.current().cov, "centralized covariance")?;
        stats.min_info[at] = linalg::min_eigenvalue(&info);
    }
    Ok(stats)
}

/// Run the scenario's Monte-Carlo batch and aggregate one record per
/// (estimator, instant).
pub fn run_monte_carlo(scenario: &Scenario) -> Result<Vec<MetricsRecord>> {
    let per_run: Vec<Result<Vec<EstimatorRun>>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| run_single(scenario, run))
        .collect();

    let horizon = scenario.horizon;
    let dim = scenario.system.state_dim;
    let est_count = scenario.estimators.len();
    let mut totals: Vec<EstimatorRun> = scenario
        .estimators
        .iter()
        .map(|kind| {
            let sensors = match kind {
                EstimatorKind::Centralized => 1,
                _ => scenario.sensors.len(),
            };
            let mut acc = EstimatorRun::new(horizon, dim, sensors);
            for f in &mut acc.fused_sq {
                *f = 0.0;
            }
            acc
        })
        .collect();
    let mut fused_present = vec![false; est_count];

    // Sequential, run-ordered fold: deterministic for any worker count.
    for result in per_run {
        let runs = result?;
        for (e, stats) in runs.into_iter().enumerate() {
            let acc = &mut totals[e];
            for at in 0..horizon {
                for c in 0..dim {
                    acc.comp_sq[at][c] += stats.comp_sq[at][c];
                }
                for s in 0..acc.sensor_sq[at].len() {
                    acc.sensor_sq[at][s] += stats.sensor_sq[at][s];
                }
                if stats.fused_sq[at].is_nan() {
                    acc.fused_sq[at] = f64::NAN;
                } else {
                    fused_present[e] = true;
                    acc.fused_sq[at] += stats.fused_sq[at];
                }
                acc.min_info[at] = acc.min_info[at].min(stats.min_info[at]);
            }
        }
    }

    let runs = scenario.runs as f64;
    let mut records = Vec::with_capacity(est_count * horizon);
    for (e, kind) in scenario.estimators.iter().enumerate() {
        let sensors = totals[e].sensor_sq[0].len() as f64;
        for at in 0..horizon {
            records.push(MetricsRecord {
                estimator: kind.label().to_string(),
                run_group: scenario.name.clone(),
                k: at + 1,
                component_mse: totals[e].comp_sq[at]
                    .iter()
                    .map(|v| v / (runs * sensors))
                    .collect(),
                fused_mse: if fused_present[e] {
                    totals[e].fused_sq[at] / runs
                } else {
                    f64::NAN
                },
                sensor_mse: totals[e].sensor_sq[at].iter().map(|v| v / runs).collect(),
                min_eig_info: totals[e].min_info[at],
            });
        }
    }
    Ok(records)
}

/// Per-instant series of summed component MSE for one estimator, in instant
/// order; a convenience for steady-state comparisons.
pub fn mse_series(records: &[MetricsRecord], estimator: &str) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.estimator == estimator)
        .map(|r| r.component_mse.iter().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::model::MatrixSchedule;
    use crate::network::DelayProfile;
    use crate::scenario;
    use nalgebra::DMatrix;

    fn small_scenario() -> Scenario {
        let mut s = scenario::reference_case1();
        s.horizon = 40;
        s.runs = 3;
        s
    }

    #[test]
    fn record_count_is_horizon_times_estimators() {
        let s = small_scenario();
        let records = run_monte_carlo(&s).unwrap();
        assert_eq!(records.len(), 3 * s.horizon);
        for r in &records {
            assert!(r.component_mse.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn repeated_invocations_are_identical() {
        let s = small_scenario();
        let a = metrics::to_csv(&run_monte_carlo(&s).unwrap());
        let b = metrics::to_csv(&run_monte_carlo(&s).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_threaded_pool_gives_same_records() {
        let s = small_scenario();
        let parallel = metrics::to_csv(&run_monte_carlo(&s).unwrap());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let sequential = pool.install(|| metrics::to_csv(&run_monte_carlo(&s).unwrap()));
        assert_eq!(parallel, sequential);
    }

    #[test]
    fn noiseless_consistency_mse_vanishes() {
        let mut s = small_scenario();
        s.horizon = 120;
        s.runs = 2;
        s.system.process_cov = MatrixSchedule::Constant(DMatrix::zeros(3, 3));
        for sensor in &mut s.sensors {
            sensor.meas_cov = MatrixSchedule::Constant(DMatrix::from_element(1, 1, 1e-8));
        }
        s.delay = DelayProfile::point_mass(0);
        s.estimators = vec![EstimatorKind::Proposed, EstimatorKind::Centralized];
        let records = run_monte_carlo(&s).unwrap();
        for label in ["ftdkf", "centralized"] {
            let series = mse_series(&records, label);
            let tail = metrics::steady_state_mean(&series);
            assert!(tail < 1e-6, "{label} steady-state MSE {tail}");
        }
    }

    #[test]
    fn centralized_never_worse_than_distributed_at_steady_state() {
        let s = small_scenario();
        let records = run_monte_carlo(&s).unwrap();
        let central = metrics::steady_state_mean(&mse_series(&records, "centralized"));
        let local = metrics::steady_state_mean(&mse_series(&records, "ftdkf"));
        assert!(central <= local + 1e-9, "central {central} vs local {local}");
    }

    #[test]
    fn fused_mse_present_only_with_fusion() {
        let mut s = small_scenario();
        s.horizon = 10;
        s.estimators = vec![EstimatorKind::Proposed];
        let with = run_monte_carlo(&s).unwrap();
        assert!(with.iter().all(|r| r.fused_mse.is_finite()));
        s.fusion = scenario::FusionMode::None;
        let without = run_monte_carlo(&s).unwrap();
        assert!(without.iter().all(|r| r.fused_mse.is_nan()));
    }
}
