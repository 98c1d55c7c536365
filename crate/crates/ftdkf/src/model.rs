//! Target dynamics, sensor models, noise generation and assumption checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, stream};

/// Eigenvalue threshold below which a Gramian window is treated as
/// unobservable when searching for the horizon.
pub const OBSERVABILITY_EPS: f64 = 1e-9;

/// A step-indexed matrix provider. The reference scenario uses constants;
/// time-varying systems supply one matrix per step.
#[derive(Debug, Clone)]
pub enum MatrixSchedule {
    Constant(DMatrix<f64>),
    PerStep(Vec<DMatrix<f64>>),
}

impl MatrixSchedule {
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        match self {
            MatrixSchedule::Constant(m) => m,
            MatrixSchedule::PerStep(ms) => &ms[k.min(ms.len() - 1)],
        }
    }
}

/// The linear truth dynamics x_{k+1} = Phi_k x_k + w_k.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub state_dim: usize,
    pub transition: MatrixSchedule,
    pub process_cov: MatrixSchedule,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl SystemModel {
    pub fn phi(&self, k: usize) -> &DMatrix<f64> {
        self.transition.at(k)
    }

    pub fn q(&self, k: usize) -> &DMatrix<f64> {
        self.process_cov.at(k)
    }
}

/// Per-sensor measurement model y^i_k = H^i_k x_k + v^i_k.
#[derive(Debug, Clone)]
pub struct SensorModel {
    /// 1-based sensor index as used in scenario files.
    pub sensor_id: usize,
    pub obs: MatrixSchedule,
    pub meas_cov: MatrixSchedule,
}

impl SensorModel {
    pub fn h(&self, k: usize) -> &DMatrix<f64> {
        self.obs.at(k)
    }

    pub fn r(&self, k: usize) -> &DMatrix<f64> {
        self.meas_cov.at(k)
    }

    pub fn meas_dim(&self, k: usize) -> usize {
        self.h(k).nrows()
    }
}

/// Observability Gramian over a window, with the eigenvalue brackets of the
/// uniform complete observability condition.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub gramian: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub horizon: usize,
}

/// Deterministic noise source for one Monte-Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    pub master_seed: u64,
    pub run: u64,
}

impl NoiseSource {
    pub fn new(master_seed: u64, run: u64) -> Self {
        Self { master_seed, run }
    }

    fn gaussian(&self, keys: &[u64], cov: &DMatrix<f64>) -> DVector<f64> {
        let mut rng = rng::stream_rng(self.master_seed, keys);
        let dim = cov.nrows();
        let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        linalg::psd_sqrt(cov) * z
    }

    /// Process noise w_k ~ N(0, Q_k).
    pub fn process(&self, k: usize, q: &DMatrix<f64>) -> DVector<f64> {
        self.gaussian(&[stream::PROCESS_NOISE, self.run, k as u64], q)
    }

    /// Measurement noise v^i_k ~ N(0, R^i_k).
    pub fn measurement(&self, sensor_id: usize, k: usize, r: &DMatrix<f64>) -> DVector<f64> {
        self.gaussian(
            &[stream::MEASUREMENT_NOISE, self.run, sensor_id as u64, k as u64],
            r,
        )
    }

    /// Initial truth state x_0 ~ N(mu_0, P_0).
    pub fn initial_state(&self, model: &SystemModel) -> DVector<f64> {
        &model.init_mean + self.gaussian(&[stream::INIT_STATE, self.run], &model.init_cov)
    }
}

/// One truth step: Phi_k x + w_k.
pub fn step_truth(
    model: &SystemModel,
    k: usize,
    state: &DVector<f64>,
    noise: &NoiseSource,
) -> Result<DVector<f64>> {
    if state.len() != model.state_dim {
        return Err(Error::Dimension {
            context: "step_truth state",
            expected: model.state_dim,
            got: state.len(),
        });
    }
    Ok(model.phi(k) * state + noise.process(k, model.q(k)))
}

/// One measurement: H^i_k x + v^i_k.
pub fn measure(
    sensor: &SensorModel,
    k: usize,
    state: &DVector<f64>,
    noise: &NoiseSource,
) -> Result<DVector<f64>> {
    let h = sensor.h(k);
    if h.ncols() != state.len() {
        return Err(Error::Dimension {
            context: "measure state",
            expected: h.ncols(),
            got: state.len(),
        });
    }
    Ok(h * state + noise.measurement(sensor.sensor_id, k, sensor.r(k)))
}

/// Transition products O_{l,k} = Phi_{l-1} ... Phi_k, with O_{k,k} = I.
fn transition_product(model: &SystemModel, l: usize, k: usize) -> DMatrix<f64> {
    let mut o = DMatrix::identity(model.state_dim, model.state_dim);
    for step in k..l {
        o = model.phi(step) * o;
    }
    o
}

/// Stacked observation matrix and block-diagonal measurement covariance for
/// all sensors at step l.
fn stacked_observation(sensors: &[SensorModel], l: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows: usize = sensors.iter().map(|s| s.meas_dim(l)).sum();
    let cols = sensors[0].h(l).ncols();
    let mut h = DMatrix::zeros(rows, cols);
    let mut r = DMatrix::zeros(rows, rows);
    let mut at = 0;
    for s in sensors {
        let hi = s.h(l);
        let ri = s.r(l);
        let m = hi.nrows();
        h.view_mut((at, 0), (m, cols)).copy_from(hi);
        r.view_mut((at, at), (m, m)).copy_from(ri);
        at += m;
    }
    (h, r)
}

/// Sum of O^T H^T R^{-1} H O over the window [k, k+len].
fn gramian_window(
    model: &SystemModel,
    sensors: &[SensorModel],
    k: usize,
    len: usize,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim;
    let mut m = DMatrix::zeros(n, n);
    for l in k..=k + len {
        let (h, r) = stacked_observation(sensors, l);
        let r_inv = linalg::spd_inverse(&r, "gramian measurement covariance")?;
        let o = transition_product(model, l, k);
        let ho = &h * &o;
        m += ho.transpose() * r_inv * ho;
    }
    Ok(linalg::symmetrize(&m))
}

/// Build the windowed observability Gramian at instant `k` with horizon
/// `n_bar` and report its eigenvalue brackets, plus the brackets of the
/// extended window used by the directed/undirected bound constants.
pub fn observability_gramian(
    model: &SystemModel,
    sensors: &[SensorModel],
    k: usize,
    n_bar: usize,
) -> Result<GramianReport> {
    for l in k..=k + n_bar + sensors.len() {
        if linalg::min_singular_value(model.phi(l)) <= 0.0 {
            return Err(Error::Singular("transition matrix in gramian window"));
        }
    }
    let m = gramian_window(model, sensors, k, n_bar)?;
    let ext = gramian_window(model, sensors, k, n_bar + sensors.len() - 1)?;
    Ok(GramianReport {
        alpha: linalg::min_eigenvalue(&m),
        beta: linalg::max_eigenvalue(&m),
        alpha_bar: linalg::min_eigenvalue(&ext),
        beta_bar: linalg::max_eigenvalue(&ext),
        gramian: m,
        horizon: n_bar,
    })
}

/// Smallest horizon whose Gramian has min eigenvalue above
/// [`OBSERVABILITY_EPS`], searching from 0 upward.
pub fn find_observability_horizon(
    model: &SystemModel,
    sensors: &[SensorModel],
    k: usize,
    max_horizon: usize,
) -> Result<usize> {
    for n_bar in 0..=max_horizon {
        let m = gramian_window(model, sensors, k, n_bar)?;
        if linalg::min_eigenvalue(&m) > OBSERVABILITY_EPS {
            return Ok(n_bar);
        }
    }
    Err(Error::Validation(vec![format!(
        "system not observable within horizon {max_horizon}"
    )]))
}

/// Result of checking the standing assumptions on a model.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Minimum singular value of Phi^{-1} (the eta constant).
    pub eta: f64,
    pub observable: bool,
    pub horizon: Option<usize>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check invertibility of Phi, PSD of Q, P_0 and every R^i, and
/// observability; report eta and the discovered horizon.
pub fn validate_model(model: &SystemModel, sensors: &[SensorModel]) -> ValidationReport {
    let mut violations = Vec::new();
    let phi = model.phi(0);
    let eta = match phi.clone().try_inverse() {
        Some(inv) => linalg::min_singular_value(&inv),
        None => {
            violations.push("transition matrix not invertible".to_string());
            0.0
        }
    };
    if eta <= 0.0 && violations.is_empty() {
        violations.push("transition inverse has zero singular value".to_string());
    }
    if !linalg::is_psd(model.q(0), 1e-9) {
        violations.push("process_cov not PSD".to_string());
    }
    if !linalg::is_psd(&model.init_cov, 1e-9) {
        violations.push("init_cov not PSD".to_string());
    }
    for s in sensors {
        if linalg::spd_inverse(s.r(0), "sensor measurement covariance").is_err() {
            violations.push(format!(
                "sensor {} meas_cov not symmetric positive definite",
                s.sensor_id
            ));
        }
        if s.h(0).ncols() != model.state_dim {
            violations.push(format!(
                "sensor {} obs_matrix has {} columns, state dim is {}",
                s.sensor_id,
                s.h(0).ncols(),
                model.state_dim
            ));
        }
    }
    let horizon = if violations.is_empty() {
        find_observability_horizon(model, sensors, 0, 4 * model.state_dim + 4).ok()
    } else {
        None
    };
    let observable = horizon.is_some();
    if violations.is_empty() && !observable {
        violations.push("system not uniformly completely observable".to_string());
    }
    ValidationReport {
        eta,
        observable,
        horizon,
        violations,
    }
}

/// The constant-acceleration transition of the reference scenario.
pub fn constant_acceleration_phi(t: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[1.0, t, t * t / 2.0, 0.0, 1.0, t, 0.0, 0.0, 1.0],
    )
}
