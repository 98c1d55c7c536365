//! Boundedness machinery: the covariance-contraction lemma with its
//! certified attenuation factor, the information-matrix floor that proves
//! the delayed filter stays bounded, and the inverse reading of that floor
//! as a maximum-allowable-delay calculator.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg;
use crate::network::transmission_window;
use crate::rng;

/// Closed-form attenuation factor: with S = Phi^{-1} Q Phi^{-T},
/// gamma_hat = 1 / (1 + lambda_max(S) * lambda_max(Omega_hat)) guarantees
/// (Phi Omega^{-1} Phi^T + Q)^{-1} >= gamma_hat * Phi^{-T} Omega Phi^{-1}
/// for every information matrix 0 < Omega <= Omega_hat.
pub fn lemma1_gamma(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    omega_hat: &DMatrix<f64>,
) -> Result<f64> {
    let s = noise_shape(phi, q)?;
    let g = 1.0 / (1.0 + linalg::max_eigenvalue(&s) * linalg::max_eigenvalue(omega_hat));
    Ok(g)
}

/// The sharp factor 1 / (1 + lambda_max(S * Omega_hat)), computed through
/// the symmetric congruence Omega_hat^{1/2} S Omega_hat^{1/2}.
pub fn lemma1_gamma_tight(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    omega_hat: &DMatrix<f64>,
) -> Result<f64> {
    let s = noise_shape(phi, q)?;
    let half = linalg::psd_sqrt(omega_hat);
    let prod = linalg::symmetrize(&(&half * s * &half));
    Ok(1.0 / (1.0 + linalg::max_eigenvalue(&prod)))
}

/// S = Phi^{-1} Q Phi^{-T}.
fn noise_shape(phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let phi_inv = phi
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("state transition matrix"))?;
    Ok(linalg::symmetrize(&(&phi_inv * q * phi_inv.transpose())))
}

/// Random information matrices 0 < Omega <= Omega_hat for certification:
/// Omega = Omega_hat^{1/2} U D U^T Omega_hat^{1/2} with D in (0, 1].
fn sample_information(
    omega_hat_half: &DMatrix<f64>,
    seed: u64,
    index: u64,
) -> DMatrix<f64> {
    let n = omega_hat_half.nrows();
    let mut rng = rng::stream_rng(seed, &[rng::stream::CERTIFY, index]);
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let qr = g.qr();
    let u = qr.q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
        1e-3 + (1.0 - 1e-3) * rng.gen::<f64>()
    }));
    linalg::symmetrize(&(omega_hat_half * u.clone() * d * u.transpose() * omega_hat_half))
}

/// Certify a candidate factor against sampled admissible Omega (always
/// including Omega_hat itself). Returns the worst eigenvalue slack
/// lambda_min(LHS - gamma * RHS); nonnegative (up to tolerance) means the
/// factor is valid on the sample set.
pub fn certify_lemma1(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    omega_hat: &DMatrix<f64>,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let phi_inv = phi
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("state transition matrix"))?;
    let half = linalg::psd_sqrt(omega_hat);
    let mut worst = f64::INFINITY;
    for i in 0..=samples as u64 {
        let omega = if i == 0 {
            omega_hat.clone()
        } else {
            sample_information(&half, seed, i)
        };
        let lhs_inv = phi * linalg::spd_inverse(&omega, "sampled information")? * phi.transpose() + q;
        let lhs = linalg::spd_inverse(&lhs_inv, "contraction left side")?;
        let rhs = linalg::symmetrize(&(phi_inv.transpose() * &omega * &phi_inv));
        worst = worst.min(linalg::min_eigenvalue(&(lhs - rhs * gamma)));
    }
    Ok(worst)
}

/// Bisect the largest factor the sampled certification still accepts,
/// starting from the guaranteed closed form; terminates at 1% relative
/// width.
pub fn tighten_gamma(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    omega_hat: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut lo = lemma1_gamma(phi, q, omega_hat)?;
    if certify_lemma1(phi, q, omega_hat, lo, samples, seed)? < -1e-9 {
        return Err(Error::Numerical(
            "closed-form attenuation factor failed certification".into(),
        ));
    }
    let mut hi = 1.0;
    while hi - lo > 0.01 * lo {
        let mid = 0.5 * (lo + hi);
        if certify_lemma1(phi, q, omega_hat, mid, samples, seed)? >= -1e-12 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Minimum strictly positive entry of (W + I)^sigma over the relevant
/// power range: sigma in {1..Z} when undirected, {n..Z} when directed
/// (information needs up to node_count hops to close a directed cycle).
pub fn omega_tilde_min(topo: &Topology, z: usize) -> Result<f64> {
    let w = topo.weight_matrix_with_self();
    let lo = if topo.directed {
        topo.node_count.min(z).max(1)
    } else {
        1
    };
    let mut power = DMatrix::identity(w.nrows(), w.ncols());
    let mut best = f64::INFINITY;
    for sigma in 1..=z {
        power *= &w;
        if sigma < lo {
            continue;
        }
        for &v in power.iter() {
            if v > 0.0 {
                best = best.min(v);
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Numerical(
            "no positive weight-matrix entries in the power range".into(),
        ))
    }
}

/// Everything the floor evaluator needs, assembled once per scenario.
#[derive(Debug, Clone)]
pub struct BoundParams {
    /// Certified attenuation factor from the contraction lemma.
    pub gamma_hat: f64,
    /// Spectral-norm bound on the transition matrix.
    pub eta: f64,
    /// Observability floor: the extended-window constant for undirected
    /// networks, the plain one for digraphs.
    pub alpha: f64,
    /// Minimum positive communication-weight product.
    pub omega_tilde_min: f64,
    /// Observability index n + n_bar.
    pub z: usize,
    /// Maximum transmission delay.
    pub d_t: usize,
}

impl BoundParams {
    /// First instant at which the floor is claimed.
    pub fn valid_from(&self) -> usize {
        (self.z + 1) * self.d_t
    }

    fn check_inputs(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma_hat > 0.0 && self.gamma_hat <= 1.0) {
            problems.push(format!("attenuation factor {} outside (0, 1]", self.gamma_hat));
        }
        if self.eta <= 0.0 {
            problems.push(format!("transition norm bound {} not positive", self.eta));
        }
        if self.alpha <= 0.0 {
            problems.push(format!("observability constant {} not positive", self.alpha));
        }
        if self.omega_tilde_min <= 0.0 {
            problems.push(format!("weight floor {} not positive", self.omega_tilde_min));
        }
        if self.z == 0 {
            problems.push("observability index is zero".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// The uniform information floor: for k >= (Z+1) d_t and s in the
/// transmission window,
/// lambda_min([P^i_k(s)]^{-1}) >=
///   omega_tilde_min * gamma_hat^{Z d_t} * alpha
///   * gamma_hat^{s-k+d_t} * eta^{2(Z d_t - 1) + 2(s-k+d_t)}.
pub fn cov_lower_bound(params: &BoundParams, k: usize, s: usize) -> Result<f64> {
    params.check_inputs()?;
    if k < params.valid_from() {
        return Err(Error::Validation(vec![format!(
            "floor claimed from instant {}, queried at {k}",
            params.valid_from()
        )]));
    }
    if !transmission_window(k, params.d_t).contains(&s) {
        return Err(Error::Validation(vec![format!(
            "instant {s} outside the transmission window at {k}"
        )]));
    }
    let g = params.gamma_hat;
    let zd = (params.z * params.d_t) as i32;
    let shift = (s + params.d_t - k) as i32;
    Ok(params.omega_tilde_min
        * params.alpha
        * g.powi(zd + shift)
        * params.eta.powi(2 * (zd - 1) + 2 * shift))
}

/// Invert the floor: the largest d_t whose guaranteed covariance still meets
/// `p_target` when read at age k - s. Fails in the attenuation-free regime
/// gamma_hat * eta^2 >= 1, where no finite delay is limiting, and when even
/// the zero-delay floor misses the target.
pub fn max_delay_bound(params: &BoundParams, p_target: f64, k: usize, s: usize) -> Result<usize> {
    params.check_inputs()?;
    if p_target <= 0.0 {
        return Err(Error::Validation(vec![format!(
            "covariance target {p_target} not positive"
        )]));
    }
    if s > k {
        return Err(Error::Validation(vec![format!(
            "instant {s} is ahead of read time {k}"
        )]));
    }
    let g = params.gamma_hat;
    let eta2 = params.eta * params.eta;
    let base = g * eta2;
    if base >= 1.0 {
        return Err(Error::BoundUndefined);
    }
    let age = (k - s) as i32;
    // Floor condition at delay d: (g eta^2)^{(Z+1) d} >= A with
    // A = g^{k-s} eta^{2(k-s+1)} / (p_target omega_tilde_min alpha).
    let ln_a = (age as f64) * g.ln() + f64::from(age + 1) * eta2.ln()
        - (p_target * params.omega_tilde_min * params.alpha).ln();
    // ln A = 0 is the exact zero-delay boundary; leave headroom for rounding
    // in the logarithms so the boundary itself stays reachable.
    if ln_a > 1e-9 {
        return Err(Error::Numerical(format!(
            "covariance target {p_target} unreachable at any delay"
        )));
    }
    let ratio = ln_a / ((params.z as f64 + 1.0) * base.ln());
    Ok((ratio + 1e-9).floor() as usize)
}

/// Bound constants resolved from a scenario, with the intermediate
/// observability quantities for reporting.
#[derive(Debug, Clone)]
pub struct ScenarioBounds {
    pub params: BoundParams,
    pub n_bar: usize,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
}

/// Compute every constant the floor/delay calculators need from a scenario:
/// eta from the transition inverse, the observability horizon and Gramian
/// brackets, the attenuation factor for the information ceiling
/// Omega_hat = beta_bar * I, and the weight floor over the power range.
pub fn resolve_scenario(scenario: &crate::scenario::Scenario) -> Result<ScenarioBounds> {
    let report = crate::model::validate_model(&scenario.system, &scenario.sensors);
    if !report.ok() {
        return Err(Error::Validation(report.violations));
    }
    let n_bar = report
        .horizon
        .expect("validated models carry an observability horizon");
    let gram = crate::model::observability_gramian(&scenario.system, &scenario.sensors, 0, n_bar)?;
    let z = scenario.sensors.len() + n_bar;
    let dim = scenario.system.state_dim;
    let omega_hat = DMatrix::identity(dim, dim) * gram.beta_bar;
    let gamma_hat = lemma1_gamma(scenario.system.phi(0), scenario.system.q(0), &omega_hat)?;
    let params = BoundParams {
        gamma_hat,
        eta: report.eta,
        alpha: if scenario.topology.directed {
            gram.alpha
        } else {
            gram.alpha_bar
        },
        omega_tilde_min: omega_tilde_min(&scenario.topology, z)?,
        z,
        d_t: scenario.delay.max_delay,
    };
    Ok(ScenarioBounds {
        params,
        n_bar,
        alpha: gram.alpha,
        beta: gram.beta,
        alpha_bar: gram.alpha_bar,
        beta_bar: gram.beta_bar,
    })
}
