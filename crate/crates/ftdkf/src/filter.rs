//! The local estimator: information-form prediction/update plus the
//! anchored buffer-reprocessing loop that re-runs the consensus filter from
//! the oldest possibly-stale instant to the present.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::consensus::{self, InfoPair};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg;
use crate::model::{SensorModel, SystemModel};
use crate::network::NetworkState;

/// One sensor's posterior (or prior) at a (k, s) instant pair.
#[derive(Debug, Clone)]
pub struct LocalEstimate {
    pub sensor_id: usize,
    pub state: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Time propagation: x(s|s-1) = Phi x(s-1), P(s|s-1) = Phi P Phi^T + Q.
pub fn predict(est: &LocalEstimate, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> LocalEstimate {
    LocalEstimate {
        sensor_id: est.sensor_id,
        state: phi * &est.state,
        cov: linalg::symmetrize(&(phi * &est.cov * phi.transpose() + q)),
    }
}

/// Information-form measurement update with consensus aggregates:
/// [P]^{-1} = [P_prior]^{-1} + Omega, x = P([P_prior]^{-1} x_prior + Theta).
pub fn update(
    prior: &LocalEstimate,
    theta: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<LocalEstimate> {
    if theta.len() != prior.state.len() {
        return Err(Error::Dimension {
            context: "update aggregates",
            expected: prior.state.len(),
            got: theta.len(),
        });
    }
    let prior_info = linalg::spd_inverse(&prior.cov, "prior covariance")?;
    let post_info = linalg::symmetrize(&(&prior_info + omega));
    let cov = linalg::spd_inverse(&post_info, "posterior information")?;
    let state = &cov * (&prior_info * &prior.state + theta);
    Ok(LocalEstimate {
        sensor_id: prior.sensor_id,
        state,
        cov,
    })
}

/// Classical gain K = P H^T [H P H^T + R]^{-1}.
pub fn kalman_gain(
    prior_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let innov = h * prior_cov * h.transpose() + r;
    let innov_inv = linalg::spd_inverse(&innov, "innovation covariance")?;
    Ok(prior_cov * h.transpose() * innov_inv)
}

/// Covariance-form update, used as the second route in the gain/information
/// equivalence contract.
pub fn covariance_form_update(
    prior: &LocalEstimate,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<LocalEstimate> {
    let k = kalman_gain(&prior.cov, h, r)?;
    let state = &prior.state + &k * (y - h * &prior.state);
    let cov = linalg::symmetrize(&(&prior.cov - &k * h * &prior.cov));
    Ok(LocalEstimate {
        sensor_id: prior.sensor_id,
        state,
        cov,
    })
}

/// Per-instant snapshot of all sensors: state/covariance pairs indexed by
/// sensor.
type Snapshot = Vec<LocalEstimate>;

/// The whole network's anchored reprocessing filter. Owns every sensor's
/// estimate window plus the retained own-measurement information pairs.
pub struct FilterBank {
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub topology: Topology,
    /// Maximum transmission delay d_t; sets the reprocessing window.
    pub max_delay: usize,
    /// Consensus rounds per instant (the graph diameter).
    pub rounds: usize,
    window: BTreeMap<usize, Snapshot>,
    own_info: BTreeMap<usize, Vec<InfoPair>>,
    last_k: usize,
    rounds_last_step: usize,
}

impl FilterBank {
    pub fn new(
        system: SystemModel,
        sensors: Vec<SensorModel>,
        topology: Topology,
        max_delay: usize,
        rounds: usize,
    ) -> Self {
        let init: Snapshot = sensors
            .iter()
            .map(|s| LocalEstimate {
                sensor_id: s.sensor_id,
                state: system.init_mean.clone(),
                cov: system.init_cov.clone(),
            })
            .collect();
        let mut window = BTreeMap::new();
        window.insert(0, init);
        Self {
            system,
            sensors,
            topology,
            max_delay,
            rounds: rounds.max(1),
            window,
            own_info: BTreeMap::new(),
            last_k: 0,
            rounds_last_step: 0,
        }
    }

    pub fn last_instant(&self) -> usize {
        self.last_k
    }

    /// Consensus rounds consumed by the most recent step; the reprocessing
    /// budget caps this at max(1, d_t) * d_g.
    pub fn rounds_last_step(&self) -> usize {
        self.rounds_last_step
    }

    /// Own information pairs for stamp k, also the network payloads.
    pub fn info_pairs(&self, k: usize, measurements: &[DVector<f64>]) -> Result<Vec<InfoPair>> {
        self.sensors
            .iter()
            .zip(measurements)
            .map(|(s, y)| consensus::init_message(s, k, y))
            .collect()
    }

    /// Advance the network to instant k with this step's payloads, then
    /// reprocess the window.
    pub fn step(
        &mut self,
        k: usize,
        measurements: &[DVector<f64>],
        net: &mut NetworkState,
    ) -> Result<()> {
        if k != self.last_k + 1 {
            return Err(Error::Scenario(format!(
                "filter stepped to {k}, expected {}",
                self.last_k + 1
            )));
        }
        let pairs = self.info_pairs(k, measurements)?;
        net.advance(&self.topology, k, &pairs)?;
        self.own_info.insert(k, pairs);
        let (window, rounds_used) = self.reprocess(k, net)?;
        self.window = window;
        self.rounds_last_step = rounds_used;
        self.last_k = k;
        // Own data older than the next window start is never needed again.
        let keep_from = (k + 1).saturating_sub(self.max_delay.max(1));
        self.own_info.retain(|&s, _| s >= keep_from);
        Ok(())
    }

    /// The anchored reprocessing pass: pure in (self, k, network state).
    /// Returns the new window and the consensus-round count consumed.
    pub fn reprocess(
        &self,
        k: usize,
        net: &NetworkState,
    ) -> Result<(BTreeMap<usize, Snapshot>, usize)> {
        let d_t = self.max_delay;
        let mut window = BTreeMap::new();
        let mut rounds_used = 0;

        // Instants to re-filter, and the carried anchor they start from.
        let (anchor_s, first_s) = if d_t == 0 {
            // Degenerate window: a single predict/update from the previous
            // posterior; the anchored phases only make sense for d_t >= 1.
            (k - 1, k)
        } else if k == 1 {
            (0, 1)
        } else if k <= d_t + 1 {
            (1, 2)
        } else {
            (k - d_t, k - d_t + 1)
        };

        let carried = self
            .window
            .get(&anchor_s)
            .ok_or_else(|| Error::Scenario(format!("missing anchor instant {anchor_s}")))?
            .clone();
        window.insert(anchor_s, carried);

        for s in first_s..=k {
            let own = self.own_info.get(&s).ok_or_else(|| {
                Error::Scenario(format!("own measurement for instant {s} not retained"))
            })?;
            let phi = self.system.phi(s - 1);
            let q = self.system.q(s - 1);
            let gate = |i: usize, j: usize| {
                net.gated_weight(&self.topology, i, j, s)
                    .expect("gating queried on a live window stamp")
            };
            let aggregates = consensus::run_rounds(&self.topology, own, &gate, self.rounds)?;
            rounds_used += self.rounds;
            let prev = &window[&(s - 1)];
            let mut snap = Vec::with_capacity(self.sensors.len());
            for (i, est) in prev.iter().enumerate() {
                let prior = predict(est, phi, q);
                let (theta, omega) = &aggregates[i];
                snap.push(update(&prior, theta, omega)?);
            }
            window.insert(s, snap);
        }
        Ok((window, rounds_used))
    }

    /// The real-time posteriors x^i_k(k).
    pub fn current(&self) -> &Snapshot {
        &self.window[&self.last_k]
    }

    /// Posterior snapshot at a window instant, if still held.
    pub fn at_instant(&self, s: usize) -> Option<&Snapshot> {
        self.window.get(&s)
    }

    /// Window instants currently held (anchor through k).
    pub fn window_instants(&self) -> Vec<usize> {
        self.window.keys().copied().collect()
    }

    /// min over sensors and held window instants s >= 1 of
    /// lambda_min([P^i_k(s)]^{-1}).
    pub fn min_information_eigenvalue(&self) -> Result<f64> {
        let mut best = f64::INFINITY;
        for (&s, snap) in &self.window {
            if s == 0 {
                continue;
            }
            for est in snap {
                let info = linalg::spd_inverse(&est.cov, "window covariance")?;
                best = best.min(linalg::min_eigenvalue(&info));
            }
        }
        Ok(best)
    }

    /// Effective per-sensor gains implied by the instant-k information
    /// update: K^i = P^i_k(k) (H^i)^T (R^i)^{-1}. Used by the
    /// cross-covariance recursion.
    pub fn effective_gains(&self) -> Result<Vec<DMatrix<f64>>> {
        let k = self.last_k;
        self.current()
            .iter()
            .zip(&self.sensors)
            .map(|(est, s)| {
                let r_inv = linalg::spd_inverse(s.r(k), "measurement covariance")?;
                Ok(&est.cov * s.h(k).transpose() * r_inv)
            })
            .collect()
    }

    /// Per-sensor update factors F^i = I - P^i_k(k) Omega^i_k
    /// = P^i_k(k) [Phi P^i_{k-1} Phi^T + Q]^{-1}, capturing the full
    /// consensus-aggregated information update at instant k. Unlike the
    /// own-measurement gain, F contracts every state direction that received
    /// information, which keeps the cross-covariance recursion stable.
    pub fn update_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let k = self.last_k;
        let prev = self.window.get(&(k - 1)).ok_or(Error::Scenario(format!(
            "window no longer holds instant {} needed for update factors",
            k - 1
        )))?;
        let phi = self.system.phi(k - 1);
        let q = self.system.q(k - 1);
        self.current()
            .iter()
            .zip(prev)
            .map(|(now, before)| {
                let prior = linalg::symmetrize(&(phi * &before.cov * phi.transpose() + q));
                Ok(&now.cov * linalg::spd_inverse(&prior, "prior covariance")?)
            })
            .collect()
    }
}
