//! Comparison estimators: the all-measurements centralized Kalman filter
//! and the drop-late distributed filter that discards every packet not
//! arriving in the instant it was produced.

use nalgebra::DVector;

use crate::consensus::{self, InfoPair};
use crate::error::{Error, Result};
use crate::filter::{self, LocalEstimate};
use crate::graph::Topology;
use crate::model::{SensorModel, SystemModel};
use crate::network::NetworkState;

/// Centralized information filter over all sensors at once; the accuracy
/// ceiling every distributed scheme is measured against.
pub struct CentralizedKf {
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    est: LocalEstimate,
    last_k: usize,
}

impl CentralizedKf {
    pub fn new(system: SystemModel, sensors: Vec<SensorModel>) -> Self {
        let est = LocalEstimate {
            sensor_id: 0,
            state: system.init_mean.clone(),
            cov: system.init_cov.clone(),
        };
        Self {
            system,
            sensors,
            est,
            last_k: 0,
        }
    }

    pub fn step(&mut self, k: usize, measurements: &[DVector<f64>]) -> Result<()> {
        if k != self.last_k + 1 {
            return Err(Error::Scenario(format!(
                "centralized filter stepped to {k}, expected {}",
                self.last_k + 1
            )));
        }
        let prior = filter::predict(&self.est, self.system.phi(k - 1), self.system.q(k - 1));
        let dim = self.system.state_dim;
        let mut total = InfoPair::zero(dim);
        for (s, y) in self.sensors.iter().zip(measurements) {
            total.axpy(1.0, &consensus::init_message(s, k, y)?);
        }
        self.est = filter::update(&prior, &total.vec, &total.mat)?;
        self.last_k = k;
        Ok(())
    }

    pub fn current(&self) -> &LocalEstimate {
        &self.est
    }
}

/// Distributed filter with the same consensus pipeline but no delay buffer:
/// the gate admits only packets whose sampled delay is zero, and nothing is
/// ever reprocessed.
pub struct DropLateBank {
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub topology: Topology,
    pub rounds: usize,
    current: Vec<LocalEstimate>,
    last_k: usize,
}

impl DropLateBank {
    pub fn new(
        system: SystemModel,
        sensors: Vec<SensorModel>,
        topology: Topology,
        rounds: usize,
    ) -> Self {
        let current = sensors
            .iter()
            .map(|s| LocalEstimate {
                sensor_id: s.sensor_id,
                state: system.init_mean.clone(),
                cov: system.init_cov.clone(),
            })
            .collect();
        Self {
            system,
            sensors,
            topology,
            rounds: rounds.max(1),
            current,
            last_k: 0,
        }
    }

    /// One instant: only delay-zero packets pass the gate. The network is
    /// read for its deterministic per-link delays; its buffers are not used.
    pub fn step(
        &mut self,
        k: usize,
        measurements: &[DVector<f64>],
        net: &NetworkState,
    ) -> Result<()> {
        if k != self.last_k + 1 {
            return Err(Error::Scenario(format!(
                "drop-late filter stepped to {k}, expected {}",
                self.last_k + 1
            )));
        }
        let own: Vec<InfoPair> = self
            .sensors
            .iter()
            .zip(measurements)
            .map(|(s, y)| consensus::init_message(s, k, y))
            .collect::<Result<_>>()?;
        let gate = |i: usize, j: usize| {
            if i == j || net.delay_of(j, i, k) == 0 {
                self.topology.weight(i, j)
            } else {
                0.0
            }
        };
        let aggregates = consensus::run_rounds(&self.topology, &own, &gate, self.rounds)?;
        let phi = self.system.phi(k - 1);
        let q = self.system.q(k - 1);
        let mut next = Vec::with_capacity(self.current.len());
        for (est, (theta, omega)) in self.current.iter().zip(&aggregates) {
            let prior = filter::predict(est, phi, q);
            next.push(filter::update(&prior, theta, omega)?);
        }
        self.current = next;
        self.last_k = k;
        Ok(())
    }

    pub fn current(&self) -> &Vec<LocalEstimate> {
        &self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::MatrixSchedule;
    use crate::network::DelayProfile;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_system() -> SystemModel {
        SystemModel {
            state_dim: 1,
            transition: MatrixSchedule::Constant(DMatrix::from_element(1, 1, 1.0)),
            process_cov: MatrixSchedule::Constant(DMatrix::from_element(1, 1, 1.0)),
            init_mean: DVector::zeros(1),
            init_cov: DMatrix::from_element(1, 1, 1.0),
        }
    }

    fn scalar_sensor(id: usize, r: f64) -> SensorModel {
        SensorModel {
            sensor_id: id,
            obs: MatrixSchedule::Constant(DMatrix::from_element(1, 1, 1.0)),
            meas_cov: MatrixSchedule::Constant(DMatrix::from_element(1, 1, r)),
        }
    }

    #[test]
    fn centralized_single_sensor_matches_classical_recursion() {
        let mut kf = CentralizedKf::new(scalar_system(), vec![scalar_sensor(1, 1.0)]);
        // By hand: P0=1 -> prior 2 -> post 2/3; prior 5/3 -> post 5/8.
        kf.step(1, &[DVector::from_element(1, 1.0)]).unwrap();
        assert_relative_eq!(kf.current().cov[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        kf.step(2, &[DVector::from_element(1, 0.0)]).unwrap();
        assert_relative_eq!(kf.current().cov[(0, 0)], 5.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn centralized_two_sensors_equal_one_sharper_sensor() {
        // Two R=2 sensors carry the information of one R=1 sensor; feeding
        // the same y keeps states identical too.
        let mut two = CentralizedKf::new(
            scalar_system(),
            vec![scalar_sensor(1, 2.0), scalar_sensor(2, 2.0)],
        );
        let mut one = CentralizedKf::new(scalar_system(), vec![scalar_sensor(1, 1.0)]);
        for k in 1..=20 {
            let y = DVector::from_element(1, (k as f64 * 0.3).sin());
            two.step(k, &[y.clone(), y.clone()]).unwrap();
            one.step(k, &[y]).unwrap();
            assert_relative_eq!(
                two.current().cov[(0, 0)],
                one.current().cov[(0, 0)],
                epsilon = 1e-12
            );
            assert_relative_eq!(two.current().state[0], one.current().state[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn centralized_rejects_out_of_order_step() {
        let mut kf = CentralizedKf::new(scalar_system(), vec![scalar_sensor(1, 1.0)]);
        assert!(kf.step(2, &[DVector::from_element(1, 0.0)]).is_err());
    }

    fn pair_setup() -> (SystemModel, Vec<SensorModel>, Topology) {
        let system = scalar_system();
        let sensors = vec![scalar_sensor(1, 1.0), scalar_sensor(2, 0.5)];
        let topo = Topology::with_unit_weights(2, false, &[(0, 1)]).unwrap();
        (system, sensors, topo)
    }

    #[test]
    fn drop_late_with_zero_delays_matches_buffered_filter() {
        let (system, sensors, topo) = pair_setup();
        let mut drop = DropLateBank::new(system.clone(), sensors.clone(), topo.clone(), 1);
        let mut bank = crate::filter::FilterBank::new(system, sensors, topo.clone(), 0, 1);
        let mut net_a = NetworkState::new(&topo, DelayProfile::point_mass(0), 3, 0);
        let mut net_b = NetworkState::new(&topo, DelayProfile::point_mass(0), 3, 0);
        for k in 1..=25 {
            let ys = vec![
                DVector::from_element(1, (k as f64).sin()),
                DVector::from_element(1, (k as f64).cos()),
            ];
            net_a.advance(&topo, k, &bank.info_pairs(k, &ys).unwrap()).unwrap();
            drop.step(k, &ys, &net_a).unwrap();
            bank.step(k, &ys, &mut net_b).unwrap();
            for (a, b) in drop.current().iter().zip(bank.current().iter()) {
                assert_relative_eq!(a.state, b.state, epsilon = 1e-9);
                assert_relative_eq!(a.cov, b.cov, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn drop_late_all_packets_late_is_isolated_filtering() {
        let (system, sensors, topo) = pair_setup();
        let mut drop = DropLateBank::new(system.clone(), sensors.clone(), topo.clone(), 1);
        let mut net = NetworkState::new(&topo, DelayProfile::point_mass(1), 3, 0);
        // Isolated references: each node filters on its own measurement only.
        let mut solo: Vec<CentralizedKf> = sensors
            .iter()
            .map(|s| CentralizedKf::new(system.clone(), vec![s.clone()]))
            .collect();
        for k in 1..=15 {
            let ys = vec![
                DVector::from_element(1, (k as f64).sin()),
                DVector::from_element(1, (k as f64).cos()),
            ];
            net.advance(&topo, k, &drop_payloads(&drop, k, &ys)).unwrap();
            drop.step(k, &ys, &net).unwrap();
            for (i, kf) in solo.iter_mut().enumerate() {
                kf.step(k, &[ys[i].clone()]).unwrap();
                assert_relative_eq!(
                    drop.current()[i].state,
                    kf.current().state,
                    epsilon = 1e-9
                );
            }
        }
    }

    fn drop_payloads(bank: &DropLateBank, k: usize, ys: &[DVector<f64>]) -> Vec<InfoPair> {
        bank.sensors
            .iter()
            .zip(ys)
            .map(|(s, y)| crate::consensus::init_message(s, k, y).unwrap())
            .collect()
    }

    #[test]
    fn drop_late_covariance_never_better_than_centralized() {
        let (system, sensors, topo) = pair_setup();
        let mut drop = DropLateBank::new(system.clone(), sensors.clone(), topo.clone(), 1);
        let mut central = CentralizedKf::new(system, sensors);
        let mut net = NetworkState::new(&topo, DelayProfile::uniform(2), 7, 0);
        for k in 1..=30 {
            let ys = vec![
                DVector::from_element(1, (k as f64).sin()),
                DVector::from_element(1, (k as f64).cos()),
            ];
            net.advance(&topo, k, &drop_payloads(&drop, k, &ys)).unwrap();
            drop.step(k, &ys, &net).unwrap();
            central.step(k, &ys).unwrap();
            for est in drop.current() {
                let diff = &est.cov - &central.current().cov;
                assert!(linalg::min_eigenvalue(&diff) >= -1e-9);
            }
        }
    }
}
