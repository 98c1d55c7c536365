//! Finite-time consensus message passing (FtDKF steps 1-2).
//!
//! Per-sensor information pairs are exchanged for d_g synchronous rounds
//! with echo cancellation: the message from i to j at round t is i's own
//! pair plus the weighted round-(t-1) messages from all neighbors except j.
//! On a tree this makes every node's aggregate the exact (weighted) global
//! sum after diameter-many rounds.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg;
use crate::model::SensorModel;

/// An information vector/matrix pair (psi, phi); the unit of consensus
/// messaging.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoPair {
    pub vec: DVector<f64>,
    pub mat: DMatrix<f64>,
}

impl InfoPair {
    pub fn zero(dim: usize) -> Self {
        Self {
            vec: DVector::zeros(dim),
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn axpy(&mut self, weight: f64, other: &InfoPair) {
        self.vec.axpy(weight, &other.vec, 1.0);
        self.mat += &other.mat * weight;
    }
}

/// psi = H^T R^{-1} y, phi = H^T R^{-1} H for one sensor at step k.
pub fn init_message(sensor: &SensorModel, k: usize, y: &DVector<f64>) -> Result<InfoPair> {
    let h = sensor.h(k);
    if y.len() != h.nrows() {
        return Err(Error::Dimension {
            context: "init_message measurement",
            expected: h.nrows(),
            got: y.len(),
        });
    }
    let r_inv = linalg::spd_inverse(sensor.r(k), "init_message measurement covariance")?;
    let ht_rinv = h.transpose() * r_inv;
    Ok(InfoPair {
        vec: &ht_rinv * y,
        mat: linalg::symmetrize(&(ht_rinv * h)),
    })
}

/// Theta/Omega aggregation: own pair plus gated-weighted incoming pairs.
pub fn aggregate(own: &InfoPair, incoming: &[(&InfoPair, f64)]) -> (DVector<f64>, DMatrix<f64>) {
    let mut acc = own.clone();
    for (pair, weight) in incoming {
        acc.axpy(*weight, pair);
    }
    (acc.vec, acc.mat)
}

/// Messages in flight after a given round, keyed by directed link (src, dst).
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    messages: HashMap<(usize, usize), InfoPair>,
}

impl RoundState {
    pub fn message(&self, src: usize, dst: usize) -> Option<&InfoPair> {
        self.messages.get(&(src, dst))
    }
}

/// Round-0 messages: every node sends its own pair on every link.
pub fn initial_round(topo: &Topology, own: &[InfoPair]) -> RoundState {
    let messages = topo
        .links()
        .into_iter()
        .map(|(src, dst)| ((src, dst), own[src].clone()))
        .collect();
    RoundState { round: 0, messages }
}

/// The echo-cancelled message from `src` to `dst` for the next round:
/// own_src plus weighted previous-round messages from all of src's
/// neighbors except dst.
pub fn outgoing_message(
    topo: &Topology,
    own: &[InfoPair],
    gate: &dyn Fn(usize, usize) -> f64,
    prev: &RoundState,
    src: usize,
    dst: usize,
) -> Result<InfoPair> {
    if !prev.messages.contains_key(&(src, dst)) {
        return Err(Error::Scenario(format!("({src},{dst}) is not a link")));
    }
    let mut out = own[src].clone();
    for l in topo.in_neighbors(src) {
        if l == dst {
            continue;
        }
        if let Some(m) = prev.message(l, src) {
            out.axpy(gate(src, l), m);
        }
    }
    Ok(out)
}

/// One synchronous round: all next-round messages from previous-round state.
pub fn step_round(
    topo: &Topology,
    own: &[InfoPair],
    gate: &dyn Fn(usize, usize) -> f64,
    prev: &RoundState,
) -> Result<RoundState> {
    let mut messages = HashMap::with_capacity(prev.messages.len());
    for &(src, dst) in prev.messages.keys() {
        messages.insert((src, dst), outgoing_message(topo, own, gate, prev, src, dst)?);
    }
    Ok(RoundState {
        round: prev.round + 1,
        messages,
    })
}

/// Final aggregates Theta_i/Omega_i from the messages of the round before.
fn aggregate_all(
    topo: &Topology,
    own: &[InfoPair],
    gate: &dyn Fn(usize, usize) -> f64,
    prev: &RoundState,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    (0..topo.node_count)
        .map(|i| {
            let incoming: Vec<(&InfoPair, f64)> = topo
                .in_neighbors(i)
                .into_iter()
                .filter_map(|j| prev.message(j, i).map(|m| (m, gate(i, j))))
                .collect();
            aggregate(&own[i], &incoming)
        })
        .collect()
}

/// Execute `rounds` synchronous rounds and return (Theta_i, Omega_i) for
/// every node. `gate(i, j)` is the delay-gated weight node i applies to the
/// link from j, fixed for the whole instant.
pub fn run_rounds(
    topo: &Topology,
    own: &[InfoPair],
    gate: &dyn Fn(usize, usize) -> f64,
    rounds: usize,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    if rounds < 1 {
        return Err(Error::Scenario("consensus needs at least one round".into()));
    }
    if own.len() != topo.node_count {
        return Err(Error::Dimension {
            context: "run_rounds inputs",
            expected: topo.node_count,
            got: own.len(),
        });
    }
    let mut state = initial_round(topo, own);
    for _ in 1..rounds {
        state = step_round(topo, own, gate, &state)?;
    }
    Ok(aggregate_all(topo, own, gate, &state))
}

/// Gate that applies the topology's stored weights with no delay gating.
pub fn ungated(topo: &Topology) -> impl Fn(usize, usize) -> f64 + '_ {
    |i, j| topo.weight(i, j)
}
