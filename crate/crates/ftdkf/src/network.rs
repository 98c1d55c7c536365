//! Delayed-network simulation: per-link time-varying delays, time-stamped
//! packets, per-sensor buffers, the arrival indicator gamma and the gated
//! communication weight.

use std::collections::HashMap;

use rand::Rng;

use crate::consensus::InfoPair;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::rng::{self, stream};

/// Distribution of per-packet delays over {0..max_delay}.
#[derive(Debug, Clone)]
pub struct DelayProfile {
    pub max_delay: usize,
    probs: Vec<f64>,
}

impl DelayProfile {
    pub fn uniform(max_delay: usize) -> Self {
        let p = 1.0 / (max_delay + 1) as f64;
        Self {
            max_delay,
            probs: vec![p; max_delay + 1],
        }
    }

    pub fn point_mass(delay: usize) -> Self {
        let mut probs = vec![0.0; delay + 1];
        probs[delay] = 1.0;
        Self {
            max_delay: delay,
            probs,
        }
    }

    pub fn explicit(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Scenario("empty delay distribution".into()));
        }
        if probs.iter().any(|p| *p < 0.0) {
            return Err(Error::Scenario("negative delay probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Scenario(format!(
                "delay probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            max_delay: probs.len() - 1,
            probs,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Deterministic delay draw for one (directed link, stamp); inverse-CDF on a
/// counter-keyed stream.
pub fn sample_delay(
    profile: &DelayProfile,
    master_seed: u64,
    run: u64,
    link: (usize, usize),
    stamp: usize,
) -> usize {
    if profile.max_delay == 0 {
        return 0;
    }
    let mut rng = rng::stream_rng(
        master_seed,
        &[
            stream::LINK_DELAY,
            run,
            link.0 as u64,
            link.1 as u64,
            stamp as u64,
        ],
    );
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (d, p) in profile.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return d;
        }
    }
    profile.max_delay
}

/// The data-transmission window D_t(k): an initial segment while the run
/// warms up, then a sliding window of the last d_t + 1 instants.
pub fn transmission_window(k: usize, d_t: usize) -> std::ops::RangeInclusive<usize> {
    if k <= d_t + 1 {
        0..=k
    } else {
        (k - d_t)..=k
    }
}

/// Per-sensor store of time-stamped neighbor payloads over the last L
/// instants.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    pub owner: usize,
    pub length: usize,
    cells: HashMap<(usize, usize), InfoPair>,
}

impl DelayBuffer {
    fn new(owner: usize, length: usize) -> Self {
        Self {
            owner,
            length,
            cells: HashMap::new(),
        }
    }

    /// Discard stamp k - L, keeping the window {k-L+1, ..., k}.
    fn shift(&mut self, k: usize) {
        let keep_from = (k + 1).saturating_sub(self.length);
        self.cells.retain(|&(_, stamp), _| stamp >= keep_from);
    }

    fn store(&mut self, src: usize, stamp: usize, payload: InfoPair) {
        // Exactly one payload per (src, stamp) cell.
        self.cells.entry((src, stamp)).or_insert(payload);
    }

    pub fn get(&self, src: usize, stamp: usize) -> Option<&InfoPair> {
        self.cells.get(&(src, stamp))
    }

    pub fn occupancy(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Debug, Clone)]
struct Packet {
    src: usize,
    dst: usize,
    stamp: usize,
    arrival: usize,
    payload: InfoPair,
}

/// The simulated network at one instant: in-flight packets plus every
/// sensor's buffer. A single writer advances time.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub profile: DelayProfile,
    pub buffer_length: usize,
    master_seed: u64,
    run: u64,
    now: Option<usize>,
    in_flight: Vec<Packet>,
    buffers: Vec<DelayBuffer>,
}

impl NetworkState {
    /// Default buffer length d_t + 2, safely above the d_t + 1 minimum.
    pub fn new(topo: &Topology, profile: DelayProfile, master_seed: u64, run: u64) -> Self {
        let buffer_length = profile.max_delay + 2;
        Self::with_buffer_length(topo, profile, master_seed, run, buffer_length)
    }

    pub fn with_buffer_length(
        topo: &Topology,
        profile: DelayProfile,
        master_seed: u64,
        run: u64,
        buffer_length: usize,
    ) -> Self {
        assert!(
            buffer_length > profile.max_delay,
            "buffer must cover the maximum delay"
        );
        Self {
            profile,
            buffer_length,
            master_seed,
            run,
            now: None,
            in_flight: Vec::new(),
            buffers: (0..topo.node_count)
                .map(|i| DelayBuffer::new(i, buffer_length))
                .collect(),
        }
    }

    pub fn now(&self) -> Option<usize> {
        self.now
    }

    pub fn buffer(&self, owner: usize) -> &DelayBuffer {
        &self.buffers[owner]
    }

    /// The delay the (src -> dst) packet stamped `stamp` experiences;
    /// deterministic in the seed.
    pub fn delay_of(&self, src: usize, dst: usize, stamp: usize) -> usize {
        sample_delay(&self.profile, self.master_seed, self.run, (src, dst), stamp)
    }

    /// Advance to instant k: shift buffers, transmit every sensor's stamp-k
    /// payload on every outgoing link, deliver everything arriving at k.
    /// Returns the delivered (dst, src, stamp) triples.
    pub fn advance(
        &mut self,
        topo: &Topology,
        k: usize,
        payloads: &[InfoPair],
    ) -> Result<Vec<(usize, usize, usize)>> {
        match self.now {
            Some(prev) if k <= prev => {
                return Err(Error::Scenario(format!(
                    "time regression: advance to {k} after {prev}"
                )));
            }
            _ => {}
        }
        self.now = Some(k);
        for buf in &mut self.buffers {
            buf.shift(k);
        }
        for (src, dst) in topo.links() {
            let delay = self.delay_of(src, dst, k);
            self.in_flight.push(Packet {
                src,
                dst,
                stamp: k,
                arrival: k + delay,
                payload: payloads[src].clone(),
            });
        }
        let mut delivered = Vec::new();
        let mut still_flying = Vec::with_capacity(self.in_flight.len());
        for pkt in self.in_flight.drain(..) {
            if pkt.arrival <= k {
                debug_assert!(
                    pkt.stamp + self.buffer_length > k,
                    "packet arrived for a discarded cell"
                );
                self.buffers[pkt.dst].store(pkt.src, pkt.stamp, pkt.payload);
                delivered.push((pkt.dst, pkt.src, pkt.stamp));
            } else {
                still_flying.push(pkt);
            }
        }
        delivered.sort_unstable();
        self.in_flight = still_flying;
        Ok(delivered)
    }

    /// Arrival indicator gamma^{i,j}_now(s): 1 iff the (j, s) packet is in
    /// i's buffer; identically 1 on the self edge.
    pub fn gamma(&self, dst: usize, src: usize, stamp: usize) -> Result<u8> {
        let now = self
            .now
            .ok_or_else(|| Error::Scenario("network not yet advanced".into()))?;
        if stamp > now {
            return Err(Error::Scenario(format!(
                "gamma queried for future stamp {stamp} at {now}"
            )));
        }
        if dst == src {
            return Ok(1);
        }
        if stamp + self.buffer_length <= now {
            return Err(Error::Scenario(format!(
                "stamp {stamp} is older than the buffer window at {now}"
            )));
        }
        Ok(u8::from(self.buffers[dst].get(src, stamp).is_some()))
    }

    /// The delay-gated communication weight: gamma * omega_ij off the
    /// diagonal, 1 on it.
    pub fn gated_weight(&self, topo: &Topology, dst: usize, src: usize, stamp: usize) -> Result<f64> {
        if dst == src {
            return Ok(1.0);
        }
        if !topo.in_neighbors(dst).contains(&src) {
            return Err(Error::Scenario(format!(
                "({src},{dst}) does not carry information"
            )));
        }
        Ok(f64::from(self.gamma(dst, src, stamp)?) * topo.weight(dst, src))
    }
}
