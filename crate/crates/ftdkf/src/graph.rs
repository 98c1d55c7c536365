//! Sensor-network communication topology: classification, diameters and
//! communication weights.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Communication topology with nonnegative weights. Nodes are 0-based
/// internally; scenario files use 1-based ids.
///
/// An edge (a, b) means a transmits to b. Undirected topologies treat each
/// stored edge as carrying information both ways. Self-loops are not stored;
/// the unit i=j weight is applied by the delay gating, not here.
#[derive(Debug, Clone)]
pub struct Topology {
    pub node_count: usize,
    pub directed: bool,
    edges: Vec<(usize, usize)>,
    weights: DMatrix<f64>,
}

/// Structural class of a topology with its hop diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    UndirectedTree,
    ConnectedUndirected,
    StronglyConnectedDigraph,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyClass {
    pub kind: TopologyKind,
    /// d_g (or the directed d̄_g); 0 for Invalid.
    pub diameter: usize,
}

impl Topology {
    /// Build a topology with the default 1/|N_i| weights.
    pub fn new(node_count: usize, directed: bool, edges: &[(usize, usize)]) -> Result<Self> {
        let mut topo = Self {
            node_count,
            directed,
            edges: canonical_edges(node_count, directed, edges)?,
            weights: DMatrix::zeros(node_count, node_count),
        };
        topo.weights = default_weights(&topo)?;
        Ok(topo)
    }

    /// Build with an explicit weight matrix; entries must be nonnegative and
    /// positive exactly on incoming edges.
    pub fn with_weights(
        node_count: usize,
        directed: bool,
        edges: &[(usize, usize)],
        weights: DMatrix<f64>,
    ) -> Result<Self> {
        if weights.nrows() != node_count || weights.ncols() != node_count {
            return Err(Error::Dimension {
                context: "topology weight matrix",
                expected: node_count,
                got: weights.nrows(),
            });
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Scenario("negative communication weight".into()));
        }
        let topo = Self {
            node_count,
            directed,
            edges: canonical_edges(node_count, directed, edges)?,
            weights,
        };
        if !topo.directed {
            for &(a, b) in &topo.edges {
                if (topo.weights[(a, b)] - topo.weights[(b, a)]).abs() > 1e-12 {
                    return Err(Error::Scenario(format!(
                        "undirected weights must be symmetric; edge ({a},{b})"
                    )));
                }
            }
        }
        Ok(topo)
    }

    /// Unit weights on every edge (the exact-consensus setting).
    pub fn with_unit_weights(
        node_count: usize,
        directed: bool,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut topo = Self::new(node_count, directed, edges)?;
        let mut w = DMatrix::zeros(node_count, node_count);
        for i in 0..node_count {
            for j in topo.in_neighbors(i) {
                w[(i, j)] = 1.0;
            }
        }
        topo.weights = w;
        Ok(topo)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Nodes whose transmissions reach `i`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if b == i {
                    Some(a)
                } else if !self.directed && a == i {
                    Some(b)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Directed transmission links (src, dst), both ways for undirected
    /// topologies, in canonical order.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let mut links = Vec::new();
        for &(a, b) in &self.edges {
            links.push((a, b));
            if !self.directed {
                links.push((b, a));
            }
        }
        links.sort_unstable();
        links
    }

    /// Weight node `i` applies to data arriving from `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weight_matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight matrix with the unit self-weight on the diagonal, as used by
    /// the W^sigma positivity arguments.
    pub fn weight_matrix_with_self(&self) -> DMatrix<f64> {
        self.weights.clone() + DMatrix::identity(self.node_count, self.node_count)
    }
}

fn canonical_edges(
    node_count: usize,
    directed: bool,
    edges: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= node_count || b >= node_count {
            return Err(Error::Scenario(format!(
                "edge ({a},{b}) references a node outside 0..{node_count}"
            )));
        }
        if a == b {
            return Err(Error::Scenario(format!("self-loop on node {a}")));
        }
        if directed {
            out.push((a, b));
        } else {
            out.push((a.min(b), a.max(b)));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// BFS hop distances from `start`; usize::MAX marks unreachable nodes.
fn bfs_distances(topo: &Topology, start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; topo.node_count];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(a, b) in &topo.edges {
            let next = if a == u {
                Some(b)
            } else if !topo.directed && b == u {
                Some(a)
            } else {
                None
            };
            if let Some(v) = next {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

/// Classify the topology and compute its diameter.
pub fn classify(topo: &Topology) -> TopologyClass {
    let n = topo.node_count;
    if n == 0 {
        return TopologyClass {
            kind: TopologyKind::Invalid,
            diameter: 0,
        };
    }
    let all_reachable = (0..n).all(|s| bfs_distances(topo, s).iter().all(|&d| d != usize::MAX));
    if !all_reachable {
        return TopologyClass {
            kind: TopologyKind::Invalid,
            diameter: 0,
        };
    }
    let d = diameter(topo).expect("connected topology has a diameter");
    let kind = if topo.directed {
        TopologyKind::StronglyConnectedDigraph
    } else if topo.edges.len() == n - 1 {
        TopologyKind::UndirectedTree
    } else {
        TopologyKind::ConnectedUndirected
    };
    TopologyClass { kind, diameter: d }
}

/// Max over node pairs of the shortest-path hop count (all-pairs BFS).
pub fn diameter(topo: &Topology) -> Result<usize> {
    let mut best = 0;
    for s in 0..topo.node_count {
        let dist = bfs_distances(topo, s);
        for &d in &dist {
            if d == usize::MAX {
                return Err(Error::Scenario("diameter of a disconnected graph".into()));
            }
            best = best.max(d);
        }
    }
    Ok(best)
}

/// The reference weight rule: omega_ij = 1/|N_i| on incoming edges.
pub fn default_weights(topo: &Topology) -> Result<DMatrix<f64>> {
    let n = topo.node_count;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs = topo.in_neighbors(i);
        if nbrs.is_empty() && n > 1 {
            return Err(Error::Scenario(format!("node {i} has no incoming neighbors")));
        }
        for j in nbrs.iter() {
            w[(i, *j)] = 1.0 / nbrs.len() as f64;
        }
    }
    Ok(w)
}

/// A uniformly random labeled tree on n nodes: each node past the first
/// attaches to a uniformly chosen earlier node. Deterministic in the seed.
pub fn random_tree_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, &[0x7264_7472]);
    (1..n).map(|i| (rng.gen_range(0..i), i)).collect()
}

/// True iff every element of W^s is strictly positive.
pub fn weight_power_positive(w: &DMatrix<f64>, s: usize) -> bool {
    debug_assert!(s >= 1);
    let mut p = w.clone();
    for _ in 1..s {
        p *= w;
    }
    p.iter().all(|&x| x > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(n: usize) -> Topology {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Topology::new(n, false, &edges).unwrap()
    }

    #[test]
    fn classify_path_is_tree() {
        let c = classify(&path(3));
        assert_eq!(c.kind, TopologyKind::UndirectedTree);
        assert_eq!(c.diameter, 2);
    }

    #[test]
    fn classify_directed_cycle() {
        let topo = Topology::new(3, true, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let c = classify(&topo);
        assert_eq!(c.kind, TopologyKind::StronglyConnectedDigraph);
        assert_eq!(c.diameter, 2);
    }

    #[test]
    fn classify_disconnected_is_invalid() {
        let topo = Topology {
            node_count: 2,
            directed: false,
            edges: vec![],
            weights: DMatrix::zeros(2, 2),
        };
        assert_eq!(classify(&topo).kind, TopologyKind::Invalid);
    }

    #[test]
    fn diameter_star_and_path() {
        let star = Topology::new(6, false, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]).unwrap();
        assert_eq!(diameter(&star).unwrap(), 2);
        for n in 2..8 {
            assert_eq!(diameter(&path(n)).unwrap(), n - 1);
        }
    }

    #[test]
    fn default_weights_rule() {
        let star = Topology::new(5, false, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        // Hub has 4 neighbors: each incoming weight 0.25.
        for j in 1..5 {
            assert_eq!(star.weight(0, j), 0.25);
            // Leaves have a single neighbor: weight 1.
            assert_eq!(star.weight(j, 0), 1.0);
        }
        let complete = Topology::new(3, false, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert_eq!(complete.weight(i, j), expect);
            }
        }
    }

    #[test]
    fn weight_power_positive_on_directed_cycle() {
        let topo = Topology::new(3, true, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = topo.weight_matrix_with_self();
        assert!(weight_power_positive(&w, 2), "positive from power n-1 = 2");
        assert!(!weight_power_positive(&w, 1));
        assert!(!weight_power_positive(&DMatrix::identity(3, 3), 5));
    }

    #[test]
    fn strongly_connected_digraph_powers_become_positive() {
        // A few strongly connected digraphs up to n = 8 with positive edge
        // weights: the (n-1)-th power of W + I is entrywise positive.
        let cases: Vec<(usize, Vec<(usize, usize)>)> = vec![
            (4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
            (5, vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 2)]),
            (8, (0..8).map(|i| (i, (i + 1) % 8)).collect()),
            (6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]),
        ];
        for (n, edges) in cases {
            let topo = Topology::new(n, true, &edges).unwrap();
            assert_eq!(
                classify(&topo).kind,
                TopologyKind::StronglyConnectedDigraph
            );
            let w = topo.weight_matrix_with_self();
            assert!(weight_power_positive(&w, n - 1), "n = {n}");
        }
    }

    /// Two-sweep BFS eccentricity oracle, valid on trees.
    fn tree_diameter_two_sweep(topo: &Topology) -> usize {
        let d0 = bfs_distances(topo, 0);
        let far = d0.iter().enumerate().max_by_key(|(_, &d)| d).unwrap().0;
        *bfs_distances(topo, far).iter().max().unwrap()
    }

    /// Random tree via a Prufer-like random parent attachment.
    fn random_tree(n: usize, seed: u64) -> Topology {
        let mut state = seed.max(1);
        let mut edges = Vec::new();
        for v in 1..n {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let parent = (state >> 33) as usize % v;
            edges.push((parent, v));
        }
        Topology::new(n, false, &edges).unwrap()
    }

    #[test]
    fn tree_diameter_agrees_with_two_sweep_oracle() {
        for seed in 0..60u64 {
            let n = 2 + (seed as usize * 7) % 49;
            let t = random_tree(n, seed + 1);
            assert_eq!(diameter(&t).unwrap(), tree_diameter_two_sweep(&t));
        }
    }

    proptest! {
        #[test]
        fn classify_invariant_under_relabeling(seed in 1u64..500, n in 2usize..10) {
            let t = random_tree(n, seed);
            // Relabel nodes by the reversal permutation.
            let relabeled: Vec<_> = t
                .edges()
                .iter()
                .map(|&(a, b)| (n - 1 - a, n - 1 - b))
                .collect();
            let t2 = Topology::new(n, false, &relabeled).unwrap();
            prop_assert_eq!(classify(&t), classify(&t2));
        }
    }
}
