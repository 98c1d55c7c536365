//! Scenario files: the JSON schema describing a tracking setup (dynamics,
//! sensors, topology, delays, run controls), its loader/validator, and the
//! built-in reference scenarios.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::model::{MatrixSchedule, SensorModel, SystemModel};
use crate::network::DelayProfile;

/// How (and whether) local estimates are combined each instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Matrix,
    Vector,
    None,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matrix" => Some(Self::Matrix),
            "vector" => Some(Self::Vector),
            "none" => Some(Self::None),
            _ => None,
        }
    }
}

/// Estimators a run can exercise side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Proposed,
    DropLate,
    Centralized,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ftdkf" => Some(Self::Proposed),
            "droplate" => Some(Self::DropLate),
            "centralized" => Some(Self::Centralized),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Proposed => "ftdkf",
            Self::DropLate => "droplate",
            Self::Centralized => "centralized",
        }
    }
}

/// A fully validated, ready-to-run tracking scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub topology: Topology,
    pub delay: DelayProfile,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub fusion: FusionMode,
    pub estimators: Vec<EstimatorKind>,
}

/// A square matrix given either as a scalar multiple of the identity or as
/// explicit rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn square(&self, dim: usize, field: &str, problems: &mut Vec<String>) -> DMatrix<f64> {
        match self {
            MatrixSpec::Scalar(v) => DMatrix::identity(dim, dim) * *v,
            MatrixSpec::Rows(rows) => rows_to_matrix(rows, Some(dim), Some(dim), field, problems),
        }
    }
}

fn rows_to_matrix(
    rows: &[Vec<f64>],
    want_rows: Option<usize>,
    want_cols: Option<usize>,
    field: &str,
    problems: &mut Vec<String>,
) -> DMatrix<f64> {
    if rows.is_empty() {
        problems.push(format!("{field} has no rows"));
        return DMatrix::zeros(0, 0);
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        problems.push(format!("{field} rows have inconsistent lengths"));
        return DMatrix::zeros(0, 0);
    }
    if let Some(n) = want_rows {
        if rows.len() != n {
            problems.push(format!("{field} has {} rows, expected {n}", rows.len()));
        }
    }
    if let Some(n) = want_cols {
        if cols != n {
            problems.push(format!("{field} has {cols} columns, expected {n}"));
        }
    }
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TransitionSpec {
    /// The built-in constant-acceleration model with the given period.
    ConstantAcceleration { constant_acceleration_period: f64 },
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    state_dim: usize,
    transition: TransitionSpec,
    process_cov: MatrixSpec,
    init_mean: Vec<f64>,
    init_cov: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSection {
    id: usize,
    obs: Vec<Vec<f64>>,
    meas_cov: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySection {
    nodes: usize,
    #[serde(default)]
    directed: bool,
    edges: Vec<(usize, usize)>,
    /// "degree" (default) or "unit".
    #[serde(default)]
    weights: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelaySection {
    max_delay: usize,
    /// "uniform" (default) or an explicit probability vector over
    /// {0..max_delay}.
    #[serde(default)]
    distribution: Option<DistributionSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DistributionSpec {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    horizon: usize,
    runs: usize,
    seed: u64,
    /// "matrix" | "vector" (default) | "none".
    #[serde(default)]
    fusion: Option<String>,
    /// Any of "ftdkf", "droplate", "centralized"; defaults to all three.
    #[serde(default)]
    estimators: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    system: SystemSection,
    sensors: Vec<SensorSection>,
    topology: TopologySection,
    delays: DelaySection,
    run: RunSection,
}

/// Parse and validate a scenario from JSON text.
pub fn from_json(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    compile(file)
}

/// Load a scenario file from disk.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    from_json(&std::fs::read_to_string(path)?)
}

fn compile(file: ScenarioFile) -> Result<Scenario> {
    let mut problems = Vec::new();
    let dim = file.system.state_dim;
    if dim == 0 {
        problems.push("system.state_dim must be positive".to_string());
    }

    let transition = match &file.system.transition {
        TransitionSpec::ConstantAcceleration {
            constant_acceleration_period,
        } => {
            if dim != 3 {
                problems.push(format!(
                    "system.transition: constant-acceleration model needs state_dim 3, got {dim}"
                ));
            }
            crate::model::constant_acceleration_phi(*constant_acceleration_period)
        }
        TransitionSpec::Rows(rows) => {
            rows_to_matrix(rows, Some(dim), Some(dim), "system.transition", &mut problems)
        }
    };
    let process_cov = file.system.process_cov.square(dim, "system.process_cov", &mut problems);
    let init_cov = file.system.init_cov.square(dim, "system.init_cov", &mut problems);
    if file.system.init_mean.len() != dim {
        problems.push(format!(
            "system.init_mean has {} entries, expected {dim}",
            file.system.init_mean.len()
        ));
    }

    if file.sensors.is_empty() {
        problems.push("sensors must not be empty".to_string());
    }
    let mut sensors = Vec::with_capacity(file.sensors.len());
    for (at, s) in file.sensors.iter().enumerate() {
        if s.id != at + 1 {
            problems.push(format!(
                "sensors[{at}].id is {}, expected the 1-based position {}",
                s.id,
                at + 1
            ));
        }
        let h = rows_to_matrix(&s.obs, None, Some(dim), &format!("sensors[{at}].obs"), &mut problems);
        let m = h.nrows();
        let r = s.meas_cov.square(m.max(1), &format!("sensors[{at}].meas_cov"), &mut problems);
        sensors.push(SensorModel {
            sensor_id: s.id,
            obs: MatrixSchedule::Constant(h),
            meas_cov: MatrixSchedule::Constant(r),
        });
    }

    if file.topology.nodes != file.sensors.len() {
        problems.push(format!(
            "topology.nodes is {}, but {} sensors are defined",
            file.topology.nodes,
            file.sensors.len()
        ));
    }
    for (at, &(a, b)) in file.topology.edges.iter().enumerate() {
        if a >= file.topology.nodes || b >= file.topology.nodes {
            problems.push(format!("topology.edges[{at}] = ({a}, {b}) is out of range"));
        }
    }
    let topology = match file.topology.weights.as_deref() {
        None | Some("degree") => {
            Topology::new(file.topology.nodes, file.topology.directed, &file.topology.edges)
        }
        Some("unit") => Topology::with_unit_weights(
            file.topology.nodes,
            file.topology.directed,
            &file.topology.edges,
        ),
        Some(other) => {
            problems.push(format!(
                "topology.weights is \"{other}\", expected \"degree\" or \"unit\""
            ));
            Topology::new(file.topology.nodes, file.topology.directed, &file.topology.edges)
        }
    };
    let topology = match topology {
        Ok(t) => Some(t),
        Err(e) => {
            problems.push(format!("topology: {e}"));
            None
        }
    };

    let delay = match &file.delays.distribution {
        None => Ok(DelayProfile::uniform(file.delays.max_delay)),
        Some(DistributionSpec::Named(name)) if name == "uniform" => {
            Ok(DelayProfile::uniform(file.delays.max_delay))
        }
        Some(DistributionSpec::Named(name)) => Err(format!(
            "delays.distribution is \"{name}\", expected \"uniform\" or a probability vector"
        )),
        Some(DistributionSpec::Explicit(probs)) => {
            if probs.len() != file.delays.max_delay + 1 {
                Err(format!(
                    "delays.distribution has {} entries, expected max_delay + 1 = {}",
                    probs.len(),
                    file.delays.max_delay + 1
                ))
            } else {
                DelayProfile::explicit(probs.clone()).map_err(|e| format!("delays.distribution: {e}"))
            }
        }
    };
    let delay = match delay {
        Ok(d) => Some(d),
        Err(msg) => {
            problems.push(msg);
            None
        }
    };

    if file.run.horizon == 0 {
        problems.push("run.horizon must be positive".to_string());
    }
    if file.run.runs == 0 {
        problems.push("run.runs must be positive".to_string());
    }
    let fusion = match file.run.fusion.as_deref() {
        None => FusionMode::Vector,
        Some(s) => FusionMode::parse(s).unwrap_or_else(|| {
            problems.push(format!(
                "run.fusion is \"{s}\", expected \"matrix\", \"vector\" or \"none\""
            ));
            FusionMode::Vector
        }),
    };
    let estimators = match &file.run.estimators {
        None => vec![
            EstimatorKind::Proposed,
            EstimatorKind::DropLate,
            EstimatorKind::Centralized,
        ],
        Some(names) => {
            let mut kinds = Vec::new();
            for (at, name) in names.iter().enumerate() {
                match EstimatorKind::parse(name) {
                    Some(kind) if !kinds.contains(&kind) => kinds.push(kind),
                    Some(_) => problems.push(format!(
                        "run.estimators[{at}] repeats \"{name}\""
                    )),
                    None => problems.push(format!(
                        "run.estimators[{at}] is \"{name}\", expected \
                         \"ftdkf\", \"droplate\" or \"centralized\""
                    )),
                }
            }
            if kinds.is_empty() {
                problems.push("run.estimators selects nothing".to_string());
            }
            kinds
        }
    };

    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(Scenario {
        name: file.name,
        system: SystemModel {
            state_dim: dim,
            transition: MatrixSchedule::Constant(transition),
            process_cov: MatrixSchedule::Constant(process_cov),
            init_mean: DVector::from_vec(file.system.init_mean),
            init_cov,
        },
        sensors,
        topology: topology.expect("validated above"),
        delay: delay.expect("validated above"),
        horizon: file.run.horizon,
        runs: file.run.runs,
        seed: file.run.seed,
        fusion,
        estimators,
    })
}

/// Measurement-noise variances of the 12 reference sensors.
pub const REFERENCE_R: [f64; 12] = [0.8, 1.0, 2.0, 1.0, 0.5, 1.5, 1.0, 1.0, 0.1, 1.0, 1.5, 1.0];

/// The reference tracking model: constant-acceleration target (period
/// 0.01), unit process covariance, twelve single-axis sensors cycling
/// through position / velocity / acceleration.
pub fn reference_model() -> (SystemModel, Vec<SensorModel>) {
    let system = SystemModel {
        state_dim: 3,
        transition: MatrixSchedule::Constant(crate::model::constant_acceleration_phi(0.01)),
        process_cov: MatrixSchedule::Constant(DMatrix::identity(3, 3)),
        init_mean: DVector::zeros(3),
        init_cov: DMatrix::identity(3, 3),
    };
    let sensors = (0..12)
        .map(|i| {
            let mut h = DMatrix::zeros(1, 3);
            h[(0, i % 3)] = 1.0;
            SensorModel {
                sensor_id: i + 1,
                obs: MatrixSchedule::Constant(h),
                meas_cov: MatrixSchedule::Constant(DMatrix::from_element(1, 1, REFERENCE_R[i])),
            }
        })
        .collect();
    (system, sensors)
}

/// Edges of the 12-node reference tree (hop diameter 5).
pub const REFERENCE_TREE_EDGES: [(usize, usize); 11] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 4),
    (1, 5),
    (2, 6),
    (2, 7),
    (3, 8),
    (3, 9),
    (4, 10),
    (5, 11),
];

/// Edges of the 12-node strongly connected directed ring used for the
/// digraph case.
pub fn reference_ring_edges() -> Vec<(usize, usize)> {
    (0..12).map(|i| (i, (i + 1) % 12)).collect()
}

fn reference_scenario(name: &str, topology: Topology) -> Scenario {
    let (system, sensors) = reference_model();
    Scenario {
        name: name.to_string(),
        system,
        sensors,
        topology,
        delay: DelayProfile::uniform(4),
        horizon: 500,
        runs: 200,
        seed: 1,
        fusion: FusionMode::Vector,
        estimators: vec![
            EstimatorKind::Proposed,
            EstimatorKind::DropLate,
            EstimatorKind::Centralized,
        ],
    }
}

/// Built-in undirected-tree reference scenario.
pub fn reference_case1() -> Scenario {
    let topo = Topology::new(12, false, &REFERENCE_TREE_EDGES).expect("static edges are valid");
    reference_scenario("paper_sec5_case1", topo)
}

/// Built-in strongly-connected-digraph reference scenario.
pub fn reference_case2() -> Scenario {
    let topo =
        Topology::new(12, true, &reference_ring_edges()).expect("static edges are valid");
    reference_scenario("paper_sec5_case2", topo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, TopologyKind};
    use crate::model;
    use approx::assert_relative_eq;

    #[test]
    fn reference_model_shape() {
        let (system, sensors) = reference_model();
        assert_eq!(system.state_dim, 3);
        assert_eq!(sensors.len(), 12);
        for (i, s) in sensors.iter().enumerate() {
            assert_eq!(s.sensor_id, i + 1);
            assert_eq!(s.h(0).nrows(), 1);
            assert_relative_eq!(s.h(0)[(0, i % 3)], 1.0);
            assert_relative_eq!(s.r(0)[(0, 0)], REFERENCE_R[i]);
        }
        let rep = model::validate_model(&system, &sensors);
        assert!(rep.ok(), "violations: {:?}", rep.violations);
    }

    #[test]
    fn reference_tree_classifies_with_diameter_five() {
        let s = reference_case1();
        let class = graph::classify(&s.topology);
        assert_eq!(class.kind, TopologyKind::UndirectedTree);
        assert_eq!(class.diameter, 5);
        assert_eq!(s.delay.max_delay, 4);
        assert_eq!(s.horizon, 500);
        assert_eq!(s.runs, 200);
    }

    #[test]
    fn reference_ring_is_strongly_connected() {
        let s = reference_case2();
        let class = graph::classify(&s.topology);
        assert_eq!(class.kind, TopologyKind::StronglyConnectedDigraph);
        assert_eq!(class.diameter, 11);
    }

    fn case1_path() -> String {
        format!(
            "{}/../../scenarios/paper_sec5_case1.json",
            env!("CARGO_MANIFEST_DIR")
        )
    }

    #[test]
    fn shipped_case1_file_matches_builtin() {
        let loaded = load_scenario(case1_path()).unwrap();
        let builtin = reference_case1();
        assert_eq!(loaded.name, builtin.name);
        assert_eq!(loaded.sensors.len(), builtin.sensors.len());
        assert_eq!(loaded.topology.edges(), builtin.topology.edges());
        assert_relative_eq!(
            loaded.system.phi(0).clone(),
            builtin.system.phi(0).clone(),
            epsilon = 1e-15
        );
        assert_eq!(loaded.delay.max_delay, 4);
        assert_eq!((loaded.horizon, loaded.runs, loaded.seed), (500, 200, 1));
        for (a, b) in loaded.sensors.iter().zip(&builtin.sensors) {
            assert_relative_eq!(a.h(0).clone(), b.h(0).clone());
            assert_relative_eq!(a.r(0).clone(), b.r(0).clone());
        }
    }

    #[test]
    fn shipped_case2_file_matches_builtin() {
        let path = format!(
            "{}/../../scenarios/paper_sec5_case2.json",
            env!("CARGO_MANIFEST_DIR")
        );
        let loaded = load_scenario(path).unwrap();
        let builtin = reference_case2();
        assert!(loaded.topology.directed);
        assert_eq!(loaded.topology.edges(), builtin.topology.edges());
    }

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "name": "mini",
            "system": {
                "state_dim": 2,
                "transition": [[1.0, 0.1], [0.0, 1.0]],
                "process_cov": 0.1,
                "init_mean": [0.0, 0.0],
                "init_cov": 1.0
            },
            "sensors": [
                {"id": 1, "obs": [[1.0, 0.0]], "meas_cov": 0.5},
                {"id": 2, "obs": [[0.0, 1.0]], "meas_cov": [[0.8]]}
            ],
            "topology": {"nodes": 2, "edges": [[0, 1]]},
            "delays": {"max_delay": 2},
            "run": {"horizon": 10, "runs": 3, "seed": 7}
        })
    }

    #[test]
    fn minimal_scenario_round_trips() {
        let s = from_json(&minimal_json().to_string()).unwrap();
        assert_eq!(s.system.state_dim, 2);
        assert_relative_eq!(s.system.q(0)[(0, 0)], 0.1);
        assert_relative_eq!(s.sensors[1].r(0)[(0, 0)], 0.8);
        assert_eq!(s.delay.max_delay, 2);
        assert_relative_eq!(s.delay.probabilities()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert!(!s.topology.directed);
    }

    #[test]
    fn validation_names_offending_fields() {
        let mut v = minimal_json();
        v["system"]["init_mean"] = serde_json::json!([0.0]);
        v["sensors"][1]["id"] = serde_json::json!(5);
        v["topology"]["edges"] = serde_json::json!([[0, 3]]);
        v["run"]["horizon"] = serde_json::json!(0);
        let err = from_json(&v.to_string()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("system.init_mean"), "{text}");
        assert!(text.contains("sensors[1].id"), "{text}");
        assert!(text.contains("topology.edges[0]"), "{text}");
        assert!(text.contains("run.horizon"), "{text}");
    }

    #[test]
    fn run_defaults_and_overrides() {
        let s = from_json(&minimal_json().to_string()).unwrap();
        assert_eq!(s.fusion, FusionMode::Vector);
        assert_eq!(
            s.estimators,
            vec![
                EstimatorKind::Proposed,
                EstimatorKind::DropLate,
                EstimatorKind::Centralized
            ]
        );
        let mut v = minimal_json();
        v["run"]["fusion"] = serde_json::json!("matrix");
        v["run"]["estimators"] = serde_json::json!(["ftdkf"]);
        let s = from_json(&v.to_string()).unwrap();
        assert_eq!(s.fusion, FusionMode::Matrix);
        assert_eq!(s.estimators, vec![EstimatorKind::Proposed]);
        v["run"]["fusion"] = serde_json::json!("median");
        let err = from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("run.fusion"), "{err}");
        v["run"]["fusion"] = serde_json::json!("vector");
        v["run"]["estimators"] = serde_json::json!(["ftdkf", "psychic"]);
        let err = from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("run.estimators[1]"), "{err}");
    }

    #[test]
    fn missing_horizon_names_the_field() {
        let mut v = minimal_json();
        v["run"].as_object_mut().unwrap().remove("horizon");
        let err = from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = minimal_json();
        v["run"]["hroizon"] = serde_json::json!(10);
        assert!(from_json(&v.to_string()).is_err());
    }

    #[test]
    fn bad_distribution_is_rejected() {
        let mut v = minimal_json();
        v["delays"]["distribution"] = serde_json::json!([0.5, 0.5]);
        let err = from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("delays.distribution"), "{err}");
        v["delays"]["distribution"] = serde_json::json!([0.2, 0.2, 0.2]);
        assert!(from_json(&v.to_string()).is_err());
        v["delays"]["distribution"] = serde_json::json!([0.5, 0.25, 0.25]);
        assert!(from_json(&v.to_string()).is_ok());
    }

    #[test]
    fn constant_acceleration_shorthand() {
        let mut v = minimal_json();
        v["system"] = serde_json::json!({
            "state_dim": 3,
            "transition": {"constant_acceleration_period": 0.01},
            "process_cov": 1.0,
            "init_mean": [0.0, 0.0, 0.0],
            "init_cov": 1.0
        });
        v["sensors"] = serde_json::json!([
            {"id": 1, "obs": [[1.0, 0.0, 0.0]], "meas_cov": 0.5},
            {"id": 2, "obs": [[0.0, 1.0, 0.0]], "meas_cov": 0.5}
        ]);
        let s = from_json(&v.to_string()).unwrap();
        assert_relative_eq!(
            s.system.phi(0).clone(),
            crate::model::constant_acceleration_phi(0.01),
            epsilon = 1e-15
        );
    }
}
