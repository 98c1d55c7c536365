use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ftdkf::error::Result;
use ftdkf::scenario::{EstimatorKind, FusionMode, Scenario};
use ftdkf::{bounds, consensus, fusion, graph, linalg, metrics, model, scenario, sim, Error};

/// Anti-delay distributed Kalman filtering simulator.
#[derive(Parser)]
#[command(name = "ftdkf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and emit per-instant MSE records as CSV.
    Run(RunArgs),
    /// Report the resolved bound constants, the covariance floor and the
    /// maximum allowable delay for a precision target.
    Bounds(BoundsArgs),
    /// Check a scenario file and its model assumptions.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Brute-force small-instance checks of the consensus and fusion
    /// pipelines.
    Oracle {
        /// Number of random instances per check.
        #[arg(long, default_value_t = 25)]
        cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Replace the scenario's maximum delay (uniform distribution).
    #[arg(long)]
    dt_override: Option<usize>,
    /// Comma-separated subset of ftdkf,droplate,centralized.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// matrix | vector | none.
    #[arg(long)]
    fusion: Option<String>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    dt_override: Option<usize>,
    /// Precision target (worst acceptable variance scale) for the maximum
    /// allowable delay.
    #[arg(long)]
    target: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Oracle { cases, seed } => cmd_oracle(cases, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::BoundUndefined => ExitCode::from(4),
                Error::Numerical(_) | Error::Singular(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn apply_run_overrides(scenario: &mut Scenario, args: &RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(runs) = args.runs {
        if runs == 0 {
            return Err(Error::Validation(vec!["--runs must be positive".into()]));
        }
        scenario.runs = runs;
    }
    if let Some(d_t) = args.dt_override {
        scenario.delay = ftdkf::network::DelayProfile::uniform(d_t);
    }
    if let Some(kinds) = &args.estimators {
        let mut parsed = Vec::new();
        for name in kinds {
            match EstimatorKind::parse(name) {
                Some(kind) if !parsed.contains(&kind) => parsed.push(kind),
                Some(_) => {}
                None => {
                    return Err(Error::Validation(vec![format!(
                        "--estimators entry \"{name}\" is not one of ftdkf, droplate, centralized"
                    )]))
                }
            }
        }
        if parsed.is_empty() {
            return Err(Error::Validation(vec![
                "--estimators selects nothing".into()
            ]));
        }
        scenario.estimators = parsed;
    }
    if let Some(mode) = &args.fusion {
        scenario.fusion = FusionMode::parse(mode).ok_or_else(|| {
            Error::Validation(vec![format!(
                "--fusion \"{mode}\" is not one of matrix, vector, none"
            )])
        })?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut sc = scenario::load_scenario(&args.scenario)?;
    apply_run_overrides(&mut sc, &args)?;
    let report = model::validate_model(&sc.system, &sc.sensors);
    if !report.ok() {
        return Err(Error::Validation(report.violations));
    }
    let records = sim::run_monte_carlo(&sc)?;
    match &args.out {
        Some(path) => {
            metrics::emit_metrics(&records, path)?;
            for kind in &sc.estimators {
                let tail =
                    metrics::steady_state_mean(&sim::mse_series(&records, kind.label()));
                eprintln!("{}: steady-state MSE {tail:.6}", kind.label());
            }
        }
        None => print!("{}", metrics::to_csv(&records)),
    }
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let mut sc = scenario::load_scenario(&args.scenario)?;
    if let Some(d_t) = args.dt_override {
        sc.delay = ftdkf::network::DelayProfile::uniform(d_t);
    }
    let resolved = bounds::resolve_scenario(&sc)?;
    let p = &resolved.params;
    println!("scenario: {}", sc.name);
    println!(
        "topology: {} ({} nodes, diameter {})",
        if sc.topology.directed { "directed" } else { "undirected" },
        sc.topology.node_count,
        graph::diameter(&sc.topology)?
    );
    println!("d_t: {} (configured)", p.d_t);
    println!("eta: {:.6} (computed: min singular value of the transition inverse)", p.eta);
    println!(
        "observability: horizon {} (computed), alpha {:.6}, beta {:.6}, \
         extended alpha {:.6}, extended beta {:.6}",
        resolved.n_bar, resolved.alpha, resolved.beta, resolved.alpha_bar, resolved.beta_bar
    );
    println!("Z: {} (computed: sensors + horizon)", p.z);
    println!("gamma_hat: {:.6} (computed: contraction factor)", p.gamma_hat);
    println!("omega_tilde_min: {:.6e} (computed: weight powers)", p.omega_tilde_min);
    let k = p.valid_from().max(1);
    let newest = bounds::cov_lower_bound(p, k, k)?;
    let oldest = bounds::cov_lower_bound(p, k, k - p.d_t.min(k))?;
    println!("information floor from instant {k}: newest {newest:.6e}, oldest {oldest:.6e}");
    if let Some(target) = args.target {
        let d_max = bounds::max_delay_bound(p, target, k, k)?;
        println!("max allowable delay for target {target}: {d_max}");
    }
    Ok(())
}

fn cmd_validate(path: &PathBuf) -> Result<()> {
    let sc = scenario::load_scenario(path)?;
    let report = model::validate_model(&sc.system, &sc.sensors);
    if !report.ok() {
        return Err(Error::Validation(report.violations));
    }
    let class = graph::classify(&sc.topology);
    println!("scenario: {} (valid)", sc.name);
    println!("sensors: {}", sc.sensors.len());
    println!("topology: {:?}, diameter {}", class.kind, class.diameter);
    println!("eta: {:.6}", report.eta);
    println!(
        "observability horizon: {}",
        report.horizon.expect("valid model has a horizon")
    );
    println!("max delay: {}", sc.delay.max_delay);
    Ok(())
}

fn cmd_oracle(cases: usize, seed: u64) -> Result<()> {
    oracle_consensus(cases, seed)?;
    println!("consensus oracle: {cases} random trees passed");
    oracle_fusion(cases, seed)?;
    println!("fusion oracle: {cases} random joint covariances passed");
    Ok(())
}

/// Consensus on random unit-weight trees must reproduce the brute-force
/// global information sum at every node after diameter-many rounds.
fn oracle_consensus(cases: usize, seed: u64) -> Result<()> {
    for case in 0..cases {
        let mut rng = ftdkf::rng::stream_rng(seed, &[0x6f72, case as u64]);
        let n = 2 + case % 11;
        let edges = graph::random_tree_edges(n, seed.wrapping_add(case as u64));
        let topo = ftdkf::graph::Topology::with_unit_weights(n, false, &edges)?;
        let own: Vec<consensus::InfoPair> = (0..n)
            .map(|_| {
                let mut h = DMatrix::zeros(1, 3);
                h[(0, rng.gen_range(0..3))] = 1.0;
                let r_inv = 1.0 / (0.5 + 1.5 * rng.gen::<f64>());
                let y: f64 = rng.gen::<f64>() - 0.5;
                consensus::InfoPair {
                    vec: h.transpose() * r_inv * DVector::from_element(1, y),
                    mat: linalg::symmetrize(&(h.transpose() * r_inv * &h)),
                }
            })
            .collect();
        let mut expect = consensus::InfoPair::zero(3);
        for pair in &own {
            expect.axpy(1.0, pair);
        }
        let rounds = graph::diameter(&topo)?.max(1);
        let out = consensus::run_rounds(&topo, &own, &|_, _| 1.0, rounds)?;
        let scale = expect.vec.norm().max(expect.mat.norm()).max(1.0);
        for (i, (theta, omega)) in out.iter().enumerate() {
            let err = (theta - &expect.vec).norm().max((omega - &expect.mat).norm());
            if err > 1e-9 * scale {
                return Err(Error::Numerical(format!(
                    "consensus oracle failed: case {case}, node {i}, error {err:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Fusion weights on random joint covariances must be unbiased, no worse
/// than any single estimator, and the vector variant no better than the
/// matrix one.
fn oracle_fusion(cases: usize, seed: u64) -> Result<()> {
    for case in 0..cases {
        let mut rng = ftdkf::rng::stream_rng(seed, &[0x6675, case as u64]);
        let n = 2 + case % 4;
        let d = 1 + case % 3;
        let m = n * d;
        let a = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() - 0.5);
        let xi = linalg::symmetrize(&(&a * a.transpose())) + DMatrix::identity(m, m) * 0.3;
        let full = fusion::matrix_weights(&xi, d)?;
        let diag = fusion::vector_weights(&xi, d)?;
        let sum_err = (full.weight_sum() - DMatrix::identity(d, d)).amax();
        if sum_err > 1e-10 {
            return Err(Error::Numerical(format!(
                "fusion oracle failed: case {case}, weight sum off by {sum_err:.3e}"
            )));
        }
        for i in 0..n {
            let pii: DMatrix<f64> = xi.view((i * d, i * d), (d, d)).into();
            if linalg::min_eigenvalue(&(pii - &full.fused_cov)) < -1e-9 {
                return Err(Error::Numerical(format!(
                    "fusion oracle failed: case {case}, sensor {i} beats the fused covariance"
                )));
            }
        }
        if full.fused_cov.trace() > diag.fused_cov.trace() + 1e-9 {
            return Err(Error::Numerical(format!(
                "fusion oracle failed: case {case}, matrix weights worse than vector weights"
            )));
        }
    }
    Ok(())
}
