//! Command implementations behind the `gcrf` binary.

pub mod problem;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gcrf::baselines::{brute_force_map, lbp_map, LbpConfig};
use gcrf::eval::bench::{speedups, write_csv};
use gcrf::eval::{compute_metrics, generate, run_benchmark, BenchConfig, SceneConfig};
use gcrf::{extract_labeling, objective_of_labeling, solve, solve_constrained, Labeling, SolverConfig};
use serde::Serialize;

use problem::ProblemFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or schema-invalid input; exit code 2.
    #[error("{0}")]
    Input(String),
    /// The solver rejected or failed on valid input; exit code 3.
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn solver_err(e: gcrf::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// One label per line.
pub fn format_labeling(labels: &Labeling) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels.as_slice() {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn parse_labeling(text: &str, source: &str) -> Result<Vec<usize>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|_| {
                CliError::Input(format!("{source}: line {}: expected a label index, got {l:?}", n + 1))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Qp,
    Cqp,
    Lbp,
    Brute,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Qp => "qp",
            SolverKind::Cqp => "cqp",
            SolverKind::Lbp => "lbp",
            SolverKind::Brute => "brute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutput {
    pub solver: &'static str,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the output labeling.
    pub objective: f64,
    /// Final relaxed objective for the QP solvers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed_objective: Option<f64>,
    pub wall_ms: f64,
    pub constraints_satisfied: bool,
    pub violated_sets: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SolveArgs {
    pub problem: PathBuf,
    pub solver: SolverKind,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    /// Recorded in the report; every solver here is deterministic.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn run_solve(args: &SolveArgs) -> Result<(Labeling, SolveOutput), CliError> {
    let prob = ProblemFile::parse(&read(&args.problem)?)?.validate()?;
    let (graph, pot) = (&prob.graph, &prob.potentials);

    let mut qp_cfg = SolverConfig::default();
    if let Some(m) = args.max_iters {
        qp_cfg.max_iterations = m;
    }
    if let Some(t) = args.tol {
        qp_cfg.convergence_tol = t;
    }
    qp_cfg
        .validate()
        .map_err(|e| CliError::Input(format!("solver flags: {e}")))?;
    let start = Instant::now();
    let (labels, iterations, converged, relaxed) = match args.solver {
        SolverKind::Qp => {
            let (m, r) = solve(graph, pot, &qp_cfg).map_err(solver_err)?;
            (extract_labeling(&m), r.iterations, r.converged, Some(r.final_objective))
        }
        SolverKind::Cqp => {
            let (_, l, r) = solve_constrained(graph, pot, &prob.constraints, &qp_cfg).map_err(solver_err)?;
            (l, r.iterations, r.converged, Some(r.final_objective))
        }
        SolverKind::Lbp => {
            let mut cfg = LbpConfig::default();
            if let Some(m) = args.max_iters {
                cfg.max_iterations = m;
            }
            if let Some(t) = args.tol {
                cfg.tolerance = t;
            }
            let (l, r) = lbp_map(graph, pot, &cfg).map_err(solver_err)?;
            (l, r.iterations, r.converged, None)
        }
        SolverKind::Brute => {
            let (l, _) = brute_force_map(graph, pot).map_err(solver_err)?;
            (l, 0, true, None)
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let violated = prob.constraints.violations(&labels);
    let output = SolveOutput {
        solver: args.solver.name(),
        iterations,
        converged,
        objective: objective_of_labeling(graph, pot, &labels).map_err(solver_err)?,
        relaxed_objective: relaxed,
        wall_ms,
        constraints_satisfied: violated == 0,
        violated_sets: violated,
        seed: args.seed,
    };

    let text = format_labeling(&labels);
    match &args.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    let json = serde_json::to_string_pretty(&output).expect("report serializes");
    match &args.report {
        Some(p) => write(p, &(json + "\n"))?,
        None => eprintln!("{json}"),
    }
    Ok((labels, output))
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    pub labels: usize,
    pub noise: f64,
    pub unary_weight: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
}

/// Truth labels go next to the problem file unless a path is given.
pub fn default_truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.txt")
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = SceneConfig::new(args.width, args.height, args.objects, args.labels, args.noise);
    if let Some(w) = args.unary_weight {
        cfg.unary_weight = w;
    }
    let scene = generate(&cfg, args.seed).map_err(|e| CliError::Input(e.to_string()))?;
    let sets = scene.constraint_sets().map_err(solver_err)?;
    let file = ProblemFile::from_scene(&scene, &sets)?;
    write(&args.out, &(file.to_json() + "\n"))?;
    let truth = args.truth.clone().unwrap_or_else(|| default_truth_path(&args.out));
    write(&truth, &format_labeling(&scene.true_labels))?;
    eprintln!(
        "{} nodes, {} edges, {} objects, {} constraint sets covering {} nodes",
        scene.graph.num_nodes(),
        scene.graph.num_edges(),
        scene.objects.len(),
        sets.len(),
        sets.covered_nodes()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalFormat {
    Table,
    Csv,
}

pub fn run_eval(
    predicted: &Path,
    truth: &Path,
    num_labels: Option<usize>,
    format: EvalFormat,
) -> Result<String, CliError> {
    let p = parse_labeling(&read(predicted)?, &predicted.display().to_string())?;
    let t = parse_labeling(&read(truth)?, &truth.display().to_string())?;
    if p.len() != t.len() {
        return Err(CliError::Input(format!(
            "length mismatch: {} has {} labels, {} has {}",
            predicted.display(),
            p.len(),
            truth.display(),
            t.len()
        )));
    }
    let k = num_labels.unwrap_or_else(|| p.iter().chain(&t).max().map_or(1, |m| m + 1));
    let to_labeling = |v: Vec<usize>, src: &Path| {
        Labeling::new(v, k).map_err(|e| CliError::Input(format!("{}: {e}", src.display())))
    };
    let report = compute_metrics(&to_labeling(p, predicted)?, &to_labeling(t, truth)?, k)
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(match format {
        EvalFormat::Table => report.to_table(),
        EvalFormat::Csv => report.to_csv(),
    })
}

pub fn run_bench(sizes: Vec<usize>, fractions: Vec<f64>, seed: u64, out: Option<&Path>) -> Result<String, CliError> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(CliError::Input(format!("--fractions: {f} not in [0, 1]")));
    }
    let rows = run_benchmark(&BenchConfig::new(sizes, fractions, seed)).map_err(solver_err)?;
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv).map_err(solver_err)?;
    let csv = String::from_utf8(csv).expect("csv is utf-8");
    match out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{:>6}  {:>8}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}",
        "nodes", "fraction", "qp_ms", "cqp_ms", "qp_it", "cqp_it", "speedup"
    );
    for (nodes, fraction, speedup) in speedups(&rows) {
        let cell = |solver: &str| {
            rows.iter()
                .find(|r| r.solver == solver && r.nodes == nodes && r.constraint_fraction == fraction)
                .expect("speedups only pairs existing rows")
        };
        let (qp, cqp) = (cell("qp"), cell("cqp"));
        let _ = writeln!(
            summary,
            "{nodes:>6}  {fraction:>8.2}  {:>10.2}  {:>10.2}  {:>8}  {:>8}  {speedup:>7.2}x",
            qp.wall_ms, cqp.wall_ms, qp.iterations, cqp.iterations
        );
    }
    Ok(summary)
}
