use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gcrf_cli::{run_bench, run_eval, run_solve, run_synth, CliError, EvalFormat, SolveArgs, SolverKind, SynthArgs};

#[derive(Parser)]
#[command(name = "gcrf", version, about = "CRF MAP inference with label-consistency constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Qp,
    Cqp,
    Lbp,
    Brute,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write one label per line.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "qp")]
        solver: Solver,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Labeling output (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// JSON report output (stderr when omitted).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a planted scene as a problem file plus its true labeling.
    Synth {
        #[arg(long, default_value_t = 40)]
        width: usize,
        #[arg(long, default_value_t = 40)]
        height: usize,
        #[arg(long, default_value_t = 12)]
        objects: usize,
        #[arg(long, default_value_t = 7)]
        labels: usize,
        #[arg(long, default_value_t = 0.6)]
        noise: f64,
        #[arg(long)]
        unary_weight: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Defaults to the problem path with a `.truth.txt` extension.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare a predicted labeling against the truth.
    Eval {
        predicted: PathBuf,
        truth: PathBuf,
        /// Defaults to one more than the largest label seen.
        #[arg(long)]
        labels: Option<usize>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Time constrained against unconstrained solves over sizes and coverage.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [176, 219, 787, 1628])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve {
            problem,
            solver,
            max_iters,
            tol,
            seed,
            out,
            report,
        } => {
            let solver = match solver {
                Solver::Qp => SolverKind::Qp,
                Solver::Cqp => SolverKind::Cqp,
                Solver::Lbp => SolverKind::Lbp,
                Solver::Brute => SolverKind::Brute,
            };
            run_solve(&SolveArgs {
                problem,
                solver,
                max_iters,
                tol,
                seed,
                out,
                report,
            })?;
        }
        Command::Synth {
            width,
            height,
            objects,
            labels,
            noise,
            unary_weight,
            seed,
            out,
            truth,
        } => run_synth(&SynthArgs {
            width,
            height,
            objects,
            labels,
            noise,
            unary_weight,
            seed,
            out,
            truth,
        })?,
        Command::Eval {
            predicted,
            truth,
            labels,
            format,
        } => {
            let format = match format {
                Format::Table => EvalFormat::Table,
                Format::Csv => EvalFormat::Csv,
            };
            print!("{}", run_eval(&predicted, &truth, labels, format)?);
        }
        Command::Bench {
            sizes,
            fractions,
            seed,
            out,
        } => eprint!("{}", run_bench(sizes, fractions, seed, out.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
