mod commands;
mod file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FalsifyArgs, OracleArgs, PlanArgs, ReportArgs, SynthArgs, VerifyArgs};

const EXIT_CODES: &str = "\
Exit codes:
  0  success: synthesized, certified, no counterexample, path found
  1  refuted: counterexample or violated goal condition
  2  input error: schema, usage or file error
  3  search exhausted without reaching the goal
  4  search stopped at the iteration cap
  5  synthesis objective unbounded
  6  synthesis program infeasible
  7  solver failure or inconclusive result

Problems are JSON files or builtin:<name> (single_integrator_1d,
double_integrator_1d, shortest_path_nd, unicycle, pendulum).
Heuristics are JSON files, zero, euclid or quadratic:<a>.
Floats in text and CSV output use 17 significant digits; CSV fields are
never quoted. Set ADMISSOS_LOG=debug for solver iteration logs.";

#[derive(Parser)]
#[command(name = "admissos", version, about = "Admissible heuristics via sum-of-squares programming", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a polynomial heuristic.
    Synth {
        problem: String,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long = "lambda-degree")]
        lambda_degree: Option<u32>,
        /// Margin: the running cost is scaled by `1 - epsilon`.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Directory for heuristic.json, report.json and surface.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "surface-grid")]
        surface_grid: Option<usize>,
    },
    /// Certify a polynomial heuristic with an SOS certificate.
    Verify {
        problem: String,
        heuristic: String,
        /// Certify consistency instead of admissibility.
        #[arg(long)]
        consistent: bool,
        #[arg(long = "lambda-degree")]
        lambda_degree: Option<u32>,
        #[arg(long = "degree-cap", default_value_t = admissos::verify::DEFAULT_DEGREE_CAP)]
        degree_cap: u32,
    },
    /// Search for counterexamples to the admissibility conditions.
    Falsify {
        problem: String,
        #[arg(long)]
        heuristic: String,
        /// Points per axis over states then controls: one value or one per axis.
        #[arg(long, value_delimiter = ',', default_value = "50")]
        grid: Vec<usize>,
        #[arg(long)]
        halton: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the kinodynamic search on a world (forest, corridor or a file).
    Plan {
        world: String,
        /// Problem file whose planner block overrides the world's.
        #[arg(long)]
        problem: Option<String>,
        /// zero, euclid, world or a heuristic file.
        #[arg(long, default_value = "world")]
        heuristic: String,
        /// CSV of expanded states.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long = "max-iterations")]
        max_iterations: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
    },
    /// Grid value function by value iteration, as CSV.
    Oracle {
        problem: String,
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[arg(long)]
        heuristic: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a problem and the size of its synthesis program.
    Report {
        problem: String,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long = "lambda-degree")]
        lambda_degree: Option<u32>,
        /// Append the compiled SDP in sparse text form.
        #[arg(long)]
        sdp: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADMISSOS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_INPUT } else { commands::EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Synth {
            problem,
            degree,
            lambda_degree,
            epsilon,
            out,
            surface_grid,
        } => commands::synth(&SynthArgs {
            problem,
            degree,
            lambda_degree,
            epsilon,
            out,
            surface_grid,
        }),
        Command::Verify {
            problem,
            heuristic,
            consistent,
            lambda_degree,
            degree_cap,
        } => commands::verify_cmd(&VerifyArgs {
            problem,
            heuristic,
            consistent,
            lambda_degree,
            degree_cap,
        }),
        Command::Falsify {
            problem,
            heuristic,
            grid,
            halton,
            tol,
        } => commands::falsify_cmd(&FalsifyArgs {
            problem,
            heuristic,
            grid,
            halton,
            tol,
        }),
        Command::Plan {
            world,
            problem,
            heuristic,
            trace,
            max_iterations,
            start,
        } => commands::plan_cmd(&PlanArgs {
            world,
            problem,
            heuristic,
            trace,
            max_iterations,
            start,
        }),
        Command::Oracle {
            problem,
            grid,
            heuristic,
            out,
        } => commands::oracle_cmd(&OracleArgs {
            problem,
            grid,
            heuristic,
            out,
        }),
        Command::Report {
            problem,
            degree,
            lambda_degree,
            sdp,
        } => commands::report_cmd(&ReportArgs {
            problem,
            degree,
            lambda_degree,
            sdp,
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
