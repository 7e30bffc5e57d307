use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdr_core::Variant;

mod campaign;
mod output;
mod problems;

use campaign::{CampaignError, CampaignSpec, Experiment, RhsSpec, SolverKind};

/// Sketched GMRES with deflated restarting: experiment harness.
#[derive(Debug, Parser)]
#[command(name = "gmres-sdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sequence of shifted Neumann Laplacians with one matrix and random right-hand sides.
    Neumann {
        /// Number of right-hand sides.
        #[arg(long, default_value_t = 50)]
        systems: usize,
        /// Grid points per side (N = grid^2).
        #[arg(long, default_value_t = 103)]
        grid: usize,
        /// Diagonal shift.
        #[arg(long, default_value_t = 1e-4)]
        shift: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Convection-diffusion sequence with b = ones and one matrix per alpha.
    Convdiff {
        /// Grid points per side (N = n^2).
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,5,20")]
        alphas: Vec<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Single system read from a Matrix Market file.
    MtxFile {
        #[arg(long)]
        matrix: PathBuf,
        /// `ones`, `random`, or a file with one value per line.
        #[arg(long, default_value = "ones")]
        rhs: String,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Per-iteration sketch distortion of the basis and cycle-end residuals.
    DistortionTrace {
        /// Matrix Market file; the Neumann matrix is used when absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 103)]
        grid: usize,
        #[arg(long, default_value_t = 1e-4)]
        shift: f64,
        #[arg(long, default_value = "random")]
        rhs: String,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Krylov steps per cycle.
    #[arg(long)]
    m: Option<usize>,
    /// Arnoldi truncation window.
    #[arg(long, default_value_t = 2)]
    t: usize,
    /// Recycle rank.
    #[arg(long)]
    k: Option<usize>,
    /// Sketch dimension; defaults to 10(m + k).
    #[arg(long)]
    s: Option<usize>,
    /// Use the identity in place of a random sketch.
    #[arg(long)]
    identity_sketch: bool,
    /// Relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Initial safety factor.
    #[arg(long, default_value_t = 1.4)]
    safety: f64,
    /// Recycle-space update across changing matrices.
    #[arg(long, default_value = "exact")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum restart cycles per system.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Solvers to run: `sdr`, `gmres`.
    #[arg(long, value_delimiter = ',')]
    solvers: Option<Vec<SolverKind>>,
    /// Output directory.
    #[arg(long, env = "GMRES_SDR_OUT", default_value = "results")]
    out: PathBuf,
    /// Recycle space to start the first system from.
    #[arg(long)]
    load_recycle: Option<PathBuf>,
    /// Where to write the recycle space after the last system.
    #[arg(long)]
    save_recycle: Option<PathBuf>,
}

impl SolverArgs {
    fn into_spec(self, experiment: Experiment) -> CampaignSpec {
        CampaignSpec {
            experiment,
            m: self.m,
            t: self.t,
            k: self.k,
            s: self.s,
            identity_sketch: self.identity_sketch,
            tol: self.tol,
            safety: self.safety,
            variant: self.variant,
            seed: self.seed,
            restarts: self.restarts,
            solvers: self.solvers,
            out: self.out,
            load_recycle: self.load_recycle,
            save_recycle: self.save_recycle,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = match cli.command {
        Command::Neumann {
            systems,
            grid,
            shift,
            solver,
        } => solver.into_spec(Experiment::Neumann { systems, grid, shift }),
        Command::Convdiff { n, alphas, solver } => solver.into_spec(Experiment::Convdiff { n, alphas }),
        Command::MtxFile { matrix, rhs, solver } => solver.into_spec(Experiment::MtxFile {
            matrix,
            rhs: RhsSpec::parse(&rhs),
        }),
        Command::DistortionTrace {
            matrix,
            grid,
            shift,
            rhs,
            solver,
        } => solver.into_spec(Experiment::DistortionTrace {
            matrix,
            grid,
            shift,
            rhs: RhsSpec::parse(&rhs),
        }),
    };
    match campaign::run(&spec) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CampaignError::Spec(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CampaignError::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(1)
        }
    }
}
