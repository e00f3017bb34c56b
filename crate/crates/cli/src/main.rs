//! `alstokes`: parameter sweeps, eigenvalue bound checks and nonlinear runs.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{prepare_dump_dir, run_nonlinear, run_table, run_verify, CliError, CliResult};
use config::{ExperimentConfig, KEYS};

const AFTER_HELP: &str = "\
Config files hold `key = value` lines; `#` starts a comment and lists are comma-separated.
Run `alstokes keys` for the accepted keys. Unknown or repeated keys are errors.

CSV output (written to the `output` key's path):
  table:     problem,nx,ny,levels,k,dr,gamma,variant,w,system,inner,smoother,transfer,
             cycle,n_u,n_p,iterations,converged,relative_residual,wall_time
  verify:    dr,gamma,variant,c_mu,C_mu,d_mu,D_mu,e_mu,E_mu,f_mu,F_mu,lambda_min,
             lambda_max,remark_error,holds
  nonlinear: variant,gamma,step,linear_iterations,linear_converged,residual,
             step_length,wall_time   (step 0 is the initial linear solve)
  fields:    variant,gamma,x,z,mu_eff,strain_rate_ii,u_x,u_z,p   (cell centers)
Rows follow the order of the lists in the config. Apart from wall_time, output is
deterministic.

Exit codes: 0 success, 1 internal error or (verify) a violated bound,
2 config error or problem too large for a dense check.";

#[derive(Parser, Debug)]
#[command(name = "alstokes", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Linear solver iteration counts over the gamma/DR/variant lists.
    Table(RunArgs),
    /// Dense check of the Schur complement eigenvalue bounds.
    Verify {
        #[command(flatten)]
        args: RunArgs,
        /// Scale the Schur approximation by this factor (the check should then fail).
        #[arg(long, value_name = "FACTOR")]
        corrupt_schur: Option<f64>,
    },
    /// Newton solves of the viscoplastic problem.
    Nonlinear(RunArgs),
    /// List config keys.
    Keys,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long, short)]
    config: PathBuf,
    /// Write the assembled matrices of each run in Matrix Market format.
    #[arg(long, value_name = "DIR")]
    dump_matrices: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> CliResult<(ExperimentConfig, Option<PathBuf>)> {
        let cfg =
            ExperimentConfig::load(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        Ok((cfg, prepare_dump_dir(self.dump_matrices.clone())?))
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Table(args) => {
            let (cfg, dump) = args.load()?;
            run_table(&cfg, dump.as_deref(), &mut out)?;
            Ok(true)
        }
        Command::Verify {
            args,
            corrupt_schur,
        } => {
            if corrupt_schur.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
                return Err(CliError::Config("--corrupt-schur must be positive".into()));
            }
            let (cfg, dump) = args.load()?;
            run_verify(&cfg, dump.as_deref(), corrupt_schur, &mut out)
        }
        Command::Nonlinear(args) => {
            let (cfg, dump) = args.load()?;
            run_nonlinear(&cfg, dump.as_deref(), &mut out)?;
            Ok(true)
        }
        Command::Keys => {
            for (k, d) in KEYS {
                writeln!(out, "{k:<24} {d}")?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
