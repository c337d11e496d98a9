//! Command-line front end: closed-loop simulation, step-size certification,
//! parameter sweeps, and reference-solution dumps for a problem file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dmpc::bench::{self, BenchError, SweepParam};
use dmpc::config::{self, ConfigError, ProblemConfig};

#[derive(Parser)]
#[command(name = "dmpc", about = "Distributed MPC with Laplacian-consensus primal-dual iterations")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Rho,
    Eps,
}

#[derive(Subcommand)]
enum Commands {
    /// Run the closed loop and write trace/residual/figure CSVs
    Simulate {
        /// Problem file
        cfg: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the number of MPC steps
        #[arg(long)]
        steps: Option<usize>,
        /// Reuse multipliers across MPC steps (gamma is re-centered)
        #[arg(long)]
        warm_start: bool,
        /// Project lambda onto the nonnegative orthant each iteration
        #[arg(long)]
        project_lambda: bool,
    },
    /// Validate step sizes and print the contraction certificate table
    Certify {
        cfg: PathBuf,
        /// Override alpha (requires --beta)
        #[arg(long, requires = "beta")]
        alpha: Option<f64>,
        /// Override beta (requires --alpha)
        #[arg(long, requires = "alpha")]
        beta: Option<f64>,
        /// Override rho
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Sweep rho or eps and write aligned total-input series with summaries
    Sweep {
        cfg: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated parameter values
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print centralized reference solutions (saddle point and QP) as CSV
    Oracle { cfg: PathBuf },
}

fn load(path: &PathBuf) -> Result<ProblemConfig, ConfigError> {
    config::load_config(path)
}

fn run() -> Result<(), BenchError> {
    let cli = Cli::parse();
    match cli.command {
        Commands::Simulate { cfg, out, steps, warm_start, project_lambda } => {
            let mut config = load(&cfg)?;
            if let Some(t) = steps {
                config.steps = t;
            }
            config.warm_start |= warm_start;
            config.project_lambda |= project_lambda;
            let (artifacts, trace) = bench::run_benchmark(&config, &out)?;
            println!(
                "simulated {} steps ({} agents, project_lambda = {}, warm_start = {}); terminal region reached at {:?}",
                trace.records.len(),
                config.n_agents(),
                config.project_lambda,
                config.warm_start,
                trace.terminal_reached_at,
            );
            for p in [
                &artifacts.trace,
                &artifacts.residuals,
                &artifacts.certificate,
                &artifacts.fig_inputs,
                &artifacts.fig_states,
            ] {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Commands::Certify { cfg, alpha, beta, rho } => {
            let mut config = load(&cfg)?;
            if let Some(r) = rho {
                config.rho = r;
            }
            if let (Some(a), Some(b)) = (alpha, beta) {
                config.alpha = Some(a);
                config.beta = Some(b);
            }
            let (setup, info) = config::build_setup(&config)?;
            print!("{}", bench::certificate_report(&setup, &info));
            Ok(())
        }
        Commands::Sweep { cfg, param, values, out } => {
            let config = load(&cfg)?;
            let param = match param {
                Param::Rho => SweepParam::Rho,
                Param::Eps => SweepParam::Eps,
            };
            let (path, summaries) = bench::sweep(&config, param, &values, &out)?;
            for s in &summaries {
                println!(
                    "value {:?}: peak total input {:.6}, max step change {:.6}, settling step {:?}",
                    s.value, s.peak_total_input, s.max_total_input_delta, s.settling_step
                );
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Commands::Oracle { cfg } => {
            let config = load(&cfg)?;
            print!("{}", bench::oracle_report(&config)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
