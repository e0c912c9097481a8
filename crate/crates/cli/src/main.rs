use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocprom_cli::commands;
use ocprom_cli::config::RunConfig;
use ocprom_cli::CliError;

#[derive(Parser)]
#[command(
    name = "ocprom",
    version,
    about = "Real-time surrogates for parametrized optimal control"
)]
struct Cli {
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario sampling seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for snapshot generation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order problem for sampled scenarios.
    Snapshots,
    /// Fit the state and control reducers on the training snapshots.
    Reduce,
    /// Train the latent map.
    Train,
    /// Reconstruction and prediction errors on the test snapshots.
    Eval,
    /// Surrogate optimal pair for one scenario.
    Predict {
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        time: Option<f64>,
        /// Also solve the full-order problem and report the errors.
        #[arg(long)]
        verify: bool,
    },
    /// Cost landscape over a parameter lattice.
    Sweep {
        #[arg(default_value_t = 100)]
        n_theta: usize,
        #[arg(default_value_t = 100)]
        n_r: usize,
    },
    /// Full pipeline followed by the benchmark table.
    BenchCooling,
    /// Gradient checks against finite differences.
    Check,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(seed) = cli.seed {
        cfg.snapshots.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.snapshots.workers = w;
    }
    match cli.command {
        Command::Snapshots => commands::cmd_snapshots(&cfg),
        Command::Reduce => commands::cmd_reduce(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Eval => commands::cmd_eval(&cfg),
        Command::Predict {
            theta,
            r,
            time,
            verify,
        } => commands::cmd_predict(&cfg, theta, r, time, verify),
        Command::Sweep { n_theta, n_r } => commands::cmd_sweep(&cfg, n_theta, n_r),
        Command::BenchCooling => commands::cmd_bench_cooling(&cfg),
        Command::Check => commands::cmd_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCPROM_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summaries are plain JSON")
            );
            let failed = summary.get("pass").and_then(|p| p.as_bool()) == Some(false);
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
