use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nearhorizon::config::{Experiment, RunConfig};
use nearhorizon::runner::{exit_code, run_experiment};

#[derive(Parser)]
#[command(
    name = "nearhorizon",
    about = "Small-horizon portfolio approximation: benchmark tables, \
             error-scaling studies, scheme and policy evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output prefix override (writes <out>.csv and <out>.json).
    #[arg(long)]
    out: Option<String>,
    /// Master RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo path count override.
    #[arg(long)]
    paths: Option<usize>,
    /// Simulation time-step override.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Coefficient comparison against the constant-coefficient benchmark.
    Table1(CommonArgs),
    /// Wealth-grid comparison table at the configured evaluation time.
    Table23(CommonArgs),
    /// Monte-Carlo error-scaling study under the near-optimal policy.
    ErrorScaling(CommonArgs),
    /// Backward time-stepping approximation on an (s, y) grid.
    Scheme(CommonArgs),
    /// Near-optimal and zeroth-order policies over the wealth grid.
    PolicyEval(CommonArgs),
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Table1(_) => Experiment::Table1,
            Command::Table23(_) => Experiment::Table23,
            Command::ErrorScaling(_) => Experiment::ErrorScaling,
            Command::Scheme(_) => Experiment::Scheme,
            Command::PolicyEval(_) => Experiment::PolicyEval,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Table1(a)
            | Command::Table23(a)
            | Command::ErrorScaling(a)
            | Command::Scheme(a)
            | Command::PolicyEval(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();

    let mut cfg = match RunConfig::from_path(&args.config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("nearhorizon: {err}");
            return ExitCode::from(exit_code(&err) as u8);
        }
    };

    // the subcommand decides the experiment; flags override the config
    cfg.run.experiment = cli.command.experiment();
    if let Some(out) = &args.out {
        cfg.run.output_path = out.clone();
    }
    if args.seed.is_some() || args.paths.is_some() || args.dt.is_some() {
        let mut sim = cfg.sim();
        if let Some(seed) = args.seed {
            sim.seed = seed;
        }
        if let Some(paths) = args.paths {
            sim.n_paths = paths;
        }
        if let Some(dt) = args.dt {
            sim.dt = dt;
        }
        cfg.sim = Some(sim);
    }

    match run_experiment(&cfg) {
        Ok(outcome) => {
            println!(
                "wrote {} and {}",
                outcome.csv_path.display(),
                outcome.summary_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("nearhorizon: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
