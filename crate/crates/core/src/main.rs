use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use poropinn::harness::{
    ablate_regularization, aggregate_records, overlay, read_tree, run_experiment, run_sweep, take_sweep, ExperimentConfig, HarnessError, Overrides,
    RunRecord,
};
use poropinn::problems::{Mode, ProblemKind};

/// Physics-informed neural networks for nonlinear diffusivity and Biot
/// poroelasticity.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward nonlinear diffusivity from boundary/initial data.
    ForwardDiffusivity(Flags),
    /// Estimate diffusivity coefficients from interior measurements.
    InverseDiffusivity(Flags),
    /// Forward nonlinear Biot from boundary/initial data.
    ForwardBiot(Flags),
    /// Estimate Biot coefficients from interior measurements.
    InverseBiot(Flags),
    /// Grid of experiments over the axes of the config's `sweep` table.
    Sweep(Flags),
    /// Forward run with and without the physics terms.
    Ablate(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// TOML config (JSON when the extension is `.json`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; realization `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Relative noise level on inverse-mode measurements.
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            realizations: self.realizations,
            noise: self.noise,
            out_dir: self.out.clone(),
            workers: self.workers,
        }
    }
}

fn load(flags: &Flags, preset: Option<(ProblemKind, Mode)>) -> Result<(ExperimentConfig, Option<serde_json::Value>), HarnessError> {
    let base = match preset {
        Some((k, m)) => ExperimentConfig::preset(k, m),
        None => ExperimentConfig::default(),
    };
    let mut sweep = None;
    let mut cfg = match &flags.config {
        Some(path) => {
            let mut tree = read_tree(path)?;
            if let Some(s) = take_sweep(&mut tree)? {
                sweep = Some(serde_json::to_value(s)?);
            }
            // a file naming only the problem starts from that problem's preset
            let start = match (preset, tree.pointer("/problem/kind"), tree.pointer("/problem/mode")) {
                (None, Some(k), Some(m)) => ExperimentConfig::preset(serde_json::from_value(k.clone())?, serde_json::from_value(m.clone())?),
                _ => base,
            };
            overlay(&start, tree)?
        }
        None => base,
    };
    if let Some((k, m)) = preset {
        if (cfg.problem.kind, cfg.problem.mode) != (k, m) {
            return Err(HarnessError::Config(format!("config describes {:?}/{:?}, not the requested subcommand", cfg.problem.kind, cfg.problem.mode)));
        }
    }
    flags.overrides().apply(&mut cfg);
    Ok((cfg, sweep))
}

fn report(records: &[RunRecord]) -> bool {
    let agg = aggregate_records(records);
    println!("{} realizations, {} failed", agg.total, agg.failed);
    for m in &agg.metrics {
        println!("  {:<28} mean {:.4e}  sd {:.3e}  median {:.4e}", m.name, m.stats.mean, m.stats.sd, m.median);
    }
    agg.all_failed()
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let preset = |k, m| Some((k, m));
    let any_cell_failed = match &cli.command {
        Command::ForwardDiffusivity(f) => report(&run_experiment(&load(f, preset(ProblemKind::Diffusivity, Mode::Forward))?.0)?),
        Command::InverseDiffusivity(f) => report(&run_experiment(&load(f, preset(ProblemKind::Diffusivity, Mode::Inverse))?.0)?),
        Command::ForwardBiot(f) => report(&run_experiment(&load(f, preset(ProblemKind::Biot, Mode::Forward))?.0)?),
        Command::InverseBiot(f) => report(&run_experiment(&load(f, preset(ProblemKind::Biot, Mode::Inverse))?.0)?),
        Command::Sweep(f) => {
            if f.config.is_none() {
                return Err(HarnessError::Config("sweep needs --config with a [sweep] table".into()));
            }
            let (cfg, sweep) = load(f, None)?;
            let spec = serde_json::from_value(sweep.ok_or_else(|| HarnessError::Config("config has no [sweep] table".into()))?)?;
            let result = run_sweep(&cfg, &spec)?;
            let mut failed = false;
            for cell in &result.cells {
                println!("cell {:?}", cell.values);
                match &cell.error {
                    Some(e) => println!("  error: {e}"),
                    None => {
                        report(&cell.records);
                    }
                }
                failed |= cell.failed();
            }
            failed
        }
        Command::Ablate(f) => {
            let (cfg, _) = load(f, None)?;
            let a = ablate_regularization(&cfg)?;
            println!("with physics:");
            let w = report(&a.with_physics);
            println!("without physics:");
            let wo = report(&a.without_physics);
            w || wo
        }
    };
    Ok(any_cell_failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("every realization of at least one cell failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
