use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thermoconv::harness::{run_to_dir, Experiment, ExperimentConfig};

/// Run a thermodynamic-convergence experiment and write its CSV and JSON.
#[derive(Parser, Debug)]
#[command(name = "thermoconv", version)]
struct Cli {
    /// ou-sweep, cd-check, sync-couple, ikb, avg-steady, stiff-sweep or coeff-check
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> thermoconv::Result<bool> {
    if let Some(n) = std::env::var("THERMOCONV_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let experiment = Experiment::parse(&cli.experiment)
        .ok_or_else(|| thermoconv::Error::config("experiment", format!("unknown experiment `{}`", cli.experiment)))?;
    let mut cfg = ExperimentConfig::from_file(&cli.config)?;
    if cfg.experiment != experiment {
        return Err(thermoconv::Error::config(
            "experiment",
            format!("config is for `{}`, not `{}`", cfg.experiment.name(), experiment.name()),
        ));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = run_to_dir(&cfg, &cli.out)?;
    println!(
        "{}: {} ({})",
        experiment.name(),
        if out.pass { "pass" } else { "fail" },
        cli.out.display()
    );
    Ok(out.pass)
}
