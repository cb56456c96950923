use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use heatavg::config::{load_config_with, Overrides};

/// Ensemble-averaging experiments for the randomly forced heat equation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Flat-key TOML configuration file.
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `n_realizations`.
    #[arg(long)]
    realizations: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HEATAVG_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: HEATAVG_WORKERS ignored: {e}");
        }
    }
    let overrides = Overrides { master_seed: cli.seed, output_dir: cli.out, n_realizations: cli.realizations };
    let cfg = match load_config_with(&cli.config, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match heatavg::run(&cfg) {
        Ok(manifest) => {
            for v in &manifest.verdicts {
                let tag = if v.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:.6e} ({})", v.name, v.value, v.threshold);
            }
            println!("wrote {}", cfg.output_dir.join("manifest.json").display());
            if manifest.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
