use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use winfty_cli::{parse_config, run, Mode};

#[derive(Parser)]
#[command(name = "winfty", version, about = "W^{1,∞} steepest-descent shape optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a `key = value` config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of cascade levels (overrides `levels`).
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("WINFTY_THREADS") {
        let n: usize = threads.parse().context("WINFTY_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match Cli::parse().command {
        Command::Run { config, out, levels, mode } => {
            let mut cfg = parse_config(&config)?;
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Some(levels) = levels {
                cfg.levels = levels;
            }
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            cfg.validate()?;
            let output = run(&cfg).with_context(|| format!("run of {} failed", config.display()))?;
            for file in &output.files {
                log::info!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}
