//! Command-line front end: training, benchmarks, tile-machine simulation,
//! gradient checks and synthetic data generation.

mod commands;
mod settings;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_snn::Error;

use crate::settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "sparse-snn", version, about = "Sparse spiking network training and tile-machine benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train on an event dataset and write a checkpoint plus metrics.csv
    Train,
    /// Run a benchmark sweep and write <out-dir>/<timestamp>/<sweep>.csv
    Bench,
    /// Model one training batch on the tile machine and write ledger.csv
    Simulate,
    /// Check gradients against finite differences and the dense path
    Gradcheck,
    /// Write a synthetic pattern dataset (train/ and test/ manifests)
    GenData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Dense,
    Sparse,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for weights, data order and drop streams [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Spike representation between layers [default: sparse]
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    /// Fraction of neurons a sparse tensor can hold [default: 0.1]
    #[arg(long, global = true)]
    max_activity: Option<f64>,

    /// Training epochs; 0 writes the initial checkpoint only [default: 20]
    #[arg(long, global = true)]
    epochs: Option<u64>,

    /// Sequences per batch
    #[arg(long, global = true)]
    batch_size: Option<usize>,

    /// Worker threads; 0 uses every core [default: 0]
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Chips in the modeled machine [default: 1]
    #[arg(long, global = true)]
    chips: Option<u32>,

    /// Neurons placed on each tile [default: 2]
    #[arg(long, global = true)]
    neurons_per_tile: Option<u32>,

    /// Where results are written [default: runs]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Check tile memory and model batch cost while training [default: off]
    #[arg(long, global = true, value_enum)]
    simulate_tiles: Option<Switch>,

    /// Override any config key; repeatable, applied last
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn flag_values(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push(
            "mode",
            self.mode.map(|m| match m {
                Mode::Dense => "dense".into(),
                Mode::Sparse => "sparse".into(),
            }),
        );
        push("max_activity", self.max_activity.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        push("chips", self.chips.map(|v| v.to_string()));
        push("neurons_per_tile", self.neurons_per_tile.map(|v| v.to_string()));
        push("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        push("simulate_tiles", self.simulate_tiles.map(|s| (s == Switch::On).to_string()));
        out
    }

    /// Defaults, then the config file, then flags, then `--set` pairs.
    fn settings(&self) -> Result<Settings, Error> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            s.apply_kv(&text)?;
        }
        for (k, v) in self.flag_values() {
            s.set(k, &v)?;
        }
        for pair in &self.overrides {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Format(_) | Error::EmptyDataset | Error::Corrupt(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::OutOfTileMemory { .. } => 4,
        Error::Shape { .. } | Error::Contract(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.common.settings().and_then(|settings| {
        if settings.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(settings.threads)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        match cli.command {
            Command::Train => commands::train(&settings),
            Command::Bench => commands::bench(&settings),
            Command::Simulate => commands::simulate(&settings),
            Command::Gradcheck => commands::gradcheck(&settings),
            Command::GenData => commands::gen_data(&settings),
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
