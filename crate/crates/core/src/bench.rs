//! Benchmark protocol: fixed- and natural-activity runs, activity sweeps,
//! single-chip scale-up and multi-chip weak scaling.
//!
//! Two kinds of numbers come out and are kept apart: *measured* wall-clock
//! times of the dense and sparse training step on this host, and *modeled*
//! times from the tile-machine cost ledger.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bptt::{forward_pass, train_step, ExecMode, OptimizerState, RunOptions};
use crate::data::{sparse_hidden_size, synth_pattern_dataset, to_samples, SYNTH_BIN_WIDTH_US};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{InitConfig, Network, NetworkSpec, OutputMode};
use crate::rng::DropRng;
use crate::tile::{
    acceleration_model, map_neurons_with, simulate_batch, weak_scale_run, ActivityTrace,
    CostLedger, MachineSpec, MemoryModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityMode {
    /// Every neuron and input channel is forced to spike, so every sparse
    /// tensor is full.
    Fixed,
    /// Real dynamics on synthetic input with randomly initialised weights.
    Natural,
}

impl ActivityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Natural => "natural",
        }
    }
}

impl std::str::FromStr for ActivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed_activity" => Ok(Self::Fixed),
            "natural" | "natural_activity" => Ok(Self::Natural),
            other => Err(Error::Config(format!("unknown activity mode `{other}`"))),
        }
    }
}

/// Layer sizes `[input, hidden…, output]` of the single-chip benchmark net:
/// 2 neurons on each of 1471 tiles.
pub fn benchmark_layers() -> Vec<usize> {
    vec![700, 974, 974, 974, 20]
}

fn repeat(head: usize, blocks: &[(usize, usize)], out: usize) -> Vec<usize> {
    let mut v = vec![head];
    for &(size, count) in blocks {
        v.extend(std::iter::repeat_n(size, count));
    }
    v.push(out);
    v
}

/// Datasets with preset single-chip scaling architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingDataset {
    Shd,
    Nmnist,
}

impl std::str::FromStr for ScalingDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shd" => Ok(Self::Shd),
            "nmnist" => Ok(Self::Nmnist),
            other => Err(Error::Config(format!("no scaling architectures for `{other}`"))),
        }
    }
}

/// Layer sizes that fill one chip at `neurons_per_tile` ∈ {2, 4, 8, 16}.
pub fn scaling_layers(dataset: ScalingDataset, neurons_per_tile: u32) -> Result<Vec<usize>> {
    let v = match (dataset, neurons_per_tile) {
        (ScalingDataset::Shd, 2) => repeat(700, &[(974, 3)], 20),
        (ScalingDataset::Shd, 4) => repeat(700, &[(980, 2), (976, 4)], 20),
        (ScalingDataset::Shd, 8) => repeat(700, &[(984, 4), (976, 8)], 20),
        (ScalingDataset::Shd, 16) => repeat(700, &[(992, 5), (976, 19)], 20),
        (ScalingDataset::Nmnist, 2) => repeat(1152, &[(978, 2), (976, 1)], 10),
        (ScalingDataset::Nmnist, 4) => repeat(1152, &[(980, 4), (976, 2)], 10),
        (ScalingDataset::Nmnist, 8) => repeat(1152, &[(984, 5), (976, 7)], 10),
        (ScalingDataset::Nmnist, 16) => repeat(1152, &[(992, 6), (976, 18)], 10),
        (_, other) => {
            return Err(Error::Config(format!(
                "no architecture for {other} neurons per tile (use 2, 4, 8 or 16)"
            )))
        }
    };
    Ok(v)
}

/// Capacities for `layer_sizes` at `max_activity`; the output layer keeps
/// full capacity.
pub fn sparse_sizes_for(layer_sizes: &[usize], max_activity: f64, sparse_input_size: Option<usize>) -> Vec<usize> {
    let last = layer_sizes.len() - 1;
    layer_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| match k {
            0 => sparse_input_size.unwrap_or_else(|| sparse_hidden_size(max_activity, n)),
            k if k == last => NetworkSpec::full_capacity(&[n])[0],
            _ => sparse_hidden_size(max_activity, n),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub mode: ActivityMode,
    pub max_activity: f64,
    pub batch_size: usize,
    pub layer_sizes: Vec<usize>,
    /// Input capacity; `None` applies the hidden-layer formula to the input.
    pub sparse_input_size: Option<usize>,
    pub num_timesteps: usize,
    pub repetitions: usize,
    pub warmup_discard: usize,
    pub seed: u64,
    /// Time the dense and sparse training steps on this host.
    pub measure: bool,
    /// Expected events per channel and timestep of the natural-mode input.
    pub input_noise: f64,
    pub machine: MachineSpec,
    pub neurons_per_tile: u32,
    pub init: InitConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mode: ActivityMode::Fixed,
            max_activity: 0.05,
            batch_size: 48,
            layer_sizes: benchmark_layers(),
            sparse_input_size: None,
            num_timesteps: 100,
            repetitions: 3,
            warmup_discard: 1,
            seed: 42,
            measure: true,
            input_noise: 0.02,
            machine: MachineSpec::default(),
            neurons_per_tile: 2,
            // Zero-mean weights large enough that the first layer fires a
            // few percent of the time under natural input.
            init: InitConfig {
                weight_scale: 12.0,
                ..InitConfig::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_activity > 0.0 && self.max_activity <= 1.0) {
            return Err(Error::Config(format!(
                "max_activity must be in (0, 1], got {}",
                self.max_activity
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("need at least an input and an output layer".into()));
        }
        self.machine.validate()?;
        self.spec().validate()
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            sparse_sizes: sparse_sizes_for(&self.layer_sizes, self.max_activity, self.sparse_input_size),
            layer_sizes: self.layer_sizes.clone(),
            batch_size: self.batch_size,
            num_timesteps: self.num_timesteps,
            output_mode: OutputMode::MembraneSum,
        }
    }

    /// `key = value` lines describing the run.
    pub fn to_kv(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let mut out = format!(
            "mode = {}\nmax_activity = {}\nbatch_size = {}\nlayer_sizes = {}\nsparse_input_size = {}\n\
             num_timesteps = {}\nrepetitions = {}\nwarmup_discard = {}\nseed = {}\nmeasure = {}\n\
             input_noise = {}\nneurons_per_tile = {}\n",
            self.mode.as_str(),
            self.max_activity,
            self.batch_size,
            sizes.join(","),
            self.sparse_input_size.map_or("auto".to_string(), |s| s.to_string()),
            self.num_timesteps,
            self.repetitions,
            self.warmup_discard,
            self.seed,
            self.measure,
            self.input_noise,
            self.neurons_per_tile,
        );
        out.push_str(&self.machine.to_kv());
        out
    }
}

/// Mean and standard deviation of repeated wall-clock times, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

impl Timing {
    /// Statistics of `times` after dropping the first `discard` entries.
    pub fn from_samples(times: &[f64], discard: usize) -> Option<Self> {
        let kept = times.get(discard..).filter(|k| !k.is_empty())?;
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            samples: kept.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub mode: ActivityMode,
    pub max_activity: f64,
    pub dense_time: Option<Timing>,
    pub sparse_time: Option<Timing>,
    pub dense_ledger: CostLedger,
    pub sparse_ledger: CostLedger,
    pub modeled_accel: f64,
    /// Dense over sparse wall-clock time.
    pub measured_accel: Option<f64>,
    /// Sparse-path throughput.
    pub frames_per_sec: Option<f64>,
    pub sequences_per_sec: Option<f64>,
    /// Realised mean spike fraction of each hidden layer.
    pub observed_activity: Vec<f64>,
}

fn natural_inputs(cfg: &BenchConfig) -> Result<(Vec<Matrix>, Vec<usize>)> {
    let input = cfg.layer_sizes[0];
    let classes = *cfg.layer_sizes.last().unwrap();
    let per_class = cfg.batch_size.div_ceil(classes);
    let streams = synth_pattern_dataset(classes, input, per_class, cfg.num_timesteps, cfg.input_noise, cfg.seed)?;
    // Interleave classes so every batch row gets a different label.
    let mut picked = Vec::with_capacity(cfg.batch_size);
    'outer: for k in 0..per_class {
        for c in 0..classes {
            if picked.len() == cfg.batch_size {
                break 'outer;
            }
            picked.push(streams[c * per_class + k].clone());
        }
    }
    let samples = to_samples(&picked, cfg.num_timesteps, SYNTH_BIN_WIDTH_US)?;
    let refs: Vec<_> = samples.iter().collect();
    let inputs = crate::bptt::batch_inputs(&refs, cfg.num_timesteps)?;
    Ok((inputs, samples.iter().map(|s| s.label).collect()))
}

fn time_steps(net: &Network, inputs: &[Matrix], labels: &[usize], opts: &RunOptions, cfg: &BenchConfig) -> Result<Timing> {
    let mut net = net.clone();
    let mut optimizer = OptimizerState::adam(&net, 1e-3);
    let mut times = Vec::with_capacity(cfg.repetitions + cfg.warmup_discard);
    let mut run = *opts;
    for _ in 0..cfg.repetitions + cfg.warmup_discard {
        let start = Instant::now();
        train_step(&mut net, &mut optimizer, inputs, labels, &run)?;
        times.push(start.elapsed().as_secs_f64());
        run.drop.advance();
    }
    Ok(Timing::from_samples(&times, cfg.warmup_discard).expect("repetitions >= 1"))
}

fn run(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let spec = cfg.spec();
    let net = Network::random(spec.clone(), &cfg.init, cfg.seed)?;
    let (inputs, labels) = natural_inputs(cfg)?;
    let force = cfg.mode == ActivityMode::Fixed;
    let options = |mode| RunOptions {
        force_spikes: force,
        drop: DropRng::new(cfg.seed),
        ..RunOptions::new(mode)
    };

    let (trace, _) = forward_pass(&net, &inputs, &options(ExecMode::Sparse))?;
    let activity = trace.activity();
    let memory = MemoryModel::adam(&spec);
    let mapping = map_neurons_with(&spec, &cfg.machine, cfg.neurons_per_tile, &memory)?;
    let sparse_ledger = simulate_batch(&spec, &mapping, &cfg.machine, &activity)?;
    let dense_ledger = simulate_batch(&spec, &mapping, &cfg.machine, &ActivityTrace::dense(&spec))?;
    let modeled_accel = acceleration_model(&dense_ledger, &sparse_ledger)?;
    let hidden = 1..spec.layer_sizes.len() - 1;
    let observed_activity = activity.mean_activity(&spec)[hidden].to_vec();

    let (dense_time, sparse_time) = if cfg.measure {
        (
            Some(time_steps(&net, &inputs, &labels, &options(ExecMode::Dense), cfg)?),
            Some(time_steps(&net, &inputs, &labels, &options(ExecMode::Sparse), cfg)?),
        )
    } else {
        (None, None)
    };
    let measured_accel = dense_time.zip(sparse_time).map(|(d, s)| d.mean / s.mean);
    let sequences_per_sec = sparse_time.map(|s| cfg.batch_size as f64 / s.mean);
    Ok(BenchResult {
        mode: cfg.mode,
        max_activity: cfg.max_activity,
        dense_time,
        sparse_time,
        dense_ledger,
        sparse_ledger,
        modeled_accel,
        measured_accel,
        frames_per_sec: sequences_per_sec.map(|s| s * cfg.num_timesteps as f64),
        sequences_per_sec,
        observed_activity,
    })
}

/// Runs `config` with every neuron forced to spike.
pub fn run_fixed_activity(config: &BenchConfig) -> Result<BenchResult> {
    run(&BenchConfig {
        mode: ActivityMode::Fixed,
        ..config.clone()
    })
}

/// Runs `config` on synthetic input with unmanipulated dynamics.
pub fn run_natural_activity(config: &BenchConfig) -> Result<BenchResult> {
    run(&BenchConfig {
        mode: ActivityMode::Natural,
        ..config.clone()
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Results for every grid point in both modes, fixed first.
pub fn sparsity_sweep(config: &BenchConfig, activity_grid: &[f64]) -> Result<Vec<BenchResult>> {
    if let Some(a) = activity_grid.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::Config(format!("grid value {a} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(2 * activity_grid.len());
    for mode in [ActivityMode::Fixed, ActivityMode::Natural] {
        for &a in activity_grid {
            out.push(run(&BenchConfig {
                mode,
                max_activity: a,
                ..config.clone()
            })?);
        }
    }
    Ok(out)
}

pub fn sparsity_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("mode,max_activity,communication_sparsity,measured_accel,modeled_accel,frames_per_sec\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.mode.as_str(),
            r.max_activity,
            1.0 - r.max_activity,
            opt(r.measured_accel),
            r.modeled_accel,
            opt(r.frames_per_sec),
        );
    }
    out
}

/// Shared settings of the scale-up and weak-scaling sweeps, which are
/// modeled only and always use the fixed-activity workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub dataset: ScalingDataset,
    pub max_activity: f64,
    pub batch_size: usize,
    pub num_timesteps: usize,
    pub machine: MachineSpec,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            dataset: ScalingDataset::Shd,
            max_activity: 0.05,
            batch_size: 48,
            num_timesteps: 20,
            machine: MachineSpec::default(),
        }
    }
}

impl ScalingConfig {
    pub fn spec(&self, neurons_per_tile: u32) -> Result<NetworkSpec> {
        let layer_sizes = scaling_layers(self.dataset, neurons_per_tile)?;
        Ok(NetworkSpec {
            sparse_sizes: sparse_sizes_for(&layer_sizes, self.max_activity, None),
            layer_sizes,
            batch_size: self.batch_size,
            num_timesteps: self.num_timesteps,
            output_mode: OutputMode::MembraneSum,
        })
    }
}

/// Outcome of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Ok(f64),
    OutOfMemory,
}

impl Cell {
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Ok(v) => Some(*v),
            Cell::OutOfMemory => None,
        }
    }

    fn from(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Cell::Ok(v)),
            Err(Error::OutOfTileMemory { .. }) => Ok(Cell::OutOfMemory),
            Err(e) => Err(e),
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Ok(v) => format!("{v},ok"),
            Cell::OutOfMemory => ",out_of_memory".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleupRow {
    pub neurons_per_tile: u32,
    pub neurons: usize,
    pub modeled_accel: Cell,
}

/// Modeled acceleration of the single-chip architectures.
pub fn scaleup_sweep(config: &ScalingConfig, neurons_per_tile_grid: &[u32]) -> Result<Vec<ScaleupRow>> {
    if neurons_per_tile_grid.is_empty() {
        return Err(Error::Config("empty neurons-per-tile grid".into()));
    }
    neurons_per_tile_grid
        .iter()
        .map(|&npt| {
            let spec = config.spec(npt)?;
            let machine = MachineSpec {
                num_chips: 1,
                ..config.machine.clone()
            };
            let accel = map_neurons_with(&spec, &machine, npt, &MemoryModel::adam(&spec)).and_then(|mapping| {
                let sparse = simulate_batch(&spec, &mapping, &machine, &ActivityTrace::saturated(&spec))?;
                let dense = simulate_batch(&spec, &mapping, &machine, &ActivityTrace::dense(&spec))?;
                acceleration_model(&dense, &sparse)
            });
            Ok(ScaleupRow {
                neurons_per_tile: npt,
                neurons: spec.layer_sizes[1..].iter().sum(),
                modeled_accel: Cell::from(accel)?,
            })
        })
        .collect()
}

pub fn scaleup_csv(rows: &[ScaleupRow]) -> String {
    let mut out = String::from("neurons_per_tile,neurons,modeled_accel,status\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.neurons_per_tile, r.neurons, r.modeled_accel.csv());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakScalingRow {
    pub chips: u32,
    pub batch_size: usize,
    pub neurons_per_tile: u32,
    pub slowdown: Cell,
}

/// Slowdown of the chained network for every grid combination. The
/// per-chip network is the single-chip architecture for the cell's
/// `neurons_per_tile`.
pub fn weak_scaling_sweep(
    config: &ScalingConfig,
    chip_grid: &[u32],
    batch_grid: &[usize],
    per_tile_grid: &[u32],
) -> Result<Vec<WeakScalingRow>> {
    if chip_grid.is_empty() || batch_grid.is_empty() || per_tile_grid.is_empty() {
        return Err(Error::Config("weak-scaling grids must be nonempty".into()));
    }
    let mut rows = Vec::new();
    for &chips in chip_grid {
        for &batch_size in batch_grid {
            for &npt in per_tile_grid {
                let cfg = ScalingConfig {
                    batch_size,
                    ..config.clone()
                };
                let spec = cfg.spec(npt)?;
                let machine = MachineSpec {
                    num_chips: chips,
                    ..config.machine.clone()
                };
                let slowdown = weak_scale_run(&spec, &machine, npt, &MemoryModel::adam(&spec));
                rows.push(WeakScalingRow {
                    chips,
                    batch_size,
                    neurons_per_tile: npt,
                    slowdown: Cell::from(slowdown)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn weak_scaling_csv(rows: &[WeakScalingRow]) -> String {
    let mut out = String::from("chips,batch_size,neurons_per_tile,slowdown,status\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.chips, r.batch_size, r.neurons_per_tile, r.slowdown.csv());
    }
    out
}

/// Creates `out_dir/<unix seconds>/` (with a numeric suffix if taken) and
/// writes `config.txt` into it.
pub fn create_run_dir(out_dir: impl AsRef<Path>, config_text: &str) -> Result<PathBuf> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut dir = out_dir.as_ref().join(stamp.to_string());
    let mut k = 1;
    while dir.exists() {
        dir = out_dir.as_ref().join(format!("{stamp}-{k}"));
        k += 1;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), config_text)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_discarded() {
        let t = Timing::from_samples(&[100.0, 1.0, 3.0], 1).unwrap();
        assert_eq!((t.mean, t.std, t.samples), (2.0, 1.0, 2));
        assert!(Timing::from_samples(&[1.0], 1).is_none());
    }

    #[test]
    fn preset_sizes() {
        assert_eq!(scaling_layers(ScalingDataset::Shd, 2).unwrap(), vec![700, 974, 974, 974, 20]);
        for npt in [2, 4, 8, 16] {
            for d in [ScalingDataset::Shd, ScalingDataset::Nmnist] {
                let n: usize = scaling_layers(d, npt).unwrap()[1..].iter().sum();
                assert!(n <= 1472 * npt as usize && n > 1460 * npt as usize, "{d:?} {npt}: {n}");
            }
        }
    }
}
