use std::path::PathBuf;
use std::str::FromStr;

use sparse_snn::bench::{ActivityMode, ScalingDataset};
use sparse_snn::bptt::ExecMode;
use sparse_snn::model::{InitConfig, OutputMode};
use sparse_snn::tile::MachineSpec;
use sparse_snn::{Error, Result};

/// What `bench` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Sparsity,
    Single,
    Scaleup,
    Weak,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sparsity => "sparsity",
            Self::Single => "single",
            Self::Scaleup => "scaleup",
            Self::Weak => "weak_scaling",
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparsity" => Ok(Self::Sparsity),
            "single" => Ok(Self::Single),
            "scaleup" => Ok(Self::Scaleup),
            "weak" | "weak_scaling" => Ok(Self::Weak),
            other => Err(Error::Config(format!("unknown sweep `{other}`"))),
        }
    }
}

/// Activity fed to `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimActivity {
    Saturated,
    Silent,
    Dense,
    Natural,
}

impl SimActivity {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Saturated => "saturated",
            Self::Silent => "silent",
            Self::Dense => "dense",
            Self::Natural => "natural",
        }
    }
}

impl FromStr for SimActivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturated" | "fixed" => Ok(Self::Saturated),
            "silent" | "zero" => Ok(Self::Silent),
            "dense" => Ok(Self::Dense),
            "natural" => Ok(Self::Natural),
            other => Err(Error::Config(format!("unknown activity `{other}`"))),
        }
    }
}

/// Every tunable of every subcommand, addressable as a flat `key = value`.
/// `None` means the subcommand picks its own default.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,

    pub mode: ExecMode,
    pub max_activity: f64,
    pub sparse_input_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub num_timesteps: Option<usize>,
    pub output_mode: OutputMode,
    pub alpha: f32,
    pub capacitance: f32,
    pub threshold: f32,
    pub grad_threshold: f32,
    pub beta: f32,
    pub weight_scale: Option<f32>,
    pub weight_mean: f32,

    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub bin_width_us: u32,
    pub epochs: u64,
    pub optimizer: String,
    pub learning_rate: f32,
    pub detach_reset: bool,
    pub shuffle: bool,
    pub simulate_tiles: bool,

    pub neurons_per_tile: u32,
    pub machine: MachineSpec,

    pub sweep: Sweep,
    pub activity: Option<String>,
    pub layer_sizes: Option<Vec<usize>>,
    pub activity_grid: Vec<f64>,
    pub repetitions: usize,
    pub warmup_discard: usize,
    pub measure: bool,
    pub input_noise: f64,
    pub scaling_dataset: ScalingDataset,
    pub per_tile_grid: Vec<u32>,
    pub chip_grid: Vec<u32>,
    pub batch_grid: Vec<usize>,

    pub cases: u64,
    pub epsilon: f64,
    pub tolerance: f64,

    pub classes: usize,
    pub input_size: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub noise_rate: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let init = InitConfig::default();
        Self {
            seed: 42,
            threads: 0,
            out_dir: PathBuf::from("runs"),
            mode: ExecMode::Sparse,
            max_activity: 0.1,
            sparse_input_size: None,
            batch_size: None,
            num_timesteps: None,
            output_mode: OutputMode::MembraneSum,
            alpha: init.alpha,
            capacitance: init.capacitance,
            threshold: init.threshold,
            grad_threshold: init.grad_threshold,
            beta: init.beta,
            weight_scale: None,
            weight_mean: init.weight_mean,
            train_manifest: None,
            test_manifest: None,
            hidden: vec![128, 128],
            bin_width_us: sparse_snn::data::SYNTH_BIN_WIDTH_US,
            epochs: 20,
            optimizer: "adam".into(),
            learning_rate: 5e-3,
            detach_reset: false,
            shuffle: true,
            simulate_tiles: false,
            neurons_per_tile: 2,
            machine: MachineSpec::default(),
            sweep: Sweep::Sparsity,
            activity: None,
            layer_sizes: None,
            activity_grid: vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02],
            repetitions: 3,
            warmup_discard: 1,
            measure: true,
            input_noise: 0.02,
            scaling_dataset: ScalingDataset::Shd,
            per_tile_grid: vec![2, 4, 8, 16],
            chip_grid: vec![1, 2, 4, 8, 16],
            batch_grid: vec![48, 96, 192],
            cases: 20,
            epsilon: 1e-3,
            tolerance: 1e-3,
            classes: 10,
            input_size: 128,
            samples_per_class: 20,
            test_per_class: 10,
            noise_rate: 0.05,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected on/off, got `{v}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".into(), T::to_string)
}

fn mode_str(m: ExecMode) -> &'static str {
    match m {
        ExecMode::Dense => "dense",
        ExecMode::Sparse => "sparse",
    }
}

fn dataset_str(d: ScalingDataset) -> &'static str {
    match d {
        ScalingDataset::Shd => "shd",
        ScalingDataset::Nmnist => "nmnist",
    }
}

impl Settings {
    /// Applies a flat `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "mode" => self.mode = v.parse().map_err(Error::Config)?,
            "max_activity" => self.max_activity = parse(key, v)?,
            "sparse_input_size" => self.sparse_input_size = parse_auto(key, v)?,
            "batch_size" => self.batch_size = parse_auto(key, v)?,
            "num_timesteps" => self.num_timesteps = parse_auto(key, v)?,
            "output_mode" => {
                self.output_mode = match v {
                    "membrane" | "membrane_sum" => OutputMode::MembraneSum,
                    "spikes" | "spike_count" => OutputMode::SpikeCount,
                    _ => return Err(Error::Config(format!("unknown output mode `{v}`"))),
                }
            }
            "alpha" => self.alpha = parse(key, v)?,
            "capacitance" => self.capacitance = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "grad_threshold" => self.grad_threshold = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "weight_scale" => self.weight_scale = parse_auto(key, v)?,
            "weight_mean" => self.weight_mean = parse(key, v)?,
            "train_manifest" => self.train_manifest = (v != "none").then(|| PathBuf::from(v)),
            "test_manifest" => self.test_manifest = (v != "none").then(|| PathBuf::from(v)),
            "hidden" => self.hidden = parse_list(key, v)?,
            "bin_width_us" => self.bin_width_us = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "optimizer" => match v {
                "adam" | "sgd" => self.optimizer = v.into(),
                _ => return Err(Error::Config(format!("unknown optimizer `{v}`"))),
            },
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "detach_reset" => self.detach_reset = parse_bool(key, v)?,
            "shuffle" => self.shuffle = parse_bool(key, v)?,
            "simulate_tiles" => self.simulate_tiles = parse_bool(key, v)?,
            "neurons_per_tile" => self.neurons_per_tile = parse(key, v)?,
            "chips" => self.machine.num_chips = parse(key, v)?,
            "sweep" => self.sweep = v.parse()?,
            "activity" => self.activity = (v != "auto").then(|| v.to_string()),
            "layer_sizes" => {
                self.layer_sizes = if v == "auto" { None } else { Some(parse_list(key, v)?) }
            }
            "activity_grid" => self.activity_grid = parse_list(key, v)?,
            "repetitions" => self.repetitions = parse(key, v)?,
            "warmup_discard" => self.warmup_discard = parse(key, v)?,
            "measure" => self.measure = parse_bool(key, v)?,
            "input_noise" => self.input_noise = parse(key, v)?,
            "scaling_dataset" => {
                self.scaling_dataset = match v {
                    "shd" => ScalingDataset::Shd,
                    "nmnist" => ScalingDataset::Nmnist,
                    _ => return Err(Error::Config(format!("unknown scaling dataset `{v}`"))),
                }
            }
            "per_tile_grid" => self.per_tile_grid = parse_list(key, v)?,
            "chip_grid" => self.chip_grid = parse_list(key, v)?,
            "batch_grid" => self.batch_grid = parse_list(key, v)?,
            "cases" => self.cases = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "tolerance" => self.tolerance = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "input_size" => self.input_size = parse(key, v)?,
            "samples_per_class" => self.samples_per_class = parse(key, v)?,
            "test_per_class" => self.test_per_class = parse(key, v)?,
            "noise_rate" => self.noise_rate = parse(key, v)?,
            other => self.machine.set(other, v).map_err(|_| Error::Config(format!("unknown key `{other}`")))?,
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, readable by [`Settings::apply_kv`].
    pub fn to_kv(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or("none".into(), |p| p.display().to_string());
        let lines = [
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("mode", mode_str(self.mode).into()),
            ("max_activity", self.max_activity.to_string()),
            ("sparse_input_size", auto(&self.sparse_input_size)),
            ("batch_size", auto(&self.batch_size)),
            ("num_timesteps", auto(&self.num_timesteps)),
            (
                "output_mode",
                match self.output_mode {
                    OutputMode::MembraneSum => "membrane_sum".into(),
                    OutputMode::SpikeCount => "spike_count".into(),
                },
            ),
            ("alpha", self.alpha.to_string()),
            ("capacitance", self.capacitance.to_string()),
            ("threshold", self.threshold.to_string()),
            ("grad_threshold", self.grad_threshold.to_string()),
            ("beta", self.beta.to_string()),
            ("weight_scale", auto(&self.weight_scale)),
            ("weight_mean", self.weight_mean.to_string()),
            ("train_manifest", opt_path(&self.train_manifest)),
            ("test_manifest", opt_path(&self.test_manifest)),
            ("hidden", join(&self.hidden)),
            ("bin_width_us", self.bin_width_us.to_string()),
            ("epochs", self.epochs.to_string()),
            ("optimizer", self.optimizer.clone()),
            ("learning_rate", self.learning_rate.to_string()),
            ("detach_reset", self.detach_reset.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("simulate_tiles", self.simulate_tiles.to_string()),
            ("neurons_per_tile", self.neurons_per_tile.to_string()),
            ("sweep", self.sweep.as_str().into()),
            ("activity", self.activity.clone().unwrap_or_else(|| "auto".into())),
            ("layer_sizes", self.layer_sizes.as_ref().map_or("auto".into(), |v| join(v))),
            ("activity_grid", join(&self.activity_grid)),
            ("repetitions", self.repetitions.to_string()),
            ("warmup_discard", self.warmup_discard.to_string()),
            ("measure", self.measure.to_string()),
            ("input_noise", self.input_noise.to_string()),
            ("scaling_dataset", dataset_str(self.scaling_dataset).into()),
            ("per_tile_grid", join(&self.per_tile_grid)),
            ("chip_grid", join(&self.chip_grid)),
            ("batch_grid", join(&self.batch_grid)),
            ("cases", self.cases.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("classes", self.classes.to_string()),
            ("input_size", self.input_size.to_string()),
            ("samples_per_class", self.samples_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
        ];
        let mut out: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        out.push_str(&self.machine.to_kv());
        out
    }

    pub fn init(&self, default_scale: f32) -> InitConfig {
        InitConfig {
            alpha: self.alpha,
            capacitance: self.capacitance,
            threshold: self.threshold,
            grad_threshold: self.grad_threshold,
            beta: self.beta,
            weight_scale: self.weight_scale.unwrap_or(default_scale),
            weight_mean: self.weight_mean,
        }
    }

    pub fn bench_activity(&self) -> Result<ActivityMode> {
        self.activity.as_deref().unwrap_or("fixed").parse()
    }

    pub fn sim_activity(&self) -> Result<SimActivity> {
        self.activity.as_deref().unwrap_or("saturated").parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_kv() {
        let mut s = Settings::default();
        s.apply_kv("seed = 7\nhidden = 64, 32\nmode = dense\nchips = 4\nbatch_size = 96\nactivity = natural\n")
            .unwrap();
        let mut back = Settings::default();
        back.apply_kv(&s.to_kv()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.machine.num_chips, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut s = Settings::default();
        let err = s.apply_kv("no_such_key = 3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(s.set("epochs", "many").is_err());
        assert!(s.apply_kv("just words").is_err());
    }

    #[test]
    fn later_values_win() {
        let mut s = Settings::default();
        s.apply_kv("seed = 1\nseed = 2 # comment").unwrap();
        s.set("seed", "3").unwrap();
        assert_eq!(s.seed, 3);
    }
}
