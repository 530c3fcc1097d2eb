use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use sparse_snn::bench::{
    benchmark_layers, create_run_dir, run_fixed_activity, run_natural_activity, scaleup_csv, scaleup_sweep,
    sparse_sizes_for, sparsity_csv, sparsity_sweep, weak_scaling_csv, weak_scaling_sweep, ActivityMode,
    BenchConfig, BenchResult, ScalingConfig,
};
use sparse_snn::bptt::{
    batch_inputs, evaluate, forward_pass, train_epoch, Checkpoint, ExecMode, OptimizerState, RunOptions, Sample,
    TrainOptions,
};
use sparse_snn::data::{load_manifest, synth_pattern_dataset, to_samples, write_dataset, EventStream};
use sparse_snn::gradcheck::{exactness_check, finite_difference_check, random_inputs, tiny_case};
use sparse_snn::model::{InitConfig, Network, NetworkSpec};
use sparse_snn::rng::DropRng;
use sparse_snn::tile::{map_neurons, simulate_batch, ActivityTrace, TileMapping};
use sparse_snn::{Error, Result};

use crate::settings::{Settings, SimActivity, Sweep};

const TRAIN_BATCH: usize = 32;
const BENCH_BATCH: usize = 48;
const BENCH_TIMESTEPS: usize = 100;
const SCALING_TIMESTEPS: usize = 20;
const GEN_TIMESTEPS: usize = 50;
const BENCH_WEIGHT_SCALE: f32 = 12.0;
/// Largest dense/sparse relative gradient gap accepted by `gradcheck`.
const EXACTNESS_TOLERANCE: f64 = 1e-6;

fn check_activity(a: f64) -> Result<()> {
    if a > 0.0 && a <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("max_activity must be in (0, 1], got {a}")))
    }
}

fn load(path: &Path) -> Result<Vec<EventStream>> {
    load_manifest(path).map_err(|e| match e {
        Error::Io(io) => Error::Format(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn run_options(mode: ExecMode, seed: u64) -> RunOptions {
    RunOptions {
        drop: DropRng::new(seed),
        ..RunOptions::new(mode)
    }
}

/// Modeled cycles of one batch taken from the front of `samples`.
fn modeled_cycles(net: &Network, samples: &[Sample], s: &Settings, mapping: &TileMapping) -> Result<Option<f64>> {
    let b = net.spec.batch_size;
    if samples.len() < b {
        return Ok(None);
    }
    let batch: Vec<&Sample> = samples[..b].iter().collect();
    let inputs = batch_inputs(&batch, net.spec.num_timesteps)?;
    let (trace, _) = forward_pass(net, &inputs, &run_options(s.mode, s.seed))?;
    let ledger = simulate_batch(&net.spec, mapping, &s.machine, &trace.activity())?;
    Ok(Some(ledger.total_time()))
}

pub fn train(s: &Settings) -> Result<bool> {
    check_activity(s.max_activity)?;
    let path = s
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::Config("train_manifest is required".into()))?;
    let train_streams = load(path)?;
    let test_streams = s.test_manifest.as_deref().map(load).transpose()?.unwrap_or_default();
    let all = || train_streams.iter().chain(&test_streams);
    let input = train_streams[0].num_channels as usize;
    if all().any(|st| st.num_channels as usize != input) {
        return Err(Error::Format("streams disagree on the channel count".into()));
    }
    if s.bin_width_us == 0 {
        return Err(Error::Config("bin_width_us must be positive".into()));
    }
    let classes = all().map(|st| st.label as usize).max().unwrap_or(0) + 1;
    let num_timesteps = s
        .num_timesteps
        .unwrap_or_else(|| all().map(|st| (st.duration_us() / s.bin_width_us) as usize + 1).max().unwrap_or(1));
    let train_set = to_samples(&train_streams, num_timesteps, s.bin_width_us)?;
    let test_set = to_samples(&test_streams, num_timesteps, s.bin_width_us)?;

    let mut layer_sizes = vec![input];
    layer_sizes.extend(&s.hidden);
    layer_sizes.push(classes);
    let spec = NetworkSpec {
        sparse_sizes: sparse_sizes_for(&layer_sizes, s.max_activity, s.sparse_input_size),
        layer_sizes,
        batch_size: s.batch_size.unwrap_or(TRAIN_BATCH),
        num_timesteps,
        output_mode: s.output_mode,
    };
    let mut net = Network::random(spec, &s.init(InitConfig::default().weight_scale), s.seed)?;
    let mut optimizer = match s.optimizer.as_str() {
        "sgd" => OptimizerState::sgd(s.learning_rate),
        _ => OptimizerState::adam(&net, s.learning_rate),
    };
    let opts = TrainOptions {
        detach_reset: s.detach_reset,
        shuffle: s.shuffle,
        ..TrainOptions::new(s.mode, s.seed)
    };
    let mapping = if s.simulate_tiles {
        let m = map_neurons(&net.spec, &s.machine, s.neurons_per_tile)?;
        println!("mapped onto {} tiles on {} chip(s)", m.occupied_tiles(), m.chips_used());
        Some(m)
    } else {
        None
    };

    let dir = create_run_dir(&s.out_dir, &s.to_kv())?;
    let mut csv = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy,modeled_cycles\n");
    let mut row = |epoch: u64, loss: f32, acc: f32, net: &Network, secs: f64| -> Result<()> {
        let (test_loss, test_acc) = if test_set.is_empty() {
            (String::new(), String::new())
        } else {
            let (l, a) = evaluate(net, &test_set, &opts)?;
            (l.to_string(), a.to_string())
        };
        let cycles = match &mapping {
            Some(m) => modeled_cycles(net, &train_set, s, m)?.map_or(String::new(), |c| c.to_string()),
            None => String::new(),
        };
        println!("epoch {epoch:>4}  loss {loss:.4}  acc {acc:.4}  test_loss {test_loss}  test_acc {test_acc}  {secs:.2}s");
        let _ = writeln!(csv, "{epoch},{loss},{acc},{test_loss},{test_acc},{cycles}");
        Ok(())
    };

    let (loss, acc) = evaluate(&net, &train_set, &opts)?;
    row(0, loss, acc, &net, 0.0)?;
    for epoch in 1..=s.epochs {
        let start = Instant::now();
        let m = train_epoch(&mut net, &mut optimizer, &train_set, &opts, epoch)?;
        row(epoch, m.mean_loss, m.accuracy, &net, start.elapsed().as_secs_f64())?;
    }
    fs::write(dir.join("metrics.csv"), csv)?;
    Checkpoint::new(net, optimizer, s.seed, s.epochs).save(dir.join("checkpoint.json"))?;
    println!("wrote {}", dir.display());
    Ok(true)
}

fn bench_config(s: &Settings, mode: ActivityMode) -> Result<BenchConfig> {
    let cfg = BenchConfig {
        mode,
        max_activity: s.max_activity,
        batch_size: s.batch_size.unwrap_or(BENCH_BATCH),
        layer_sizes: s.layer_sizes.clone().unwrap_or_else(benchmark_layers),
        sparse_input_size: s.sparse_input_size,
        num_timesteps: s.num_timesteps.unwrap_or(BENCH_TIMESTEPS),
        repetitions: s.repetitions,
        warmup_discard: s.warmup_discard,
        seed: s.seed,
        measure: s.measure,
        input_noise: s.input_noise,
        machine: s.machine.clone(),
        neurons_per_tile: s.neurons_per_tile,
        init: s.init(BENCH_WEIGHT_SCALE),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_result(r: &BenchResult) {
    let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
    println!(
        "{:<8} activity {:<5} modeled_accel {:.3}  measured_accel {}",
        r.mode.as_str(),
        r.max_activity,
        r.modeled_accel,
        fmt(r.measured_accel)
    );
}

pub fn bench(s: &Settings) -> Result<bool> {
    check_activity(s.max_activity)?;
    let scaling = || ScalingConfig {
        dataset: s.scaling_dataset,
        max_activity: s.max_activity,
        batch_size: s.batch_size.unwrap_or(BENCH_BATCH),
        num_timesteps: s.num_timesteps.unwrap_or(SCALING_TIMESTEPS),
        machine: s.machine.clone(),
    };
    let csv = match s.sweep {
        Sweep::Sparsity => {
            let results = sparsity_sweep(&bench_config(s, ActivityMode::Fixed)?, &s.activity_grid)?;
            results.iter().for_each(print_result);
            sparsity_csv(&results)
        }
        Sweep::Single => {
            let mode = s.bench_activity()?;
            let cfg = bench_config(s, mode)?;
            let r = match mode {
                ActivityMode::Fixed => run_fixed_activity(&cfg)?,
                ActivityMode::Natural => run_natural_activity(&cfg)?,
            };
            print_result(&r);
            sparsity_csv(&[r])
        }
        Sweep::Scaleup => scaleup_csv(&scaleup_sweep(&scaling(), &s.per_tile_grid)?),
        Sweep::Weak => weak_scaling_csv(&weak_scaling_sweep(
            &scaling(),
            &s.chip_grid,
            &s.batch_grid,
            &s.per_tile_grid,
        )?),
    };
    let dir = create_run_dir(&s.out_dir, &s.to_kv())?;
    let path = dir.join(format!("{}.csv", s.sweep.as_str()));
    fs::write(&path, &csv)?;
    if matches!(s.sweep, Sweep::Scaleup | Sweep::Weak) {
        print!("{csv}");
    }
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn simulate(s: &Settings) -> Result<bool> {
    check_activity(s.max_activity)?;
    let layer_sizes = s.layer_sizes.clone().unwrap_or_else(benchmark_layers);
    let spec = NetworkSpec {
        sparse_sizes: sparse_sizes_for(&layer_sizes, s.max_activity, s.sparse_input_size),
        layer_sizes,
        batch_size: s.batch_size.unwrap_or(BENCH_BATCH),
        num_timesteps: s.num_timesteps.unwrap_or(BENCH_TIMESTEPS),
        output_mode: s.output_mode,
    };
    spec.validate()?;
    s.machine.validate()?;
    let mapping = map_neurons(&spec, &s.machine, s.neurons_per_tile)?;
    let kind = s.sim_activity()?;
    let activity = match kind {
        SimActivity::Saturated => ActivityTrace::saturated(&spec),
        SimActivity::Silent => ActivityTrace::silent(&spec),
        SimActivity::Dense => ActivityTrace::dense(&spec),
        SimActivity::Natural => {
            let net = Network::random(spec.clone(), &s.init(BENCH_WEIGHT_SCALE), s.seed)?;
            let inputs = random_inputs(
                spec.batch_size,
                spec.input_size(),
                spec.num_timesteps,
                s.input_noise.min(1.0),
                s.seed,
            );
            forward_pass(&net, &inputs, &run_options(s.mode, s.seed))?.0.activity()
        }
    };
    let ledger = simulate_batch(&spec, &mapping, &s.machine, &activity)?;
    let dir = create_run_dir(&s.out_dir, &s.to_kv())?;
    fs::write(dir.join("ledger.csv"), ledger.to_csv())?;
    println!("activity        {}", kind.as_str());
    println!("tiles           {}", mapping.occupied_tiles());
    println!("chips           {}", mapping.chips_used());
    println!("supersteps      {}", ledger.sync_count());
    println!("total_cycles    {}", ledger.total_time());
    println!("compute_cycles  {}", ledger.compute_cycles());
    println!("intra_bytes     {}", ledger.intra_bytes());
    println!("inter_bytes     {}", ledger.inter_bytes());
    println!("wrote {}", dir.join("ledger.csv").display());
    Ok(true)
}

pub fn gradcheck(s: &Settings) -> Result<bool> {
    if s.cases == 0 {
        return Err(Error::Config("cases must be at least 1".into()));
    }
    let mut fd_err = 0.0f64;
    let mut exact_err = 0.0f64;
    let mut bitwise = true;
    for k in 0..s.cases {
        let case = tiny_case(s.seed.wrapping_add(k))?;
        let fd = finite_difference_check(&case.net, &case.inputs, &case.labels, s.epsilon, s.tolerance)?;
        fd_err = fd_err.max(fd.max_rel_err);
        let ex = exactness_check(&case.net, &case.inputs, &case.labels)?;
        bitwise &= ex.spikes_identical && ex.scores_identical;
        exact_err = exact_err.max(ex.max_rel_grad_diff);
    }
    let fd_ok = fd_err <= s.tolerance;
    let exact_ok = bitwise && exact_err <= EXACTNESS_TOLERANCE;
    let verdict = |ok| if ok { "PASS" } else { "FAIL" };
    println!(
        "{} max_rel_err={fd_err:.3e} tolerance={:e} cases={}",
        verdict(fd_ok),
        s.tolerance,
        s.cases
    );
    println!(
        "{} exactness spikes_and_scores_identical={bitwise} max_rel_grad_diff={exact_err:.3e} cases={}",
        verdict(exact_ok),
        s.cases
    );
    Ok(fd_ok && exact_ok)
}

pub fn gen_data(s: &Settings) -> Result<bool> {
    let per_class = s.samples_per_class + s.test_per_class;
    let streams = synth_pattern_dataset(
        s.classes,
        s.input_size,
        per_class,
        s.num_timesteps.unwrap_or(GEN_TIMESTEPS),
        s.noise_rate,
        s.seed,
    )?;
    let (train, test): (Vec<_>, Vec<_>) = streams
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % per_class < s.samples_per_class);
    let strip = |v: Vec<(usize, EventStream)>| v.into_iter().map(|p| p.1).collect::<Vec<_>>();
    let train = strip(train);
    if train.is_empty() {
        return Err(Error::Config("samples_per_class must be at least 1".into()));
    }
    println!("wrote {}", write_dataset(s.out_dir.join("train"), &train)?.display());
    let test = strip(test);
    if !test.is_empty() {
        println!("wrote {}", write_dataset(s.out_dir.join("test"), &test)?.display());
    }
    Ok(true)
}
