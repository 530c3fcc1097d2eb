use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-snn"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The single run directory created under `dir`.
fn run_dir(dir: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.pop().unwrap()
}

fn gen_data(dir: &Path) {
    let o = run(dir, &["gen-data", "--out-dir", "data", "--set", "classes=3", "--set", "num_timesteps=12"]);
    assert!(o.status.success());
}

const DATA: [&str; 6] = [
    "--set",
    "train_manifest=data/train/manifest.csv",
    "--set",
    "test_manifest=data/test/manifest.csv",
    "--set",
    "hidden=16",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let args: Vec<&str> = ["train"].iter().chain(&DATA).chain(extra).copied().collect();
    run(dir, &args)
}

#[test]
fn help_lists_every_flag() {
    let o = run(Path::new("."), &["train", "--help"]);
    let text = stdout(&o);
    for flag in [
        "--config",
        "--seed",
        "--mode",
        "--max-activity",
        "--epochs",
        "--batch-size",
        "--threads",
        "--chips",
        "--neurons-per-tile",
        "--out-dir",
        "--simulate-tiles",
        "--set",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(d, &["gradcheck", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(run(d, &["train"]).status.code(), Some(2));
    assert_eq!(
        run(d, &["train", "--set", "train_manifest=missing.csv"]).status.code(),
        Some(3)
    );
    fs::write(d.join("bad.csv"), "path,label\nnot_there.esf,0\n").unwrap();
    assert_eq!(run(d, &["train", "--set", "train_manifest=bad.csv"]).status.code(), Some(3));

    gen_data(d);
    let o = train(d, &["--epochs", "0", "--simulate-tiles", "on", "--set", "sram_per_tile=64"]);
    assert_eq!(o.status.code(), Some(4));
    let o = train(d, &["--epochs", "0", "--set", "sram_per_tile=64"]);
    assert_eq!(o.status.code(), Some(0), "memory is only checked with --simulate-tiles on");
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let o = train(dir.path(), &["--epochs", "0", "--out-dir", "out"]);
    assert!(o.status.success());
    let run = run_dir(&dir.path().join("out"));
    let ckpt = fs::read_to_string(run.join("checkpoint.json")).unwrap();
    assert!(ckpt.contains("\"epoch\":0") || ckpt.contains("\"epoch\": 0"));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), "# settings\nseed = 5\nlayer_sizes = 16,8,4\nnum_timesteps = 2\nbatch_size = 2\n").unwrap();
    let o = run(d, &["simulate", "--config", "run.cfg", "--seed", "9", "--set", "batch_size=3", "--out-dir", "o"]);
    assert!(o.status.success());
    let echo = fs::read_to_string(run_dir(&d.join("o")).join("config.txt")).unwrap();
    assert!(echo.contains("seed = 9\n"));
    assert!(echo.contains("batch_size = 3\n"));
    assert!(echo.contains("layer_sizes = 16,8,4\n"));
}

#[test]
fn silent_simulation_ships_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--set",
        "activity=silent",
        "--set",
        "layer_sizes=16,8,4",
        "--set",
        "num_timesteps=3",
        "--batch-size",
        "2",
        "--out-dir",
        "o",
    ];
    let o = run(dir.path(), &args);
    assert!(o.status.success());
    let text = stdout(&o);
    let field = |name: &str| -> u64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    // Six tiles each receive an 8-byte header per batch row and timestep.
    assert_eq!(field("tiles"), 6);
    assert_eq!(field("intra_bytes"), 6 * 3 * 2 * 8);
    assert_eq!(field("inter_bytes"), 0);
}

#[test]
fn gradcheck_passes_on_default_tiny_nets() {
    let o = run(Path::new("."), &["gradcheck"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("PASS max_rel_err="), "{text}");
    let err: f64 = text.split_whitespace().nth(1).unwrap().trim_start_matches("max_rel_err=").parse().unwrap();
    assert!(err < 1e-3);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert!(run(dir.path(), &["gen-data", "--seed", "3", "--out-dir", out]).status.success());
    }
    for split in ["train", "test"] {
        let (a, b) = (dir.path().join("a").join(split), dir.path().join("b").join(split));
        let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert!(names.len() > 1);
        for name in names {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        }
    }
}

#[test]
fn full_capacity_sparse_training_matches_dense() {
    // Every neuron keeps its surrogate gradient, as on the dense path.
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    for (mode, out) in [("dense", "d"), ("sparse", "s")] {
        let o = train(dir.path(), &[
            "--mode",
            mode,
            "--max-activity",
            "1.0",
            "--epochs",
            "3",
            "--out-dir",
            out,
            "--set",
            "grad_threshold=-1e6",
        ]);
        assert!(o.status.success());
    }
    let read = |out: &str| fs::read_to_string(run_dir(&dir.path().join(out)).join("metrics.csv")).unwrap();
    assert_eq!(read("d"), read("s"));
}
