//! Event streams: the ESF file format, binning into spike frames, dataset
//! size presets and a synthetic pattern task.
//!
//! # ESF layout
//!
//! All integers are little-endian `u32`.
//!
//! | offset | field                               |
//! |--------|-------------------------------------|
//! | 0      | magic `ESFv0001` (8 bytes)          |
//! | 8      | `num_channels`                      |
//! | 12     | `num_events`                        |
//! | 16     | `label`                             |
//! | 20     | `num_events` × (`timestamp_us`, `channel`) |

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bptt::Sample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

pub const ESF_MAGIC: &[u8; 8] = b"ESFv0001";
const HEADER_LEN: usize = 20;

/// One recorded sequence of `(timestamp µs, channel)` events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<(u32, u32)>,
    pub num_channels: u32,
    pub label: u32,
}

impl EventStream {
    pub fn new(num_channels: u32, label: u32, mut events: Vec<(u32, u32)>) -> Result<Self> {
        if let Some(&(_, c)) = events.iter().find(|e| e.1 >= num_channels) {
            return Err(Error::Format(format!(
                "channel {c} out of range for {num_channels} channels"
            )));
        }
        events.sort_by_key(|e| e.0);
        Ok(Self {
            events,
            num_channels,
            label,
        })
    }

    /// Timestamp of the last event, or 0 for an empty stream.
    pub fn duration_us(&self) -> u32 {
        self.events.last().map_or(0, |e| e.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.events.len());
        out.extend_from_slice(ESF_MAGIC);
        for v in [self.num_channels, self.events.len() as u32, self.label] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &(t, c) in &self.events {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        if &bytes[..8] != ESF_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (num_channels, num_events, label) = (word(8), word(12), word(16));
        let expected = HEADER_LEN as u64 + 8 * num_events as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::Format(format!(
                "truncated: {num_events} events need {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes.len() as u64 > expected {
            return Err(Error::Format("trailing bytes after last event".into()));
        }
        let events = (0..num_events as usize)
            .map(|k| {
                let at = HEADER_LEN + 8 * k;
                (word(at), word(at + 4))
            })
            .collect();
        Self::new(num_channels, label, events)
    }
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventStream> {
    EventStream::from_bytes(&fs::read(path)?)
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    fs::write(path, stream.to_bytes())?;
    Ok(())
}

/// Bins events into a `num_timesteps × num_channels` binary matrix. Bin `t`
/// covers `[t·Δ, (t+1)·Δ)`; later events are dropped.
pub fn bin_events(stream: &EventStream, num_timesteps: usize, bin_width_us: u32) -> Result<Matrix> {
    if bin_width_us == 0 {
        return Err(Error::Config("bin width must be positive".into()));
    }
    let mut frames = Matrix::zeros(num_timesteps, stream.num_channels as usize);
    for &(t, c) in &stream.events {
        let bin = (t / bin_width_us) as usize;
        if bin < num_timesteps {
            frames.set(bin, c as usize, 1.0);
        }
    }
    Ok(frames)
}

/// Capacity of a sparse tensor for a layer of `dense_size` neurons:
/// `floor(max_activity · dense_size / 2) · 2`, at least 2.
pub fn sparse_hidden_size(max_activity: f64, dense_size: usize) -> usize {
    let pairs = (max_activity * dense_size as f64 / 2.0).floor() as usize;
    (pairs * 2).max(2)
}

/// Input and output sizes of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub input_size: usize,
    pub sparse_input_size: usize,
    pub num_classes: usize,
}

impl DatasetSpec {
    fn of(name: &str, input_size: usize, sparse_input_size: usize, num_classes: usize) -> Self {
        Self {
            name: name.into(),
            input_size,
            sparse_input_size,
            num_classes,
        }
    }

    /// Spiking Heidelberg Digits.
    pub fn shd() -> Self {
        Self::of("shd", 700, 48, 20)
    }

    pub fn nmnist() -> Self {
        Self::of("nmnist", 2048, 32, 10)
    }

    pub fn dvs_gesture() -> Self {
        Self::of("dvsgesture", 4608, 96, 11)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "shd" => Ok(Self::shd()),
            "nmnist" => Ok(Self::nmnist()),
            "dvsgesture" | "dvs_gesture" | "dvs-gesture" => Ok(Self::dvs_gesture()),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sparse_input_size.is_multiple_of(2) || self.sparse_input_size > self.input_size {
            return Err(Error::Config(format!(
                "sparse input size {} must be even and at most {}",
                self.sparse_input_size, self.input_size
            )));
        }
        Ok(())
    }
}

/// Bin width used by [`synth_pattern_dataset`].
pub const SYNTH_BIN_WIDTH_US: u32 = 1000;
/// Fraction of (timestep, channel) cells set in a class template.
pub const SYNTH_TEMPLATE_DENSITY: f64 = 0.05;

/// Class templates are random sparse spatio-temporal event patterns; each
/// sample is its class template plus Poisson noise with `noise_rate`
/// expected extra events per channel and timestep. Samples are ordered by
/// class, then by index within the class.
pub fn synth_pattern_dataset(
    num_classes: usize,
    input_size: usize,
    samples_per_class: usize,
    num_timesteps: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<EventStream>> {
    if num_classes == 0 || input_size == 0 || samples_per_class == 0 || num_timesteps == 0 {
        return Err(Error::Config("dataset dimensions must be positive".into()));
    }
    if !(noise_rate >= 0.0) || !noise_rate.is_finite() {
        return Err(Error::Config("noise rate must be non-negative".into()));
    }
    let noise = (noise_rate > 0.0).then(|| Poisson::new(noise_rate).unwrap());
    let mut out = Vec::with_capacity(num_classes * samples_per_class);
    for class in 0..num_classes {
        let mut rng = seeded(seed, 0xDA7A_0000_0000 | class as u64);
        let mut template = Vec::new();
        for t in 0..num_timesteps {
            for c in 0..input_size {
                if rng.gen_bool(SYNTH_TEMPLATE_DENSITY) {
                    template.push((t as u32 * SYNTH_BIN_WIDTH_US, c as u32));
                }
            }
        }
        for k in 0..samples_per_class {
            let mut events = template.clone();
            if let Some(noise) = &noise {
                let mut rng = seeded(seed, 0xDA7A_0001_0000_0000 | (class * samples_per_class + k) as u64);
                for t in 0..num_timesteps {
                    for c in 0..input_size {
                        let n: f64 = noise.sample(&mut rng);
                        for _ in 0..n as u64 {
                            let at = t as u32 * SYNTH_BIN_WIDTH_US + rng.gen_range(0..SYNTH_BIN_WIDTH_US);
                            events.push((at, c as u32));
                        }
                    }
                }
            }
            out.push(EventStream::new(input_size as u32, class as u32, events)?);
        }
    }
    Ok(out)
}

/// Bins every stream into a training sample.
pub fn to_samples(streams: &[EventStream], num_timesteps: usize, bin_width_us: u32) -> Result<Vec<Sample>> {
    streams
        .iter()
        .map(|s| {
            Ok(Sample {
                frames: bin_events(s, num_timesteps, bin_width_us)?,
                label: s.label as usize,
            })
        })
        .collect()
}

/// Writes one ESF file per stream plus `manifest.csv` (`path,label`, paths
/// relative to `dir`). Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, streams: &[EventStream]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("path,label\n");
    for (k, s) in streams.iter().enumerate() {
        let name = format!("sample_{k:06}.esf");
        write_events(dir.join(&name), s)?;
        manifest.push_str(&format!("{name},{}\n", s.label));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Loads every stream listed in a manifest. A label column that disagrees
/// with the file header is an error.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<EventStream>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "path,label") {
            continue;
        }
        let (file, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Format(format!("manifest line {}: expected path,label", lineno + 1)))?;
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest line {}: bad label", lineno + 1)))?;
        let stream = load_events(base.join(file.trim()))?;
        if stream.label != label {
            return Err(Error::Format(format!(
                "{file}: manifest label {label} but file label {}",
                stream.label
            )));
        }
        out.push(stream);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
