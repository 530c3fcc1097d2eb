use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, softmax_cross_entropy};
use super::{backward_pass, forward_pass, ExecMode, OptimizerState, RunOptions};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Network;
use crate::rng::{seeded, DropRng};
use crate::tile::ActivityTrace;

/// One labelled input sequence, `T × input_size` binary frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub frames: Matrix,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub mode: ExecMode,
    pub seed: u64,
    pub detach_reset: bool,
    pub force_spikes: bool,
    pub shuffle: bool,
}

impl TrainOptions {
    pub fn new(mode: ExecMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            detach_reset: false,
            force_spikes: false,
            shuffle: true,
        }
    }

    fn run_options(&self, position: u64) -> RunOptions {
        RunOptions {
            detach_reset: self.detach_reset,
            force_spikes: self.force_spikes,
            drop: DropRng::at(self.seed, position),
            ..RunOptions::new(self.mode)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f32,
    pub correct: usize,
    pub activity: ActivityTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub mean_loss: f32,
    pub accuracy: f32,
    pub batch_losses: Vec<f32>,
}

/// Regroups per-sample frames into one `B × input_size` matrix per step.
pub fn batch_inputs(samples: &[&Sample], num_timesteps: usize) -> Result<Vec<Matrix>> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let n = first.frames.cols();
    let mut out = vec![Matrix::zeros(samples.len(), n); num_timesteps];
    for (b, s) in samples.iter().enumerate() {
        s.frames.check_shape(num_timesteps, n, "batch_inputs")?;
        for (t, m) in out.iter_mut().enumerate() {
            m.row_mut(b).copy_from_slice(s.frames.row(t));
        }
    }
    Ok(out)
}

/// Forward, loss, backward and one optimizer update on a single batch.
pub fn train_step(
    net: &mut Network,
    optimizer: &mut OptimizerState,
    inputs: &[Matrix],
    labels: &[usize],
    opts: &RunOptions,
) -> Result<StepOutput> {
    let (trace, scores) = forward_pass(net, inputs, opts)?;
    let loss = softmax_cross_entropy(&scores, labels)?;
    let grads = backward_pass(net, &trace, &loss.dl_dscores)?;
    optimizer.step(net, &grads)?;
    Ok(StepOutput {
        loss: loss.loss,
        correct: loss.correct,
        activity: trace.activity(),
    })
}

fn epoch_order(n: usize, opts: &TrainOptions, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if opts.shuffle {
        order.shuffle(&mut seeded(opts.seed, 0x5u64 << 40 | epoch));
    }
    order
}

/// Drop-stream positions reserved per epoch; evaluation uses the top half
/// of the position space.
const POSITIONS_PER_EPOCH: u64 = 1 << 24;
const EVAL_POSITION: u64 = 1 << 62;

/// One pass over `samples` in batches of `net.spec.batch_size`; the last
/// batch may be smaller.
pub fn train_epoch(
    net: &mut Network,
    optimizer: &mut OptimizerState,
    samples: &[Sample],
    opts: &TrainOptions,
    epoch: u64,
) -> Result<EpochMetrics> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order = epoch_order(samples.len(), opts, epoch);
    let mut batch_losses = Vec::new();
    let mut correct = 0;
    let mut weighted_loss = 0.0f64;
    for (k, chunk) in order.chunks(net.spec.batch_size).enumerate() {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let inputs = batch_inputs(&batch, net.spec.num_timesteps)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let run = opts.run_options(epoch * POSITIONS_PER_EPOCH + k as u64);
        let out = train_step(net, optimizer, &inputs, &labels, &run)?;
        weighted_loss += out.loss as f64 * batch.len() as f64;
        correct += out.correct;
        batch_losses.push(out.loss);
    }
    Ok(EpochMetrics {
        mean_loss: (weighted_loss / samples.len() as f64) as f32,
        accuracy: correct as f32 / samples.len() as f32,
        batch_losses,
    })
}

/// Mean loss and accuracy of `net` on `samples`, without updating it.
pub fn evaluate(net: &Network, samples: &[Sample], opts: &TrainOptions) -> Result<(f32, f32)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    let mut weighted_loss = 0.0f64;
    for (k, chunk) in samples.chunks(net.spec.batch_size).enumerate() {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let inputs = batch_inputs(&batch, net.spec.num_timesteps)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let (_, scores) = forward_pass(net, &inputs, &opts.run_options(EVAL_POSITION + k as u64))?;
        let loss = softmax_cross_entropy(&scores, &labels)?;
        weighted_loss += loss.loss as f64 * batch.len() as f64;
        correct += (0..scores.rows())
            .filter(|&b| argmax(scores.row(b)) == labels[b])
            .count();
    }
    Ok((
        (weighted_loss / samples.len() as f64) as f32,
        correct as f32 / samples.len() as f32,
    ))
}
