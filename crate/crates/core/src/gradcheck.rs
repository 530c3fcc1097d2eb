//! Independent checks of the backward pass.
//!
//! [`finite_difference_check`] compares the library's `f32` gradients on the
//! relaxed (smooth-spike) model against central differences of a separate
//! `f64` scalar implementation of the same forward equations.
//! [`exactness_check`] compares the dense and sparse paths when no spike can
//! be dropped and every neuron keeps its surrogate gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bptt::{backward_pass, forward_pass, softmax_cross_entropy, ExecMode, RunOptions, SpikeRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{InitConfig, Network, NetworkSpec, OutputMode};
use crate::rng::seeded;

/// Scores of the relaxed model, evaluated in `f64` with plain loops.
/// `weights[l]` is row-major `n × fan_in` of layer `l`.
fn reference_scores(net: &Network, weights: &[Vec<f64>], inputs: &[Matrix]) -> Vec<Vec<f64>> {
    let spec = &net.spec;
    let batch = inputs[0].rows();
    let n_layers = net.layers.len();
    let classes = spec.num_classes();
    let spiking = |li: usize| li + 1 < n_layers || spec.output_mode == OutputMode::SpikeCount;
    let mut scores = vec![vec![0.0f64; classes]; batch];
    for b in 0..batch {
        let mut u: Vec<Vec<f64>> = (0..n_layers).map(|l| vec![0.0; spec.layer_sizes[l + 1]]).collect();
        let mut cur = u.clone();
        for t in 0..spec.num_timesteps {
            let mut s: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
            s.push(inputs[t].row(b).iter().map(|&x| x as f64).collect());
            for li in 0..n_layers {
                let p = &net.layers[li].params;
                let beta = p.beta as f64;
                let row = (0..u[li].len())
                    .map(|i| {
                        if !spiking(li) {
                            return 0.0;
                        }
                        let x = u[li][i] - p.threshold[i] as f64;
                        0.5 + 0.5 * beta * x / (beta * x.abs() + 1.0)
                    })
                    .collect();
                s.push(row);
            }
            for li in 0..n_layers {
                let p = &net.layers[li].params;
                let alpha = p.alpha as f64;
                let gain = (1.0 - alpha) / p.capacitance as f64;
                let fan_in = spec.layer_sizes[li];
                for i in 0..u[li].len() {
                    u[li][i] = alpha * u[li][i] * (1.0 - s[li + 1][i]) + gain * cur[li][i];
                    cur[li][i] = (0..fan_in).map(|j| weights[li][i * fan_in + j] * s[li][j]).sum();
                }
            }
            let out = n_layers - 1;
            match spec.output_mode {
                OutputMode::MembraneSum => {
                    for c in 0..classes {
                        scores[b][c] += u[out][c];
                    }
                }
                OutputMode::SpikeCount => {
                    for c in 0..classes {
                        scores[b][c] += s[out + 1][c];
                    }
                }
            }
        }
    }
    scores
}

fn reference_loss(net: &Network, weights: &[Vec<f64>], inputs: &[Matrix], labels: &[usize]) -> f64 {
    let scores = reference_scores(net, weights, inputs);
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    /// Largest `|analytic − numeric| / max(|numeric|, floor)` over all
    /// weights, with `floor = 1e-2 · max |numeric|` so that near-zero
    /// entries are compared on the scale of the whole gradient.
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central differences with step `epsilon` of the `f64` reference loss,
/// against `backward_pass` on the relaxed model.
pub fn finite_difference_check(
    net: &Network,
    inputs: &[Matrix],
    labels: &[usize],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let (trace, scores) = forward_pass(net, inputs, &RunOptions::relaxed())?;
    let loss = softmax_cross_entropy(&scores, labels)?;
    let grads = backward_pass(net, &trace, &loss.dl_dscores)?;

    let mut weights: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| l.weights.w.as_slice().iter().map(|&x| x as f64).collect())
        .collect();
    let mut pairs = Vec::new();
    for li in 0..weights.len() {
        for k in 0..weights[li].len() {
            let w0 = weights[li][k];
            weights[li][k] = w0 + epsilon;
            let up = reference_loss(net, &weights, inputs, labels);
            weights[li][k] = w0 - epsilon;
            let down = reference_loss(net, &weights, inputs, labels);
            weights[li][k] = w0;
            let numeric = (up - down) / (2.0 * epsilon);
            pairs.push((grads[li].dl_dw.as_slice()[k] as f64, numeric));
        }
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Contract("numeric gradient vanishes everywhere".into()));
    }
    let floor = 1e-2 * scale;
    let max_rel_err = pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        max_rel_err,
        checked: pairs.len(),
        tolerance,
        passed: max_rel_err <= tolerance,
    })
}

/// A random network with its inputs and labels.
#[derive(Clone, Debug)]
pub struct Case {
    pub net: Network,
    pub inputs: Vec<Matrix>,
    pub labels: Vec<usize>,
}

/// Binary input frames with firing probability `rate`.
pub fn random_inputs(batch: usize, size: usize, timesteps: usize, rate: f64, seed: u64) -> Vec<Matrix> {
    let mut rng = seeded(seed, 0x1397);
    (0..timesteps)
        .map(|_| Matrix::from_fn(batch, size, |_, _| if rng.gen_bool(rate) { 1.0 } else { 0.0 }))
        .collect()
}

/// A random case with the given sizes; labels are drawn uniformly.
pub fn random_case(spec: NetworkSpec, init: &InitConfig, input_rate: f64, seed: u64) -> Result<Case> {
    let net = Network::random(spec, init, seed)?;
    let s = &net.spec;
    let inputs = random_inputs(s.batch_size, s.input_size(), s.num_timesteps, input_rate, seed);
    let mut rng = seeded(seed, 0x1abe1);
    let labels = (0..s.batch_size).map(|_| rng.gen_range(0..s.num_classes())).collect();
    Ok(Case { net, inputs, labels })
}

/// Small network for finite-difference checks: 1 to 3 layers of up to 6
/// neurons, B ≤ 3, moderate surrogate steepness. T is long enough for the
/// input to reach the readout: each layer adds a two-step delay.
pub fn tiny_case(seed: u64) -> Result<Case> {
    let mut rng = seeded(seed, 0x71AE);
    let depth = rng.gen_range(1..=3);
    let layer_sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(2..=6)).collect();
    let spec = NetworkSpec {
        sparse_sizes: NetworkSpec::full_capacity(&layer_sizes),
        layer_sizes,
        batch_size: rng.gen_range(1..=3),
        num_timesteps: rng.gen_range(2 * depth + 1..=2 * depth + 6),
        output_mode: if rng.gen_bool(0.5) {
            OutputMode::MembraneSum
        } else {
            OutputMode::SpikeCount
        },
    };
    let init = InitConfig {
        beta: 2.0,
        threshold: 0.5,
        weight_scale: 4.0,
        ..InitConfig::default()
    };
    random_case(spec, &init, 0.4, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub spikes_identical: bool,
    pub scores_identical: bool,
    /// Largest elementwise `|dense − sparse| / max(|dense|, 1e-30)` over all
    /// weight gradients.
    pub max_rel_grad_diff: f64,
}

/// Runs both paths on a copy of `net` with full capacity and the gradient
/// threshold at -1e6, so nothing is dropped and every neuron is retained.
pub fn exactness_check(net: &Network, inputs: &[Matrix], labels: &[usize]) -> Result<ExactnessReport> {
    let mut net = net.clone();
    net.spec.sparse_sizes = NetworkSpec::full_capacity(&net.spec.layer_sizes);
    net.set_grad_threshold(-1e6);
    let run = |mode| -> Result<_> {
        let (trace, scores) = forward_pass(&net, inputs, &RunOptions::new(mode))?;
        let loss = softmax_cross_entropy(&scores, labels)?;
        let grads = backward_pass(&net, &trace, &loss.dl_dscores)?;
        Ok((trace, scores, grads))
    };
    let (dt, ds, dg) = run(ExecMode::Dense)?;
    let (st, ss, sg) = run(ExecMode::Sparse)?;

    let mut spikes_identical = true;
    for li in 0..dt.layers.len() {
        let n = net.spec.layer_sizes[li + 1];
        for (a, b) in dt.layers[li].spikes.iter().zip(&st.layers[li].spikes) {
            let (a, b) = (dense_bits(a, n)?, dense_bits(b, n)?);
            spikes_identical &= a == b;
        }
    }
    let max_rel_grad_diff = dg
        .iter()
        .zip(&sg)
        .flat_map(|(a, b)| a.dl_dw.as_slice().iter().zip(b.dl_dw.as_slice()))
        .map(|(&a, &b)| ((a - b).abs() / a.abs().max(1e-30)) as f64)
        .fold(0.0, f64::max);
    Ok(ExactnessReport {
        spikes_identical,
        scores_identical: ds.as_slice().iter().map(|x| x.to_bits()).eq(ss.as_slice().iter().map(|x| x.to_bits())),
        max_rel_grad_diff,
    })
}

fn dense_bits(r: &SpikeRecord, n: usize) -> Result<Vec<u32>> {
    Ok(r.to_dense(n)?.as_slice().iter().map(|x| x.to_bits()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_matches_library_forward() {
        for seed in 0..5 {
            let case = tiny_case(seed).unwrap();
            let (_, scores) = forward_pass(&case.net, &case.inputs, &RunOptions::relaxed()).unwrap();
            let weights: Vec<Vec<f64>> = case
                .net
                .layers
                .iter()
                .map(|l| l.weights.w.as_slice().iter().map(|&x| x as f64).collect())
                .collect();
            let reference = reference_scores(&case.net, &weights, &case.inputs);
            for (b, row) in reference.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert!((v - scores.get(b, c) as f64).abs() < 1e-4 * (1.0 + v.abs()));
                }
            }
        }
    }
}
