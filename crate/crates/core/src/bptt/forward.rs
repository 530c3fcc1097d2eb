use rayon::prelude::*;

use super::{ExecMode, RunOptions};
use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::model::{membrane_update, Network, OutputMode, SpikeFn};
use crate::tile::{ActivityTrace, PopulationActivity, Representation};
use crate::spikes::{decode_to_dense, encode_binary, encode_sparse_forced, DropSite, SparseSpikeBatch};

/// Spikes of one population at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub enum SpikeRecord {
    /// Binary on the hard path, soft values on the relaxed path.
    Dense(Matrix),
    Sparse(SparseSpikeBatch),
}

impl SpikeRecord {
    pub fn to_dense(&self, n: usize) -> Result<Matrix> {
        match self {
            SpikeRecord::Dense(m) => Ok(m.clone()),
            SpikeRecord::Sparse(s) => decode_to_dense(s, n),
        }
    }

    pub fn as_sparse(&self) -> Option<&SparseSpikeBatch> {
        match self {
            SpikeRecord::Sparse(s) => Some(s),
            SpikeRecord::Dense(_) => None,
        }
    }

    /// Total (spikes, retained entries) over the batch.
    pub fn counts(&self) -> (u64, u64) {
        match self {
            SpikeRecord::Sparse(s) => (s.total_spikes(), s.total_grads()),
            SpikeRecord::Dense(m) => {
                let n = m.as_slice().iter().filter(|&&x| x >= 0.5).count() as u64;
                (n, n)
            }
        }
    }
}

/// Stored activations of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Membrane potentials `u[0..=T]`.
    pub u: Vec<Matrix>,
    /// Stored currents `I[0..=T]`.
    pub i_syn: Vec<Matrix>,
    /// Outgoing spikes `S[0..T]`. Empty for a non-spiking output layer.
    pub spikes: Vec<SpikeRecord>,
}

/// Everything the backward pass needs from the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub options: RunOptions,
    pub batch_size: usize,
    pub num_timesteps: usize,
    /// Input spikes per timestep.
    pub input: Vec<SpikeRecord>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Spike record feeding layer `li` at time `t`.
    pub fn layer_input(&self, li: usize, t: usize) -> &SpikeRecord {
        if li == 0 {
            &self.input[t]
        } else {
            &self.layers[li - 1].spikes[t]
        }
    }

    /// Batch totals of every transmitted population at every timestep.
    /// Dense runs report a full tensor for each population, as shipped.
    pub fn activity(&self) -> ActivityTrace {
        let repr = match self.options.mode {
            ExecMode::Dense => Representation::Dense,
            ExecMode::Sparse => Representation::Sparse,
        };
        let steps = (0..self.num_timesteps)
            .map(|t| {
                let mut pops = vec![&self.input[t]];
                pops.extend(self.layers.iter().filter_map(|l| l.spikes.get(t)));
                pops.into_iter()
                    .map(|rec| {
                        let (spikes, entries) = match rec {
                            SpikeRecord::Dense(m) => (rec.counts().0, m.as_slice().len() as u64),
                            SpikeRecord::Sparse(_) => rec.counts(),
                        };
                        PopulationActivity { spikes, entries }
                    })
                    .collect()
            })
            .collect();
        ActivityTrace {
            representation: repr,
            batch_size: self.batch_size,
            steps,
        }
    }
}

pub(crate) fn is_spiking(net: &Network, li: usize) -> bool {
    li + 1 < net.layers.len() || net.spec.output_mode == OutputMode::SpikeCount
}

fn dense_spikes(u: &Matrix, threshold: &[f32], beta: f32, f: SpikeFn, force: bool) -> Matrix {
    Matrix::from_fn(u.rows(), u.cols(), |b, i| match f {
        SpikeFn::Heaviside => {
            if force || u.get(b, i) >= threshold[i] {
                1.0
            } else {
                0.0
            }
        }
        SpikeFn::Relaxed => f.value(u.get(b, i) - threshold[i], beta),
    })
}

/// Runs the network over `inputs` (one `B × input_size` binary matrix per
/// timestep) and returns the trace plus class scores `B × num_classes`.
pub fn forward_pass(
    net: &Network,
    inputs: &[Matrix],
    opts: &RunOptions,
) -> Result<(ForwardTrace, Matrix)> {
    let spec = &net.spec;
    let t_len = spec.num_timesteps;
    if inputs.len() != t_len {
        return Err(shape_err("forward_pass timesteps", t_len, inputs.len()));
    }
    let batch = inputs[0].rows();
    if batch == 0 || batch > spec.batch_size {
        return Err(Error::Config(format!(
            "batch of {batch} rows does not fit batch size {}",
            spec.batch_size
        )));
    }
    for x in inputs {
        x.check_shape(batch, spec.input_size(), "forward_pass input")?;
    }
    if opts.mode == ExecMode::Sparse && opts.spike_fn != SpikeFn::Heaviside {
        return Err(Error::Config("the relaxed spike function needs the dense path".into()));
    }

    let mut layers: Vec<LayerTrace> = net
        .layers
        .iter()
        .map(|l| {
            let n = l.params.len();
            let mut u = Vec::with_capacity(t_len + 1);
            let mut i_syn = Vec::with_capacity(t_len + 1);
            u.push(Matrix::zeros(batch, n));
            i_syn.push(Matrix::zeros(batch, n));
            LayerTrace {
                u,
                i_syn,
                spikes: Vec::with_capacity(t_len),
            }
        })
        .collect();
    let mut input_records = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let input = match opts.mode {
            ExecMode::Dense if opts.force_spikes => {
                SpikeRecord::Dense(Matrix::filled(batch, spec.input_size(), 1.0))
            }
            ExecMode::Dense => SpikeRecord::Dense(inputs[t].clone()),
            ExecMode::Sparse => SpikeRecord::Sparse(encode_binary(
                &inputs[t],
                spec.sparse_sizes[0],
                DropSite::new(opts.drop, 0, t),
                opts.force_spikes,
            )?),
        };
        input_records.push(input);

        // Spikes at t depend only on u[t], so emit them for every layer
        // before any membrane moves.
        for (li, layer) in net.layers.iter().enumerate() {
            if !is_spiking(net, li) {
                continue;
            }
            let u = &layers[li].u[t];
            let p = &layer.params;
            let rec = match opts.mode {
                ExecMode::Dense => SpikeRecord::Dense(dense_spikes(
                    u,
                    &p.threshold,
                    p.beta,
                    opts.spike_fn,
                    opts.force_spikes,
                )),
                ExecMode::Sparse => SpikeRecord::Sparse(encode_sparse_forced(
                    u,
                    p,
                    spec.sparse_sizes[li + 1],
                    DropSite::new(opts.drop, li + 1, t),
                    true,
                    opts.force_spikes,
                )?),
            };
            layers[li].spikes.push(rec);
        }

        for (li, layer) in net.layers.iter().enumerate() {
            let n = layer.params.len();
            let s_now = if is_spiking(net, li) {
                layers[li].spikes[t].to_dense(n)?
            } else {
                Matrix::zeros(batch, n)
            };
            let (alpha, gain) = (layer.params.alpha, layer.params.current_gain());
            let lt = &layers[li];
            let mut u_next = Matrix::zeros(batch, n);
            u_next
                .as_mut_slice()
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(b, row)| {
                    let (u, s, i) = (lt.u[t].row(b), s_now.row(b), lt.i_syn[t].row(b));
                    for k in 0..n {
                        row[k] = membrane_update(u[k], s[k], i[k], alpha, gain);
                    }
                });
            let source = if li == 0 {
                &input_records[t]
            } else {
                &layers[li - 1].spikes[t]
            };
            let i_next = match source {
                SpikeRecord::Dense(m) => crate::linalg::dense_forward_current(&layer.weights, m)?,
                SpikeRecord::Sparse(s) => crate::linalg::sparse_forward_current(&layer.weights, s)?,
            };
            layers[li].u.push(u_next);
            layers[li].i_syn.push(i_next);
        }
    }

    let out_li = net.layers.len() - 1;
    let classes = spec.num_classes();
    let mut scores = Matrix::zeros(batch, classes);
    match spec.output_mode {
        OutputMode::MembraneSum => {
            for t in 1..=t_len {
                scores.add_assign(&layers[out_li].u[t])?;
            }
        }
        OutputMode::SpikeCount => {
            for t in 0..t_len {
                scores.add_assign(&layers[out_li].spikes[t].to_dense(classes)?)?;
            }
        }
    }

    let trace = ForwardTrace {
        options: *opts,
        batch_size: batch,
        num_timesteps: t_len,
        input: input_records,
        layers,
    };
    Ok((trace, scores))
}
