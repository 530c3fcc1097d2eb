//! Reverse-time sweep.
//!
//! With `c = (1 − α)/C`, step `t` of a layer is differentiated as
//!
//! ```text
//! gI[t+1] = c · gu[t+2]
//! gW     += gI[t+1] ⊗ S_in[t]            gS_in[t] = Wᵀ · gI[t+1]
//! gS[t]   = gS_from_above[t] + ∂L/∂S[t] − α · u[t] · gu[t+1]
//! gu[t]   = α(1 − S[t]) · gu[t+1] + S'(u[t] − ϑ) · gS[t] + ∂L/∂u[t]
//! ```
//!
//! On the sparse path `gS` and `S'` exist only for retained entries.

use rayon::prelude::*;

use super::forward::{is_spiking, ForwardTrace, SpikeRecord};
use crate::error::{Error, Result};
use crate::linalg::{
    dense_input_grad, dense_weight_grad, sparse_input_grad, sparse_weight_grad, GradientSet,
};
use crate::matrix::Matrix;
use crate::model::{Network, OutputMode};

/// Gradients of the loss w.r.t. every layer, given `dl_dscores`
/// (`B × num_classes`).
pub fn backward_pass(
    net: &Network,
    trace: &ForwardTrace,
    dl_dscores: &Matrix,
) -> Result<Vec<GradientSet>> {
    let t_len = trace.num_timesteps;
    let batch = trace.batch_size;
    let n_layers = net.layers.len();
    if trace.layers.len() != n_layers || trace.input.len() != t_len {
        return Err(Error::Contract("trace does not match network".into()));
    }
    for (li, lt) in trace.layers.iter().enumerate() {
        let want_spikes = if is_spiking(net, li) { t_len } else { 0 };
        if lt.u.len() != t_len + 1 || lt.i_syn.len() != t_len + 1 || lt.spikes.len() != want_spikes {
            return Err(Error::Contract(format!("trace of layer {li} is incomplete")));
        }
    }
    let out_li = n_layers - 1;
    dl_dscores.check_shape(batch, net.spec.num_classes(), "backward_pass")?;
    let opts = trace.options;
    let membrane_readout = net.spec.output_mode == OutputMode::MembraneSum;

    let sizes: Vec<usize> = net.layers.iter().map(|l| l.params.len()).collect();
    let mut grads: Vec<GradientSet> = net
        .layers
        .iter()
        .map(|l| GradientSet {
            dl_dw: Matrix::zeros(l.weights.layer_size(), l.weights.fan_in()),
            dl_du: Matrix::zeros(batch, l.params.len()),
            dl_dspike: Vec::new(),
            dl_di: vec![Matrix::zeros(batch, l.params.len()); t_len + 1],
        })
        .collect();
    // gu[t+1] and gu[t+2] for every layer.
    let mut gu_next: Vec<Matrix> = sizes.iter().map(|&n| Matrix::zeros(batch, n)).collect();
    let mut gu_next2: Vec<Matrix> = gu_next.clone();
    if membrane_readout {
        gu_next[out_li] = dl_dscores.clone();
    }
    let mut spike_grads: Vec<Vec<Option<Matrix>>> = vec![vec![None; t_len]; n_layers];

    for t in (0..t_len).rev() {
        // Currents stored at t+1 were produced by the spikes of step t.
        let mut from_above: Vec<Option<Matrix>> = vec![None; n_layers];
        for li in 0..n_layers {
            let layer = &net.layers[li];
            let gain = layer.params.current_gain();
            let g_current = if t + 1 < t_len {
                let mut g = gu_next2[li].clone();
                g.as_mut_slice().iter_mut().for_each(|x| *x *= gain);
                g
            } else {
                Matrix::zeros(batch, sizes[li])
            };
            let source = trace.layer_input(li, t);
            match source {
                SpikeRecord::Dense(s) => dense_weight_grad(&g_current, s, &mut grads[li].dl_dw)?,
                SpikeRecord::Sparse(s) => sparse_weight_grad(&g_current, s, &mut grads[li].dl_dw)?,
            }
            if li > 0 {
                from_above[li - 1] = Some(match source {
                    SpikeRecord::Dense(_) => dense_input_grad(&g_current, &layer.weights)?,
                    SpikeRecord::Sparse(s) => sparse_input_grad(&g_current, &layer.weights, s)?,
                });
            }
            grads[li].dl_di[t + 1] = g_current;
        }

        for li in 0..n_layers {
            let layer = &net.layers[li];
            let p = &layer.params;
            let n = sizes[li];
            let lt = &trace.layers[li];
            let u_t = &lt.u[t];
            let g_next = &gu_next[li];
            let mut gu = Matrix::zeros(batch, n);

            if !is_spiking(net, li) {
                for (o, g) in gu.as_mut_slice().iter_mut().zip(g_next.as_slice()) {
                    *o = p.alpha * g;
                }
            } else {
                let rec = &lt.spikes[t];
                let s_dense = rec.to_dense(n)?;
                let direct = (li == out_li).then_some(dl_dscores);
                let above = from_above[li].as_ref();
                let gs = match rec {
                    SpikeRecord::Dense(_) => {
                        let mut gs = Matrix::zeros(batch, n);
                        for b in 0..batch {
                            let row = gs.row_mut(b);
                            for k in 0..n {
                                let mut v = above.map_or(0.0, |a| a.get(b, k));
                                if let Some(d) = direct {
                                    v += d.get(b, k);
                                }
                                if !opts.detach_reset {
                                    v -= p.alpha * u_t.get(b, k) * g_next.get(b, k);
                                }
                                row[k] = v;
                            }
                        }
                        gs
                    }
                    SpikeRecord::Sparse(sp) => {
                        let mut gs = Matrix::zeros(batch, sp.capacity());
                        for b in 0..batch {
                            let row = gs.row_mut(b);
                            for (k, &id) in sp.entries(b).iter().enumerate() {
                                let id = id as usize;
                                let mut v = above.map_or(0.0, |a| a.get(b, k));
                                if let Some(d) = direct {
                                    v += d.get(b, id);
                                }
                                if !opts.detach_reset {
                                    v -= p.alpha * u_t.get(b, id) * g_next.get(b, id);
                                }
                                row[k] = v;
                            }
                        }
                        gs
                    }
                };

                gu.as_mut_slice()
                    .par_chunks_mut(n)
                    .enumerate()
                    .for_each(|(b, row)| {
                        let (s, g) = (s_dense.row(b), g_next.row(b));
                        for k in 0..n {
                            row[k] = p.alpha * (1.0 - s[k]) * g[k];
                        }
                        match rec {
                            SpikeRecord::Dense(_) => {
                                let u = u_t.row(b);
                                let gsr = gs.row(b);
                                for k in 0..n {
                                    row[k] += opts.spike_fn.derivative(u[k] - p.threshold[k], p.beta)
                                        * gsr[k];
                                }
                            }
                            SpikeRecord::Sparse(sp) => {
                                let vals = sp.grad_values(b).expect("sparse trace stores surrogate values");
                                let gsr = gs.row(b);
                                for (k, &id) in sp.entries(b).iter().enumerate() {
                                    row[id as usize] += vals[k] * gsr[k];
                                }
                            }
                        }
                    });
                spike_grads[li][t] = Some(gs);
            }

            if li == out_li && membrane_readout && t >= 1 {
                gu.add_assign(dl_dscores)?;
            }
            gu_next2[li] = std::mem::replace(&mut gu_next[li], gu);
        }
    }

    for li in 0..n_layers {
        let gain = net.layers[li].params.current_gain();
        grads[li].dl_du = gu_next[li].clone();
        let mut g_first = gu_next2[li].clone();
        g_first.as_mut_slice().iter_mut().for_each(|x| *x *= gain);
        grads[li].dl_di[0] = g_first;
        grads[li].dl_dspike = spike_grads[li]
            .iter_mut()
            .map(|g| g.take())
            .collect::<Option<Vec<_>>>()
            .unwrap_or_default();
    }
    Ok(grads)
}
