//! Forward-current and gradient kernels, dense and sparse.
//!
//! All reductions run in ascending index order (spike id for the sparse
//! kernels, pre- or post-synaptic index for the dense ones). With that
//! order a sparse kernel fed the same spikes as its dense twin produces
//! bit-identical results: the dense kernel only adds extra `±0` terms.
//!
//! Parallel versions split work over disjoint output rows, so results do
//! not depend on the thread count.

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::model::LayerWeights;
use crate::spikes::SparseSpikeBatch;

/// Gradients of one layer after a backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    /// Same shape as the layer's weight matrix.
    pub dl_dw: Matrix,
    /// Gradient w.r.t. the initial membrane state, `B × layer_size`.
    pub dl_du: Matrix,
    /// Per timestep gradient w.r.t. the layer's outgoing spikes. Aligned to
    /// sparse entries (`B × N_max`) on the sparse path, `B × layer_size` on
    /// the dense path. Empty for a non-spiking output layer.
    pub dl_dspike: Vec<Matrix>,
    /// Per timestep gradient w.r.t. the stored input current `I[t]`.
    pub dl_di: Vec<Matrix>,
}

/// Work counters filled in by the instrumented kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelStats {
    /// Individual weight values read.
    pub weight_reads: u64,
}

fn check_ids(s: &SparseSpikeBatch, fan_in: usize) -> Result<()> {
    match s.max_id() {
        Some(id) if id as usize >= fan_in => Err(Error::Corrupt(format!(
            "spike id {id} out of range for fan-in {fan_in}"
        ))),
        _ => Ok(()),
    }
}

/// `I[b] = W · s[b]` for every batch row.
pub fn dense_forward_current(w: &LayerWeights, s_in: &Matrix) -> Result<Matrix> {
    let (n, fan_in) = w.w.shape();
    if s_in.cols() != fan_in {
        return Err(shape_err("dense_forward_current", fan_in, s_in.cols()));
    }
    let mut out = Matrix::zeros(s_in.rows(), n);
    out.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(b, row)| {
            let s = s_in.row(b);
            for (i, out_i) in row.iter_mut().enumerate() {
                let wi = w.w.row(i);
                let mut acc = 0.0f32;
                for j in 0..fan_in {
                    acc += wi[j] * s[j];
                }
                *out_i = acc;
            }
        });
    Ok(out)
}

/// Read-and-sum forward current: `I[b][i] = Σ_k W[i][ids[b][k]]` over the
/// row's spikes. Gradient-only entries contribute nothing.
pub fn sparse_forward_current(w: &LayerWeights, s_in: &SparseSpikeBatch) -> Result<Matrix> {
    sparse_forward_current_counted(w, s_in).map(|(m, _)| m)
}

pub fn sparse_forward_current_counted(
    w: &LayerWeights,
    s_in: &SparseSpikeBatch,
) -> Result<(Matrix, KernelStats)> {
    let (n, fan_in) = w.w.shape();
    check_ids(s_in, fan_in)?;
    let mut out = Matrix::zeros(s_in.batch_size(), n);
    out.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(b, row)| {
            let ids = s_in.spike_ids(b);
            for (i, out_i) in row.iter_mut().enumerate() {
                let wi = w.w.row(i);
                let mut acc = 0.0f32;
                for &id in ids {
                    acc += wi[id as usize];
                }
                *out_i = acc;
            }
        });
    let stats = KernelStats {
        weight_reads: s_in.total_spikes() * n as u64,
    };
    Ok((out, stats))
}

/// `dl_dw[i][j] += Σ_b dl_di[b][i] · s[b][j]`.
pub fn dense_weight_grad(dl_di: &Matrix, s_in: &Matrix, dl_dw: &mut Matrix) -> Result<()> {
    let (n, fan_in) = dl_dw.shape();
    dl_di.check_shape(s_in.rows(), n, "dense_weight_grad")?;
    s_in.check_shape(dl_di.rows(), fan_in, "dense_weight_grad")?;
    dl_dw
        .as_mut_slice()
        .par_chunks_mut(fan_in.max(1))
        .enumerate()
        .for_each(|(i, dw)| {
            for b in 0..s_in.rows() {
                let g = dl_di.get(b, i);
                let s = s_in.row(b);
                for j in 0..fan_in {
                    dw[j] += g * s[j];
                }
            }
        });
    Ok(())
}

/// Sparse weight gradient: only columns named by forward spikes are
/// touched. Accumulates into `dl_dw`.
pub fn sparse_weight_grad(
    dl_di: &Matrix,
    s_in: &SparseSpikeBatch,
    dl_dw: &mut Matrix,
) -> Result<()> {
    let (n, fan_in) = dl_dw.shape();
    dl_di.check_shape(s_in.batch_size(), n, "sparse_weight_grad")?;
    check_ids(s_in, fan_in)?;
    dl_dw
        .as_mut_slice()
        .par_chunks_mut(fan_in.max(1))
        .enumerate()
        .for_each(|(i, dw)| {
            for b in 0..s_in.batch_size() {
                let g = dl_di.get(b, i);
                for &id in s_in.spike_ids(b) {
                    dw[id as usize] += g;
                }
            }
        });
    Ok(())
}

/// `out[b] = Wᵀ · dl_di[b]`, shape `B × fan_in`.
pub fn dense_input_grad(dl_di: &Matrix, w: &LayerWeights) -> Result<Matrix> {
    let (n, fan_in) = w.w.shape();
    if dl_di.cols() != n {
        return Err(shape_err("dense_input_grad", n, dl_di.cols()));
    }
    let mut out = Matrix::zeros(dl_di.rows(), fan_in);
    out.as_mut_slice()
        .par_chunks_mut(fan_in.max(1))
        .enumerate()
        .for_each(|(b, row)| {
            let g = dl_di.row(b);
            for i in 0..n {
                let gi = g[i];
                let wi = w.w.row(i);
                for j in 0..fan_in {
                    row[j] += gi * wi[j];
                }
            }
        });
    Ok(out)
}

/// Transposed product restricted to retained entries (both segments):
/// `out[b][k] = Σ_i dl_di[b][i] · W[i][ids[b][k]]`, shape `B × N_max`,
/// zero in padding slots.
pub fn sparse_input_grad(
    dl_di: &Matrix,
    w: &LayerWeights,
    s_in: &SparseSpikeBatch,
) -> Result<Matrix> {
    let (n, fan_in) = w.w.shape();
    dl_di.check_shape(s_in.batch_size(), n, "sparse_input_grad")?;
    check_ids(s_in, fan_in)?;
    let cap = s_in.capacity();
    let mut out = Matrix::zeros(s_in.batch_size(), cap);
    out.as_mut_slice()
        .par_chunks_mut(cap.max(1))
        .enumerate()
        .for_each(|(b, row)| {
            let ids = s_in.entries(b);
            let g = dl_di.row(b);
            for i in 0..n {
                let gi = g[i];
                let wi = w.w.row(i);
                for (k, &id) in ids.iter().enumerate() {
                    row[k] += gi * wi[id as usize];
                }
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w22() -> LayerWeights {
        LayerWeights::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap()
    }

    fn batch(rows: &[(Vec<u32>, Vec<u32>)]) -> SparseSpikeBatch {
        SparseSpikeBatch::from_rows(2, rows, None).unwrap()
    }

    #[test]
    fn dense_current_examples() {
        let w = w22();
        let s = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0], [1.0, 1.0]]);
        let i = dense_forward_current(&w, &s).unwrap();
        assert_eq!(i.row(0), &[2.0, 4.0]);
        assert_eq!(i.row(1), &[0.0, 0.0]);
        assert_eq!(i.row(2), &[3.0, 7.0]);
    }

    #[test]
    fn sparse_current_examples() {
        let w = w22();
        let s = batch(&[(vec![1], vec![]), (vec![], vec![]), (vec![0, 1], vec![])]);
        let (i, stats) = sparse_forward_current_counted(&w, &s).unwrap();
        assert_eq!(i.row(0), &[2.0, 4.0]);
        assert_eq!(i.row(1), &[0.0, 0.0]);
        assert_eq!(i.row(2), &[3.0, 7.0]);
        assert_eq!(stats.weight_reads, 3 * 2);
    }

    #[test]
    fn gradient_only_entries_carry_no_current() {
        let w = w22();
        let s = batch(&[(vec![], vec![0, 1])]);
        assert_eq!(sparse_forward_current(&w, &s).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_ids_are_corruption() {
        let w = w22();
        let s = SparseSpikeBatch::from_rows(2, &[(vec![2], vec![])], None).unwrap();
        assert!(matches!(sparse_forward_current(&w, &s), Err(Error::Corrupt(_))));
        let mut dw = Matrix::zeros(2, 2);
        assert!(sparse_weight_grad(&Matrix::zeros(1, 2), &s, &mut dw).is_err());
        assert!(sparse_input_grad(&Matrix::zeros(1, 2), &w, &s).is_err());
    }

    #[test]
    fn weight_grad_examples() {
        let s = batch(&[(vec![1], vec![])]);
        let mut dw = Matrix::zeros(2, 2);
        sparse_weight_grad(&Matrix::from_rows(&[[1.0, 1.0]]), &s, &mut dw).unwrap();
        assert_eq!(dw, Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]));

        let mut dw = Matrix::zeros(2, 2);
        sparse_weight_grad(&Matrix::from_rows(&[[1.0, 1.0]]), &batch(&[(vec![], vec![])]), &mut dw)
            .unwrap();
        assert_eq!(dw, Matrix::zeros(2, 2));

        let s = batch(&[(vec![0], vec![]), (vec![0], vec![1])]);
        let g = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]);
        let mut sparse = Matrix::zeros(2, 2);
        sparse_weight_grad(&g, &s, &mut sparse).unwrap();
        let mut dense = Matrix::zeros(2, 2);
        let dense_s = crate::spikes::decode_to_dense(&s, 2).unwrap();
        dense_weight_grad(&g, &dense_s, &mut dense).unwrap();
        assert_eq!(sparse, dense);
        assert_eq!(sparse, Matrix::from_rows(&[[1.5, 0.0], [1.0, 0.0]]));
    }

    #[test]
    fn input_grad_examples() {
        let w = w22();
        let g = Matrix::from_rows(&[[1.0, 0.0]]);
        let out = sparse_input_grad(&g, &w, &batch(&[(vec![1], vec![])])).unwrap();
        assert_eq!(out.row(0), &[2.0, 0.0]);

        let out = sparse_input_grad(&Matrix::zeros(1, 2), &w, &batch(&[(vec![0], vec![1])])).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0]);

        let g = Matrix::from_rows(&[[0.5, -2.0]]);
        let sparse = sparse_input_grad(&g, &w, &batch(&[(vec![0], vec![1])])).unwrap();
        let dense = dense_input_grad(&g, &w).unwrap();
        assert_eq!(sparse.row(0), dense.row(0));
        assert_eq!(dense.row(0), &[0.5 - 6.0, 1.0 - 8.0]);
    }
}
