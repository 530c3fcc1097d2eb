use proptest::prelude::*;
use sparse_snn::linalg::{
    dense_forward_current, dense_input_grad, dense_weight_grad, sparse_forward_current,
    sparse_input_grad, sparse_weight_grad,
};
use sparse_snn::model::{threshold_spikes_dense, LayerWeights, LifParams};
use sparse_snn::rng::DropRng;
use sparse_snn::spikes::{decode_to_dense, encode_binary, encode_sparse, DropSite};
use sparse_snn::Matrix;

fn matrix(rows: usize, cols: usize, range: f32) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-range..range, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn binary(rows: usize, cols: usize, p: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(prop::bool::weighted(p), rows * cols).prop_map(move |v| {
        Matrix::from_vec(rows, cols, v.into_iter().map(|b| b as u8 as f32).collect()).unwrap()
    })
}

fn params(n: usize) -> LifParams {
    LifParams::uniform(n, 0.9, 1.0, 0.3, -0.2, 10.0).unwrap()
}

fn site(seed: u64) -> DropSite {
    DropSite::new(DropRng::new(seed), 1, 0)
}

proptest! {
    #[test]
    fn encoded_rows_follow_the_capacity_rules(
        (b, n) in (1usize..6, 1usize..40),
        n_max_half in 1usize..12,
        seed in any::<u64>(),
        raw in prop::collection::vec(-1.0f32..1.0, 240),
    ) {
        let n_max = 2 * n_max_half;
        let u = Matrix::from_vec(b, n, raw[..b * n].to_vec()).unwrap();
        let p = params(n);
        let s = encode_sparse(&u, &p, n_max, site(seed), true).unwrap();
        s.validate().unwrap();
        for r in 0..b {
            let fired: Vec<u32> = (0..n as u32).filter(|&i| u.get(r, i as usize) >= 0.3).collect();
            let near: Vec<u32> = (0..n as u32)
                .filter(|&i| (-0.2..0.3).contains(&u.get(r, i as usize)))
                .collect();
            prop_assert_eq!(s.spike_ids(r).len(), fired.len().min(n_max));
            prop_assert!(s.spike_ids(r).iter().all(|i| fired.contains(i)));
            let room = n_max - s.spike_ids(r).len();
            prop_assert_eq!(s.grad_only_ids(r).len(), near.len().min(room));
            prop_assert!(s.grad_only_ids(r).iter().all(|i| near.contains(i)));
        }
    }

    #[test]
    fn full_capacity_encoding_decodes_to_threshold(
        u in matrix(4, 10, 1.0),
        seed in any::<u64>(),
    ) {
        let p = params(10);
        let s = encode_sparse(&u, &p, 10, site(seed), false).unwrap();
        prop_assert_eq!(decode_to_dense(&s, 10).unwrap(), threshold_spikes_dense(&u, &p.threshold).unwrap());
    }

    #[test]
    fn sparse_kernels_match_dense_bitwise(
        w in matrix(7, 12, 2.0),
        s_in in binary(3, 12, 0.4),
        dl_di in matrix(3, 7, 1.0),
    ) {
        let w = LayerWeights::new(w).unwrap();
        let sparse = encode_binary(&s_in, 12, site(0), false).unwrap();
        let a = dense_forward_current(&w, &s_in).unwrap();
        let b = sparse_forward_current(&w, &sparse).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));

        let mut gw_dense = Matrix::zeros(7, 12);
        let mut gw_sparse = Matrix::zeros(7, 12);
        dense_weight_grad(&dl_di, &s_in, &mut gw_dense).unwrap();
        sparse_weight_grad(&dl_di, &sparse, &mut gw_sparse).unwrap();
        prop_assert_eq!(bits(&gw_dense), bits(&gw_sparse));

        // Input gradients agree on every retained entry.
        let dense_in = dense_input_grad(&dl_di, &w).unwrap();
        let sparse_in = sparse_input_grad(&dl_di, &w, &sparse).unwrap();
        for r in 0..3 {
            for (k, &id) in sparse.entries(r).iter().enumerate() {
                prop_assert_eq!(sparse_in.get(r, k).to_bits(), dense_in.get(r, id as usize).to_bits());
            }
        }
    }
}

fn bits(m: &Matrix) -> Vec<u32> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn thread_count_does_not_change_encoding() {
    let u = Matrix::from_fn(16, 200, |b, i| ((b * 31 + i * 17) % 23) as f32 / 10.0 - 1.0);
    let p = params(200);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| encode_sparse(&u, &p, 20, site(9), true).unwrap())
    };
    assert_eq!(run(1), run(4));
}
