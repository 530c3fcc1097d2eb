//! Fixed-capacity sparse spike tensors.
//!
//! Each row of a [`SparseSpikeBatch`] holds up to `n_max` neuron ids in two
//! segments: firing neurons first, then neurons that only crossed the
//! secondary gradient threshold. Both segments are sorted ascending and the
//! unused tail is filled with [`SENTINEL`].
//!
//! When a row has more candidates than capacity, a uniformly random subset
//! is kept. Firing neurons always win over gradient-only neurons.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::model::{surrogate, LifParams};
use crate::rng::DropRng;

/// Id stored in unused slots.
pub const SENTINEL: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseSpikeBatch {
    n_max: usize,
    ids: Vec<u32>,
    num_spikes: Vec<u32>,
    num_grads: Vec<u32>,
    grad_values: Option<Vec<f32>>,
}

/// Where a drop decision happens: which RNG, which population (0 is the
/// network input), which timestep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropSite {
    pub rng: DropRng,
    pub population: usize,
    pub timestep: usize,
}

impl DropSite {
    pub fn new(rng: DropRng, population: usize, timestep: usize) -> Self {
        Self {
            rng,
            population,
            timestep,
        }
    }

    fn row_stream(&self, row: usize) -> ChaCha8Rng {
        self.rng.stream(self.population, self.timestep, row)
    }
}

/// One encoded row before assembly.
#[derive(Default)]
struct RowEntries {
    spikes: Vec<u32>,
    grads: Vec<u32>,
}

/// Keeps a uniform random `keep`-subset of `items`, preserving order.
fn retain_uniform(items: &mut Vec<u32>, keep: usize, rng: &mut ChaCha8Rng) {
    if items.len() <= keep {
        return;
    }
    let mut chosen = index::sample(rng, items.len(), keep).into_vec();
    chosen.sort_unstable();
    *items = chosen.into_iter().map(|k| items[k]).collect();
}

fn check_capacity(n_max: usize) -> Result<()> {
    if n_max < 2 || !n_max.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "spike capacity must be even and at least 2, got {n_max}"
        )));
    }
    Ok(())
}

impl SparseSpikeBatch {
    /// A batch with every row empty.
    pub fn empty(batch: usize, n_max: usize, with_grads: bool) -> Self {
        Self {
            n_max,
            ids: vec![SENTINEL; batch * n_max],
            num_spikes: vec![0; batch],
            num_grads: vec![0; batch],
            grad_values: with_grads.then(|| vec![0.0; batch * n_max]),
        }
    }

    /// Assembles a batch from explicit per-row segments, checking every
    /// layout invariant.
    pub fn from_rows(
        n_max: usize,
        rows: &[(Vec<u32>, Vec<u32>)],
        grad_values: Option<Vec<Vec<f32>>>,
    ) -> Result<Self> {
        let mut out = Self::empty(rows.len(), n_max, grad_values.is_some());
        for (b, (spikes, grads)) in rows.iter().enumerate() {
            let vals = grad_values.as_ref().map(|v| v[b].as_slice());
            out.write_row(b, spikes, grads, vals)?;
        }
        out.validate()?;
        Ok(out)
    }

    fn write_row(
        &mut self,
        b: usize,
        spikes: &[u32],
        grads: &[u32],
        values: Option<&[f32]>,
    ) -> Result<()> {
        let total = spikes.len() + grads.len();
        if total > self.n_max {
            return Err(Error::Contract(format!(
                "row {b} holds {total} entries, capacity is {}",
                self.n_max
            )));
        }
        let base = b * self.n_max;
        self.ids[base..base + spikes.len()].copy_from_slice(spikes);
        self.ids[base + spikes.len()..base + total].copy_from_slice(grads);
        self.ids[base + total..base + self.n_max].fill(SENTINEL);
        self.num_spikes[b] = spikes.len() as u32;
        self.num_grads[b] = total as u32;
        if let Some(store) = self.grad_values.as_mut() {
            let row = &mut store[base..base + self.n_max];
            row.fill(0.0);
            if let Some(v) = values {
                if v.len() != total {
                    return Err(shape_err("SparseSpikeBatch grad values", total, v.len()));
                }
                row[..total].copy_from_slice(v);
            }
        }
        Ok(())
    }

    #[inline]
    pub fn batch_size(&self) -> usize {
        self.num_spikes.len()
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.n_max
    }

    #[inline]
    pub fn num_spikes(&self, b: usize) -> usize {
        self.num_spikes[b] as usize
    }

    #[inline]
    pub fn num_grads(&self, b: usize) -> usize {
        self.num_grads[b] as usize
    }

    pub fn has_grads(&self) -> bool {
        self.grad_values.is_some()
    }

    /// All slots of row `b`, padding included.
    pub fn raw_row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.n_max..(b + 1) * self.n_max]
    }

    /// Retained entries of row `b`: spikes then gradient-only ids.
    #[inline]
    pub fn entries(&self, b: usize) -> &[u32] {
        let base = b * self.n_max;
        &self.ids[base..base + self.num_grads[b] as usize]
    }

    #[inline]
    pub fn spike_ids(&self, b: usize) -> &[u32] {
        let base = b * self.n_max;
        &self.ids[base..base + self.num_spikes[b] as usize]
    }

    pub fn grad_only_ids(&self, b: usize) -> &[u32] {
        let base = b * self.n_max;
        &self.ids[base + self.num_spikes[b] as usize..base + self.num_grads[b] as usize]
    }

    /// Surrogate values aligned with [`entries`](Self::entries).
    pub fn grad_values(&self, b: usize) -> Option<&[f32]> {
        let base = b * self.n_max;
        self.grad_values
            .as_ref()
            .map(|v| &v[base..base + self.num_grads[b] as usize])
    }

    pub fn total_spikes(&self) -> u64 {
        self.num_spikes.iter().map(|&x| x as u64).sum()
    }

    pub fn total_grads(&self) -> u64 {
        self.num_grads.iter().map(|&x| x as u64).sum()
    }

    pub fn max_id(&self) -> Option<u32> {
        (0..self.batch_size())
            .flat_map(|b| self.entries(b).iter().copied())
            .max()
    }

    /// Checks counts, segment ordering, uniqueness and padding.
    pub fn validate(&self) -> Result<()> {
        let b_len = self.batch_size();
        if self.ids.len() != b_len * self.n_max || self.num_grads.len() != b_len {
            return Err(Error::Corrupt("inconsistent sparse batch buffers".into()));
        }
        for b in 0..b_len {
            let (s, g) = (self.num_spikes(b), self.num_grads(b));
            if s > g || g > self.n_max {
                return Err(Error::Corrupt(format!(
                    "row {b}: num_spikes={s} num_grads={g} capacity={}",
                    self.n_max
                )));
            }
            let strictly_increasing = |xs: &[u32]| xs.windows(2).all(|w| w[0] < w[1]);
            if !strictly_increasing(self.spike_ids(b)) || !strictly_increasing(self.grad_only_ids(b)) {
                return Err(Error::Corrupt(format!("row {b}: segment not sorted")));
            }
            let spikes = self.spike_ids(b);
            if self
                .grad_only_ids(b)
                .iter()
                .any(|id| spikes.binary_search(id).is_ok())
            {
                return Err(Error::Corrupt(format!("row {b}: id in both segments")));
            }
            if self.entries(b).contains(&SENTINEL) {
                return Err(Error::Corrupt(format!("row {b}: sentinel inside entries")));
            }
            if self.raw_row(b)[g..].iter().any(|&x| x != SENTINEL) {
                return Err(Error::Corrupt(format!("row {b}: padding overwritten")));
            }
        }
        Ok(())
    }

    fn assemble(
        n_max: usize,
        rows: Vec<RowEntries>,
        values: Option<Vec<Vec<f32>>>,
    ) -> Self {
        let mut out = Self::empty(rows.len(), n_max, values.is_some());
        for (b, row) in rows.iter().enumerate() {
            let vals = values.as_ref().map(|v| v[b].as_slice());
            out.write_row(b, &row.spikes, &row.grads, vals)
                .expect("encoder respects capacity");
        }
        out
    }
}

/// Selects spikes and gradient-only neurons from membrane potentials.
///
/// Per row, the spike set is `{i : u[i] ≥ ϑ_i}` and the gradient-only set
/// is `{i : ϑgrad_i ≤ u[i] < ϑ_i}` (empty when `with_grads` is false).
/// Over-capacity sets are thinned uniformly, spikes first. With
/// `with_grads`, every retained entry stores `h(u − ϑ)`.
pub fn encode_sparse(
    u: &Matrix,
    params: &LifParams,
    n_max: usize,
    site: DropSite,
    with_grads: bool,
) -> Result<SparseSpikeBatch> {
    encode_sparse_forced(u, params, n_max, site, with_grads, false)
}

/// Like [`encode_sparse`], but with `force` every neuron is treated as
/// firing. Used by the fixed-activity benchmark mode.
pub fn encode_sparse_forced(
    u: &Matrix,
    params: &LifParams,
    n_max: usize,
    site: DropSite,
    with_grads: bool,
    force: bool,
) -> Result<SparseSpikeBatch> {
    check_capacity(n_max)?;
    if u.cols() != params.len() {
        return Err(shape_err("encode_sparse", params.len(), u.cols()));
    }
    let rows: Vec<RowEntries> = (0..u.rows())
        .into_par_iter()
        .map(|b| {
            let mut row = RowEntries::default();
            for (i, &v) in u.row(b).iter().enumerate() {
                if force || v >= params.threshold[i] {
                    row.spikes.push(i as u32);
                } else if with_grads && v >= params.grad_threshold[i] {
                    row.grads.push(i as u32);
                }
            }
            let mut rng = site.row_stream(b);
            retain_uniform(&mut row.spikes, n_max, &mut rng);
            let room = n_max - row.spikes.len();
            retain_uniform(&mut row.grads, room, &mut rng);
            row
        })
        .collect();
    let values = with_grads.then(|| {
        rows.iter()
            .enumerate()
            .map(|(b, row)| {
                row.spikes
                    .iter()
                    .chain(&row.grads)
                    .map(|&i| {
                        let i = i as usize;
                        surrogate(u.get(b, i) - params.threshold[i], params.beta)
                    })
                    .collect()
            })
            .collect()
    });
    Ok(SparseSpikeBatch::assemble(n_max, rows, values))
}

/// Encodes binary input spikes (any value ≥ 0.5 counts as a spike).
pub fn encode_binary(
    spikes: &Matrix,
    n_max: usize,
    site: DropSite,
    force: bool,
) -> Result<SparseSpikeBatch> {
    check_capacity(n_max)?;
    let rows: Vec<RowEntries> = (0..spikes.rows())
        .into_par_iter()
        .map(|b| {
            let mut row = RowEntries {
                spikes: spikes
                    .row(b)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| force || v >= 0.5)
                    .map(|(i, _)| i as u32)
                    .collect(),
                grads: Vec::new(),
            };
            retain_uniform(&mut row.spikes, n_max, &mut site.row_stream(b));
            row
        })
        .collect();
    Ok(SparseSpikeBatch::assemble(n_max, rows, None))
}

/// Dense binary matrix with a 1 at every retained *spike*. Gradient-only
/// entries do not produce forward spikes.
pub fn decode_to_dense(s: &SparseSpikeBatch, n: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(s.batch_size(), n);
    for b in 0..s.batch_size() {
        for &id in s.entries(b) {
            if id as usize >= n {
                return Err(Error::Corrupt(format!("spike id {id} out of range for {n} neurons")));
            }
        }
        let row = out.row_mut(b);
        for &id in s.spike_ids(b) {
            row[id as usize] = 1.0;
        }
    }
    Ok(out)
}

struct MergeRow {
    spikes: Vec<(u32, f32)>,
    spikes_seen: usize,
    grads: Vec<(u32, f32)>,
    grads_seen: usize,
}

/// Number of picks from the first group when drawing `k` items without
/// replacement from groups of size `a` and `b`.
fn hypergeometric(a: usize, b: usize, k: usize, rng: &mut ChaCha8Rng) -> usize {
    let (mut ra, mut rb, mut from_a) = (a, b, 0);
    for _ in 0..k {
        if rng.gen_range(0..ra + rb) < ra {
            ra -= 1;
            from_a += 1;
        } else {
            rb -= 1;
        }
    }
    from_a
}

/// Combines two uniform samples (of populations `seen_a`, `seen_b`) into
/// one uniform sample of the union, at most `cap` long.
fn merge_uniform<T: Copy>(
    a: &[T],
    seen_a: usize,
    b: &[T],
    seen_b: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    let k = cap.min(seen_a + seen_b);
    let take_a = hypergeometric(seen_a, seen_b, k, rng);
    let take_b = k - take_a;
    let pick = |xs: &[T], n: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
        if n >= xs.len() {
            return xs.to_vec();
        }
        let mut idx = index::sample(rng, xs.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| xs[i]).collect()
    };
    let mut out = pick(a, take_a, rng);
    out.extend(pick(b, take_b, rng));
    out
}

/// Merges per-tile sparse results covering disjoint id ranges into one
/// batch of capacity `n_max`.
///
/// Parts are folded left to right in the order given, and each fold keeps a
/// uniform sample of everything seen so far, so the retained set is a
/// uniform subset of the union and depends only on the part order and the
/// drop site.
pub fn merge_segments(
    parts: &[SparseSpikeBatch],
    n_max: usize,
    site: DropSite,
) -> Result<SparseSpikeBatch> {
    check_capacity(n_max)?;
    let Some(first) = parts.first() else {
        return Ok(SparseSpikeBatch::empty(0, n_max, false));
    };
    let batch = first.batch_size();
    let with_grads = first.has_grads();
    if parts
        .iter()
        .any(|p| p.batch_size() != batch || p.has_grads() != with_grads)
    {
        return Err(Error::Contract("merged parts disagree on batch size or gradient values".into()));
    }
    let ranges: Vec<(u32, u32)> = parts
        .iter()
        .filter_map(|p| {
            let ids = (0..batch).flat_map(|b| p.entries(b).iter().copied());
            let (lo, hi) = ids.fold((u32::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
            (lo <= hi).then_some((lo, hi))
        })
        .collect();
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.0 <= b.1 && b.0 <= a.1 {
                return Err(Error::Contract(format!(
                    "merged parts overlap: ids {}..={} and {}..={}",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
    }

    let rows: Vec<MergeRow> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut rng = site.row_stream(b);
            let mut acc = MergeRow {
                spikes: Vec::new(),
                spikes_seen: 0,
                grads: Vec::new(),
                grads_seen: 0,
            };
            for p in parts {
                let vals = p.grad_values(b);
                let tagged: Vec<(u32, f32)> = p
                    .entries(b)
                    .iter()
                    .enumerate()
                    .map(|(k, &id)| (id, vals.map_or(0.0, |v| v[k])))
                    .collect();
                let (spikes, grads) = tagged.split_at(p.num_spikes(b));
                acc.spikes = merge_uniform(
                    &acc.spikes,
                    acc.spikes_seen,
                    spikes,
                    spikes.len(),
                    n_max,
                    &mut rng,
                );
                acc.spikes_seen += spikes.len();
                let room = n_max - acc.spikes.len();
                acc.grads = merge_uniform(&acc.grads, acc.grads_seen, grads, grads.len(), room, &mut rng);
                acc.grads_seen += grads.len();
            }
            acc.spikes.sort_unstable_by_key(|e| e.0);
            acc.grads.sort_unstable_by_key(|e| e.0);
            acc
        })
        .collect();

    let mut out = SparseSpikeBatch::empty(batch, n_max, with_grads);
    for (b, row) in rows.iter().enumerate() {
        let spikes: Vec<u32> = row.spikes.iter().map(|e| e.0).collect();
        let grads: Vec<u32> = row.grads.iter().map(|e| e.0).collect();
        let values: Vec<f32> = row.spikes.iter().chain(&row.grads).map(|e| e.1).collect();
        out.write_row(b, &spikes, &grads, with_grads.then_some(values.as_slice()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, thr: f32, gthr: f32) -> LifParams {
        LifParams::uniform(n, 0.9, 1.0, thr, gthr, 10.0).unwrap()
    }

    fn site(seed: u64) -> DropSite {
        DropSite::new(DropRng::new(seed), 1, 0)
    }

    #[test]
    fn two_threshold_selection() {
        let u = Matrix::from_rows(&[[1.2, 0.5, 0.9]]);
        let s = encode_sparse(&u, &params(3, 1.0, 0.8), 2, site(0), true).unwrap();
        s.validate().unwrap();
        assert_eq!(s.entries(0), &[0, 2]);
        assert_eq!(s.num_spikes(0), 1);
        assert_eq!(s.num_grads(0), 2);
        let vals = s.grad_values(0).unwrap();
        assert!((vals[0] - surrogate(0.2, 10.0)).abs() < 1e-7);
        assert!((vals[1] - surrogate(-0.1, 10.0)).abs() < 1e-7);
    }

    #[test]
    fn without_grads_only_spikes_are_kept() {
        let u = Matrix::from_rows(&[[1.2, 0.5, 0.9]]);
        let s = encode_sparse(&u, &params(3, 1.0, 0.8), 2, site(0), false).unwrap();
        assert_eq!(s.entries(0), &[0]);
        assert!(!s.has_grads());
    }

    #[test]
    fn empty_rows_hold_sentinels() {
        let u = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.0]]);
        let s = encode_sparse(&u, &params(4, 1.0, 0.8), 4, site(0), true).unwrap();
        assert_eq!((s.num_spikes(0), s.num_grads(0)), (0, 0));
        assert!(s.raw_row(0).iter().all(|&x| x == SENTINEL));
    }

    #[test]
    fn invalid_capacity_is_rejected() {
        let u = Matrix::zeros(1, 3);
        for cap in [0, 1, 3] {
            assert!(matches!(
                encode_sparse(&u, &params(3, 1.0, 0.8), cap, site(0), true),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn over_capacity_drop_frequencies() {
        let u = Matrix::from_rows(&[[2.0, 2.0, 2.0]]);
        let p = params(3, 1.0, 1.0);
        let mut counts = [0usize; 3];
        let trials = 10_000;
        for seed in 0..trials {
            let s = encode_sparse(&u, &p, 2, site(seed), false).unwrap();
            assert_eq!(s.num_spikes(0), 2);
            for &id in s.spike_ids(0) {
                counts[id as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 2.0 / 3.0).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn spikes_take_precedence_over_gradients() {
        let u = Matrix::from_rows(&[[0.9, 1.1, 0.95, 1.3, 0.85]]);
        let s = encode_sparse(&u, &params(5, 1.0, 0.8), 2, site(3), true).unwrap();
        assert_eq!(s.spike_ids(0), &[1, 3]);
        assert!(s.grad_only_ids(0).is_empty());
        let s = encode_sparse(&u, &params(5, 1.0, 0.8), 4, site(3), true).unwrap();
        assert_eq!(s.spike_ids(0), &[1, 3]);
        assert_eq!(s.grad_only_ids(0).len(), 2);
    }

    #[test]
    fn decode_examples() {
        let s = SparseSpikeBatch::from_rows(2, &[(vec![0], vec![2])], None).unwrap();
        assert_eq!(decode_to_dense(&s, 3).unwrap().row(0), &[1.0, 0.0, 0.0]);
        let e = SparseSpikeBatch::empty(2, 4, false);
        assert_eq!(decode_to_dense(&e, 5).unwrap(), Matrix::zeros(2, 5));
        assert!(matches!(decode_to_dense(&s, 2), Err(Error::Corrupt(_))));
    }

    #[test]
    fn forced_encoding_saturates() {
        let u = Matrix::zeros(3, 10);
        let s = encode_sparse_forced(&u, &params(10, 1.0, 0.5), 4, site(1), true, true).unwrap();
        for b in 0..3 {
            assert_eq!(s.num_spikes(b), 4);
            assert_eq!(s.num_grads(b), 4);
        }
    }

    #[test]
    fn merge_disjoint_under_capacity() {
        let a = SparseSpikeBatch::from_rows(4, &[(vec![1], vec![])], None).unwrap();
        let b = SparseSpikeBatch::from_rows(4, &[(vec![5], vec![])], None).unwrap();
        let m = merge_segments(&[a, b], 4, site(0)).unwrap();
        assert_eq!(m.spike_ids(0), &[1, 5]);
        assert_eq!(m.num_spikes(0), 2);
        m.validate().unwrap();
    }

    #[test]
    fn merge_of_nothing_is_empty() {
        let m = merge_segments(&[], 4, site(0)).unwrap();
        assert_eq!(m.batch_size(), 0);
    }

    #[test]
    fn merge_rejects_overlap() {
        let a = SparseSpikeBatch::from_rows(4, &[(vec![1, 4], vec![])], None).unwrap();
        let b = SparseSpikeBatch::from_rows(4, &[(vec![3], vec![])], None).unwrap();
        assert!(matches!(merge_segments(&[a, b], 4, site(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn merge_over_capacity_keeps_a_subset() {
        let parts: Vec<_> = [vec![0, 1], vec![10], vec![20, 21], vec![30]]
            .into_iter()
            .map(|ids| SparseSpikeBatch::from_rows(4, &[(ids, vec![])], None).unwrap())
            .collect();
        let all = [0, 1, 10, 20, 21, 30];
        for seed in 0..50 {
            let m = merge_segments(&parts, 4, site(seed)).unwrap();
            m.validate().unwrap();
            assert_eq!(m.num_spikes(0), 4);
            assert!(m.spike_ids(0).iter().all(|id| all.contains(id)));
        }
    }
}
