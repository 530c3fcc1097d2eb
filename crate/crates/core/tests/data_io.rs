use proptest::prelude::*;
use sparse_snn::data::{
    bin_events, load_manifest, sparse_hidden_size, synth_pattern_dataset, to_samples,
    write_dataset, EventStream, SYNTH_BIN_WIDTH_US,
};

fn stream() -> impl Strategy<Value = EventStream> {
    (1u32..64, 0u32..20, prop::collection::vec((0u32..100_000, 0u32..1000), 0..200)).prop_map(
        |(channels, label, raw)| {
            let events = raw.into_iter().map(|(t, c)| (t, c % channels)).collect();
            EventStream::new(channels, label, events).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn esf_round_trip(s in stream()) {
        prop_assert_eq!(EventStream::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn binning_is_monotone(s in stream(), extra in (0u32..100_000, 0u32..64), t in 1usize..50, width in 1u32..5000) {
        let before = bin_events(&s, t, width).unwrap();
        let mut events = s.events.clone();
        events.push((extra.0, extra.1 % s.num_channels));
        let after = bin_events(&EventStream::new(s.num_channels, s.label, events).unwrap(), t, width).unwrap();
        for (a, b) in before.as_slice().iter().zip(after.as_slice()) {
            prop_assert!(a <= b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn capacity_is_even_and_at_least_two(a in 1e-6f64..=1.0, n in 2usize..100_000) {
        let k = sparse_hidden_size(a, n);
        prop_assert!(k.is_multiple_of(2) && k >= 2);
        prop_assert!(k <= n.max(2));
    }
}

#[test]
fn nearest_template_classifies_noiseless_data() {
    let streams = synth_pattern_dataset(6, 40, 5, 20, 0.0, 77).unwrap();
    let samples = to_samples(&streams, 20, SYNTH_BIN_WIDTH_US).unwrap();
    let templates: Vec<_> = samples.iter().step_by(5).collect();
    for s in &samples {
        let distance = |t: &&&sparse_snn::bptt::Sample| {
            t.frames.as_slice().iter().zip(s.frames.as_slice()).filter(|(a, b)| a != b).count()
        };
        let best = templates.iter().min_by_key(distance).unwrap();
        assert_eq!(best.label, s.label);
    }
}

#[test]
fn generated_datasets_are_reproducible_on_disk() {
    let data = synth_pattern_dataset(3, 10, 2, 8, 0.1, 4).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = write_dataset(a.path(), &data).unwrap();
    let mb = write_dataset(b.path(), &data).unwrap();
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    assert_eq!(load_manifest(&ma).unwrap(), data);
}
