use sparse_snn::model::{NetworkSpec, OutputMode};
use sparse_snn::tile::{
    acceleration_model, map_neurons, map_neurons_with, simulate_batch, weak_scale_run,
    ActivityTrace, MachineSpec, MemoryModel, TileId, TileLoad, TileMapping, HEADER_BYTES_PER_ROW,
};
use sparse_snn::Error;

fn spec(layer_sizes: Vec<usize>, caps: Vec<usize>, batch: usize, t: usize) -> NetworkSpec {
    NetworkSpec {
        layer_sizes,
        sparse_sizes: caps,
        batch_size: batch,
        num_timesteps: t,
        output_mode: OutputMode::MembraneSum,
    }
}

fn small() -> NetworkSpec {
    spec(vec![64, 40, 40, 10], vec![8, 8, 8, 10], 4, 3)
}

#[test]
fn full_chip_at_two_per_tile() {
    let s = spec(vec![700, 1472, 1472], vec![48, 48, 1472], 48, 10);
    let m = map_neurons(&s, &MachineSpec::default(), 2).unwrap();
    assert_eq!(m.occupied_tiles(), 1472);
    assert_eq!(m.chips_used(), 1);
}

#[test]
fn single_neuron_lands_on_first_tile() {
    let s = spec(vec![3, 1], vec![2, 2], 1, 1);
    let m = map_neurons(&s, &MachineSpec::with_chips(4), 5).unwrap();
    assert_eq!(m.tile_of(0, 0), Some(TileId { chip: 0, tile: 0 }));
}

#[test]
fn every_neuron_mapped_once() {
    let s = small();
    let m = map_neurons(&s, &MachineSpec::default(), 3).unwrap();
    let total: u32 = m.tiles.iter().map(TileLoad::neurons).sum();
    assert_eq!(total as usize, 90);
    assert!(m.tiles[..m.tiles.len() - 1].iter().all(|t| t.neurons() == 3));
}

#[test]
fn zero_activity_ships_headers_only() {
    let s = small();
    let machine = MachineSpec::default();
    let m = map_neurons(&s, &machine, 4).unwrap();
    let ledger = simulate_batch(&s, &m, &machine, &ActivityTrace::silent(&s)).unwrap();
    // Each consuming tile receives one header per row per timestep.
    let tiles = m.occupied_tiles() as u64;
    let header = s.batch_size as u64 * HEADER_BYTES_PER_ROW;
    assert_eq!(ledger.exchange_bytes(), tiles * header * s.num_timesteps as u64);
    // Compute is the state-update floor of the fullest tile.
    let floor = 4.0 * s.batch_size as f64 * machine.cost.cycles_per_state_update;
    for step in ledger.supersteps.iter().filter(|x| x.timestep < s.num_timesteps) {
        assert_eq!(step.chips[0].compute_cycles, floor);
    }
}

#[test]
fn exchange_bytes_are_linear_in_spike_count() {
    let s = small();
    let machine = MachineSpec::default();
    let m = map_neurons(&s, &machine, 4).unwrap();
    let floor = simulate_batch(&s, &m, &machine, &ActivityTrace::silent(&s)).unwrap().exchange_bytes();
    let base = ActivityTrace::saturated(&s).scaled(1);
    let mut points = Vec::new();
    for k in 0..=4u64 {
        let mut a = base.clone();
        for step in &mut a.steps {
            for p in step {
                p.spikes = p.spikes * k / 4;
                p.entries = p.spikes;
            }
        }
        let total: u64 = a.steps.iter().flatten().map(|p| p.spikes).sum();
        let bytes = simulate_batch(&s, &m, &machine, &a).unwrap().exchange_bytes() - floor;
        points.push((total, bytes));
    }
    let slope = points[4].1 as f64 / points[4].0 as f64;
    for (x, y) in points {
        assert_eq!(y as f64, slope * x as f64);
    }
}

#[test]
fn saturated_activity_is_the_worst_case() {
    let s = small();
    let machine = MachineSpec::default();
    let m = map_neurons(&s, &machine, 4).unwrap();
    let full = simulate_batch(&s, &m, &machine, &ActivityTrace::saturated(&s)).unwrap();
    let mut partial = ActivityTrace::saturated(&s);
    partial.steps[1][2].spikes /= 2;
    partial.steps[2][0].entries = partial.steps[2][0].spikes;
    partial.steps[0][1].entries /= 3;
    partial.steps[0][1].spikes = partial.steps[0][1].entries;
    let less = simulate_batch(&s, &m, &machine, &partial).unwrap();
    assert!(less.total_time() <= full.total_time());
    assert!(less.exchange_bytes() <= full.exchange_bytes());
}

#[test]
fn superstep_time_is_max_not_sum() {
    // Three tiles: one holds a single neuron, one holds twenty.
    let s = spec(vec![8, 21], vec![8, 22], 2, 1);
    let machine = MachineSpec::default();
    let load = |tile, count| TileLoad {
        id: TileId { chip: 0, tile },
        layers: vec![(0, count)],
        bytes: 0,
    };
    let mapping = TileMapping {
        neurons_per_tile: 20,
        layer_sizes: vec![21],
        tiles: vec![load(0, 1), load(1, 20)],
        layer_tiles: vec![vec![0, 1]],
    };
    let activity = ActivityTrace::saturated(&s);
    let ledger = simulate_batch(&s, &mapping, &machine, &activity).unwrap();
    let c = &machine.cost;
    let input = activity.steps[0][0];
    let per_neuron = 2.0 * c.cycles_per_state_update + input.spikes as f64 * c.cycles_per_mac;
    let payload = input.entries * 4 + 2 * HEADER_BYTES_PER_ROW;
    let exchange = payload as f64 / 8.0 * c.intra_chip_cycles_per_8_bytes;
    let forward = &ledger.supersteps[0];
    assert_eq!(forward.time_cycles, 20.0 * per_neuron + exchange + c.sync_cycles_per_superstep);
    let summed = 21.0 * per_neuron + 2.0 * exchange + c.sync_cycles_per_superstep;
    assert!(forward.time_cycles < summed);
}

#[test]
fn out_of_memory_boundary() {
    // One tile, one neuron: the budget is met exactly by a fan-in of f and
    // exceeded by f + 1.
    let mem = MemoryModel {
        batch_size: 1,
        trace_timesteps: 1,
        optimizer_slots: 2,
    };
    let fixed = mem.neuron_bytes(0);
    let per_weight = mem.neuron_bytes(1) - fixed;
    let machine = MachineSpec::default();
    let fan_in = ((machine.sram_per_tile - fixed) / per_weight) as usize;
    let exact = fixed + fan_in as u64 * per_weight;
    let fits = |fan_in: usize| {
        let s = spec(vec![fan_in, 1], vec![2, 2], 1, 1);
        map_neurons_with(&s, &MachineSpec { sram_per_tile: exact, ..machine.clone() }, 1, &mem)
    };
    assert!(fits(fan_in).is_ok());
    assert!(fits(fan_in - 1).is_ok());
    match fits(fan_in + 1) {
        Err(Error::OutOfTileMemory { needed, budget, .. }) => {
            assert_eq!(budget, exact);
            assert_eq!(needed, exact + per_weight);
        }
        other => panic!("expected out of memory, got {other:?}"),
    }
}

#[test]
fn equal_ledgers_give_unit_acceleration() {
    let s = small();
    let machine = MachineSpec::default();
    let m = map_neurons(&s, &machine, 4).unwrap();
    let l = simulate_batch(&s, &m, &machine, &ActivityTrace::saturated(&s)).unwrap();
    assert_eq!(acceleration_model(&l, &l).unwrap(), 1.0);
}

#[test]
fn ledger_does_not_depend_on_thread_count() {
    let s = spec(vec![100, 300, 300, 10], vec![20, 30, 30, 10], 8, 4);
    let machine = MachineSpec::default();
    let m = map_neurons(&s, &machine, 2).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_batch(&s, &m, &machine, &ActivityTrace::saturated(&s)).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn weak_scaling_rejects_odd_chip_counts() {
    let s = small();
    let mem = MemoryModel::adam(&s);
    assert_eq!(weak_scale_run(&s, &MachineSpec::with_chips(1), 4, &mem).unwrap(), 1.0);
    assert!(weak_scale_run(&s, &MachineSpec::with_chips(3), 4, &mem).is_err());
    assert!(weak_scale_run(&s, &MachineSpec::with_chips(2), 4, &mem).unwrap() > 1.0);
}

#[test]
fn machine_file_round_trips() {
    let mut m = MachineSpec::with_chips(4);
    m.cost.inter_chip_cycles_per_8_bytes = 12.0;
    assert_eq!(MachineSpec::from_kv(&m.to_kv()).unwrap(), m);
    assert!(MachineSpec::from_kv("tiles_per_chip = 4\nbogus = 1\n").is_err());
    assert!(MachineSpec::from_kv("inter_chip_cycles_per_8_bytes = 0.5\n").is_err());
}
