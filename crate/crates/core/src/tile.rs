//! Bulk-synchronous simulator of a distributed-local-memory manycore chip.
//!
//! Neurons are pinned to tiles together with their incoming weights, their
//! state and all gradient and optimizer buffers; only spike tensors move.
//! Each algorithmic timestep costs one forward and one backward superstep,
//! and a batch ends with one optimizer superstep. A superstep lasts as long
//! as its slowest tile (compute plus that tile's exchange traffic) plus the
//! barrier.
//!
//! The model is parametric, not cycle accurate. By default the dense to
//! sparse compute ratio of a layer is exactly `fan_in : mean spikes`.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkSpec;

/// Bytes of one spike id, one count, or one gradient value.
pub const WORD_BYTES: u64 = 4;
/// Per-row header of a sparse tensor: `num_spikes` and `num_grads`.
pub const HEADER_BYTES_PER_ROW: u64 = 2 * WORD_BYTES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub cycles_per_mac: f64,
    pub cycles_per_state_update: f64,
    pub intra_chip_cycles_per_8_bytes: f64,
    /// Link between the two chips of a pair.
    pub inter_chip_cycles_per_8_bytes: f64,
    /// Links between chips of different pairs.
    pub far_chip_cycles_per_8_bytes: f64,
    pub sync_cycles_per_superstep: f64,
    /// Extra barrier latency per superstep for each level of the
    /// inter-chip barrier tree (`ceil(log2 chips)` levels).
    pub inter_chip_sync_cycles: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            cycles_per_mac: 1.0,
            cycles_per_state_update: 10.0,
            intra_chip_cycles_per_8_bytes: 1.0,
            inter_chip_cycles_per_8_bytes: 8.0,
            far_chip_cycles_per_8_bytes: 16.0,
            sync_cycles_per_superstep: 150.0,
            inter_chip_sync_cycles: 2000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub tiles_per_chip: u32,
    pub sram_per_tile: u64,
    pub num_chips: u32,
    pub cost: CostParams,
}

impl Default for MachineSpec {
    fn default() -> Self {
        Self {
            tiles_per_chip: 1472,
            sram_per_tile: 624 * 1024,
            num_chips: 1,
            cost: CostParams::default(),
        }
    }
}

impl MachineSpec {
    pub fn with_chips(num_chips: u32) -> Self {
        Self {
            num_chips,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cost;
        let positive = [
            self.tiles_per_chip as f64,
            self.sram_per_tile as f64,
            self.num_chips as f64,
            c.cycles_per_mac,
            c.cycles_per_state_update,
            c.intra_chip_cycles_per_8_bytes,
            c.inter_chip_cycles_per_8_bytes,
            c.far_chip_cycles_per_8_bytes,
            c.sync_cycles_per_superstep,
        ];
        if positive.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config("machine parameters must be positive".into()));
        }
        if !(c.inter_chip_sync_cycles >= 0.0) {
            return Err(Error::Config("inter_chip_sync_cycles must be non-negative".into()));
        }
        if c.inter_chip_cycles_per_8_bytes < c.intra_chip_cycles_per_8_bytes
            || c.far_chip_cycles_per_8_bytes < c.inter_chip_cycles_per_8_bytes
        {
            return Err(Error::Config(
                "link costs must satisfy intra <= inter <= far".into(),
            ));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; keys are the field names of
    /// [`MachineSpec`] and [`CostParams`]. Blank lines and `#` comments are
    /// ignored and unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            m.set(key.trim(), value.trim())?;
        }
        m.validate()?;
        Ok(m)
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        let c = &mut self.cost;
        match key {
            "tiles_per_chip" => self.tiles_per_chip = num(key, value)?,
            "sram_per_tile" => self.sram_per_tile = num(key, value)?,
            "num_chips" => self.num_chips = num(key, value)?,
            "cycles_per_mac" => c.cycles_per_mac = num(key, value)?,
            "cycles_per_state_update" => c.cycles_per_state_update = num(key, value)?,
            "intra_chip_cycles_per_8_bytes" => c.intra_chip_cycles_per_8_bytes = num(key, value)?,
            "inter_chip_cycles_per_8_bytes" => c.inter_chip_cycles_per_8_bytes = num(key, value)?,
            "far_chip_cycles_per_8_bytes" => c.far_chip_cycles_per_8_bytes = num(key, value)?,
            "sync_cycles_per_superstep" => c.sync_cycles_per_superstep = num(key, value)?,
            "inter_chip_sync_cycles" => c.inter_chip_sync_cycles = num(key, value)?,
            other => return Err(Error::Config(format!("unknown machine key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let c = &self.cost;
        format!(
            "tiles_per_chip = {}\nsram_per_tile = {}\nnum_chips = {}\ncycles_per_mac = {}\n\
             cycles_per_state_update = {}\nintra_chip_cycles_per_8_bytes = {}\n\
             inter_chip_cycles_per_8_bytes = {}\nfar_chip_cycles_per_8_bytes = {}\n\
             sync_cycles_per_superstep = {}\ninter_chip_sync_cycles = {}\n",
            self.tiles_per_chip,
            self.sram_per_tile,
            self.num_chips,
            c.cycles_per_mac,
            c.cycles_per_state_update,
            c.intra_chip_cycles_per_8_bytes,
            c.inter_chip_cycles_per_8_bytes,
            c.far_chip_cycles_per_8_bytes,
            c.sync_cycles_per_superstep,
            c.inter_chip_sync_cycles,
        )
    }

    fn link_cost(&self, from_chip: u32, to_chip: u32) -> (LinkTier, f64) {
        let c = &self.cost;
        if from_chip == to_chip {
            (LinkTier::Intra, c.intra_chip_cycles_per_8_bytes)
        } else if from_chip / 2 == to_chip / 2 {
            (LinkTier::Inter, c.inter_chip_cycles_per_8_bytes)
        } else {
            (LinkTier::Inter, c.far_chip_cycles_per_8_bytes)
        }
    }

    /// Barrier latency with `chips` chips taking part: the on-chip barrier
    /// plus an inter-chip stage per level of a binary barrier tree.
    fn sync_cycles(&self, chips: u32) -> f64 {
        let c = &self.cost;
        c.sync_cycles_per_superstep + c.inter_chip_sync_cycles * ceil_log2(chips as usize) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LinkTier {
    Intra,
    Inter,
}

/// What lives in tile memory besides the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub batch_size: usize,
    /// Timesteps of membrane and current kept for the backward pass.
    pub trace_timesteps: usize,
    /// Extra per-weight buffers of the optimizer (Adam: 2, SGD: 0).
    pub optimizer_slots: usize,
}

impl MemoryModel {
    pub fn adam(spec: &NetworkSpec) -> Self {
        Self {
            batch_size: spec.batch_size,
            trace_timesteps: spec.num_timesteps,
            optimizer_slots: 2,
        }
    }

    pub fn sgd(spec: &NetworkSpec) -> Self {
        Self {
            optimizer_slots: 0,
            ..Self::adam(spec)
        }
    }

    /// Bytes pinned to a tile for one neuron with `fan_in` inputs: weights,
    /// weight gradients and optimizer moments, membrane/current and their
    /// gradients, plus the stored trace.
    pub fn neuron_bytes(&self, fan_in: usize) -> u64 {
        let per_weight = (2 + self.optimizer_slots) as u64 * WORD_BYTES;
        let states = 4 * self.batch_size as u64 * WORD_BYTES;
        let trace = 2 * self.batch_size as u64 * self.trace_timesteps as u64 * WORD_BYTES;
        fan_in as u64 * per_weight + states + trace
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub chip: u32,
    pub tile: u32,
}

/// Neurons and memory of one occupied tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileLoad {
    pub id: TileId,
    /// `(layer index, neuron count)`; layer 0 is the first non-input layer.
    pub layers: Vec<(usize, u32)>,
    pub bytes: u64,
}

impl TileLoad {
    pub fn neurons(&self) -> u32 {
        self.layers.iter().map(|l| l.1).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileMapping {
    pub neurons_per_tile: u32,
    /// Sizes of the mapped (non-input) layers.
    pub layer_sizes: Vec<usize>,
    /// Occupied tiles in placement order.
    pub tiles: Vec<TileLoad>,
    /// For every mapped layer, indices into `tiles` that hold its neurons.
    pub layer_tiles: Vec<Vec<usize>>,
}

impl TileMapping {
    /// Tile holding neuron `neuron` of mapped layer `layer`.
    pub fn tile_of(&self, layer: usize, neuron: usize) -> Option<TileId> {
        let mut seen = 0usize;
        for &ti in self.layer_tiles.get(layer)? {
            let tile = &self.tiles[ti];
            let count = tile.layers.iter().find(|l| l.0 == layer)?.1 as usize;
            if neuron < seen + count {
                return Some(tile.id);
            }
            seen += count;
        }
        None
    }

    pub fn occupied_tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn chips_used(&self) -> u32 {
        self.tiles.iter().map(|t| t.id.chip).max().map_or(0, |c| c + 1)
    }

    /// Owner tile of the spike tensor produced by mapped layer `layer`.
    fn owner(&self, layer: usize) -> TileId {
        self.tiles[self.layer_tiles[layer][0]].id
    }
}

struct Placer<'a> {
    machine: &'a MachineSpec,
    npt: u32,
    tiles: Vec<TileLoad>,
    layer_tiles: Vec<Vec<usize>>,
    cursor: u64,
}

impl<'a> Placer<'a> {
    fn place_layer(&mut self, layer: usize, mut count: usize) -> Result<()> {
        let capacity = self.machine.tiles_per_chip as u64 * self.machine.num_chips as u64;
        while count > 0 {
            let global = self.cursor / self.npt as u64;
            if global >= capacity {
                return Err(Error::Config(format!(
                    "network needs more than the {capacity} tiles of the machine"
                )));
            }
            let id = TileId {
                chip: (global / self.machine.tiles_per_chip as u64) as u32,
                tile: (global % self.machine.tiles_per_chip as u64) as u32,
            };
            let used = (self.cursor % self.npt as u64) as usize;
            let take = count.min(self.npt as usize - used);
            if self.tiles.last().map(|t| t.id) != Some(id) {
                self.tiles.push(TileLoad {
                    id,
                    layers: Vec::new(),
                    bytes: 0,
                });
            }
            let ti = self.tiles.len() - 1;
            self.tiles[ti].layers.push((layer, take as u32));
            self.layer_tiles[layer].push(ti);
            self.cursor += take as u64;
            count -= take;
        }
        Ok(())
    }

    fn jump_to_chip(&mut self, chip: u32) {
        let start = chip as u64 * self.machine.tiles_per_chip as u64 * self.npt as u64;
        self.cursor = self.cursor.max(start);
        // Start on a fresh tile.
        let rem = self.cursor % self.npt as u64;
        if rem != 0 {
            self.cursor += self.npt as u64 - rem;
        }
    }
}

fn build_mapping(
    spec: &NetworkSpec,
    machine: &MachineSpec,
    neurons_per_tile: u32,
    memory: &MemoryModel,
    chip_of_layer: Option<&[u32]>,
) -> Result<TileMapping> {
    machine.validate()?;
    spec.validate()?;
    if neurons_per_tile == 0 {
        return Err(Error::Config("neurons_per_tile must be at least 1".into()));
    }
    let layer_sizes: Vec<usize> = spec.layer_sizes[1..].to_vec();
    let mut placer = Placer {
        machine,
        npt: neurons_per_tile,
        tiles: Vec::new(),
        layer_tiles: vec![Vec::new(); layer_sizes.len()],
        cursor: 0,
    };
    for (li, &n) in layer_sizes.iter().enumerate() {
        if let Some(chips) = chip_of_layer {
            let chip = chips[li];
            if chip >= machine.num_chips {
                return Err(Error::Config(format!("layer {li} assigned to missing chip {chip}")));
            }
            let current = (placer.cursor / neurons_per_tile as u64 / machine.tiles_per_chip as u64) as u32;
            if chip > current {
                placer.jump_to_chip(chip);
            }
        }
        placer.place_layer(li, n)?;
    }
    let mut tiles = placer.tiles;
    for tile in &mut tiles {
        tile.bytes = tile
            .layers
            .iter()
            .map(|&(li, c)| c as u64 * memory.neuron_bytes(spec.layer_sizes[li]))
            .sum();
        if tile.bytes > machine.sram_per_tile {
            return Err(Error::OutOfTileMemory {
                chip: tile.id.chip,
                tile: tile.id.tile,
                needed: tile.bytes,
                budget: machine.sram_per_tile,
            });
        }
    }
    Ok(TileMapping {
        neurons_per_tile,
        layer_sizes,
        tiles,
        layer_tiles: placer.layer_tiles,
    })
}

/// Contiguous placement of all non-input layers, in order, with
/// `neurons_per_tile` neurons per occupied tile. Memory is budgeted for
/// Adam and a full-length trace.
pub fn map_neurons(
    spec: &NetworkSpec,
    machine: &MachineSpec,
    neurons_per_tile: u32,
) -> Result<TileMapping> {
    map_neurons_with(spec, machine, neurons_per_tile, &MemoryModel::adam(spec))
}

pub fn map_neurons_with(
    spec: &NetworkSpec,
    machine: &MachineSpec,
    neurons_per_tile: u32,
    memory: &MemoryModel,
) -> Result<TileMapping> {
    build_mapping(spec, machine, neurons_per_tile, memory, None)
}

/// Like [`map_neurons_with`], but layer `i` starts on chip
/// `chip_of_layer[i]` (chips must be nondecreasing).
pub fn map_layers_to_chips(
    spec: &NetworkSpec,
    machine: &MachineSpec,
    neurons_per_tile: u32,
    memory: &MemoryModel,
    chip_of_layer: &[u32],
) -> Result<TileMapping> {
    if chip_of_layer.len() != spec.num_layers() || chip_of_layer.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("chip assignment must cover every layer in order".into()));
    }
    build_mapping(spec, machine, neurons_per_tile, memory, Some(chip_of_layer))
}

/// Whether activity counts describe sparse tensors or dense ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Sparse,
    Dense,
}

/// Batch totals for one population at one timestep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationActivity {
    /// Forward spikes summed over the batch.
    pub spikes: u64,
    /// Retained entries (spikes plus gradient-only) summed over the batch.
    pub entries: u64,
}

/// Per-timestep, per-population spike counts of one batch. Population 0 is
/// the input; population `k` is the output of layer `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityTrace {
    pub representation: Representation,
    pub batch_size: usize,
    pub steps: Vec<Vec<PopulationActivity>>,
}

impl ActivityTrace {
    fn uniform(spec: &NetworkSpec, repr: Representation, per_row: impl Fn(usize) -> u64) -> Self {
        let pops = spec.layer_sizes.len();
        let b = spec.batch_size as u64;
        let step: Vec<PopulationActivity> = (0..pops)
            .map(|k| {
                let n = b * per_row(k);
                PopulationActivity { spikes: n, entries: n }
            })
            .collect();
        Self {
            representation: repr,
            batch_size: spec.batch_size,
            steps: vec![step; spec.num_timesteps],
        }
    }

    /// Every sparse tensor full to capacity: the fixed-activity workload.
    pub fn saturated(spec: &NetworkSpec) -> Self {
        Self::uniform(spec, Representation::Sparse, |k| {
            spec.sparse_sizes[k].min(spec.layer_sizes[k]) as u64
        })
    }

    pub fn silent(spec: &NetworkSpec) -> Self {
        Self::uniform(spec, Representation::Sparse, |_| 0)
    }

    /// The dense baseline: every population ships all of its neurons.
    pub fn dense(spec: &NetworkSpec) -> Self {
        Self::uniform(spec, Representation::Dense, |k| spec.layer_sizes[k] as u64)
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        let mut out = self.clone();
        for step in &mut out.steps {
            for p in step {
                p.spikes *= factor;
                p.entries *= factor;
            }
        }
        out
    }

    /// Mean fraction of neurons spiking per population (input included).
    pub fn mean_activity(&self, spec: &NetworkSpec) -> Vec<f64> {
        let denom = (self.batch_size * self.steps.len().max(1)) as f64;
        (0..spec.layer_sizes.len())
            .map(|k| {
                let total: u64 = self.steps.iter().filter_map(|s| s.get(k)).map(|p| p.spikes).sum();
                total as f64 / (denom * spec.layer_sizes[k] as f64)
            })
            .collect()
    }

    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.steps.len() != spec.num_timesteps {
            return Err(Error::Contract(format!(
                "activity covers {} timesteps, network has {}",
                self.steps.len(),
                spec.num_timesteps
            )));
        }
        let transmitted = spec.layer_sizes.len() - 1;
        for (t, step) in self.steps.iter().enumerate() {
            if step.len() < transmitted {
                return Err(Error::Contract(format!("timestep {t} misses populations")));
            }
            for (k, p) in step.iter().enumerate().take(transmitted) {
                let limit = (self.batch_size * spec.layer_sizes[k]) as u64;
                if p.spikes > p.entries || p.entries > limit {
                    return Err(Error::Contract(format!(
                        "timestep {t}, population {k}: {} spikes / {} entries exceed {} neurons",
                        p.spikes, p.entries, limit
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuperstepKind {
    Forward,
    Backward,
    Optimizer,
}

impl SuperstepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Backward => "backward",
            Self::Optimizer => "optimizer",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChipCost {
    /// Largest compute time of any tile on the chip.
    pub compute_cycles: f64,
    /// Largest exchange time of any tile on the chip.
    pub exchange_cycles: f64,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Superstep {
    pub kind: SuperstepKind,
    pub timestep: usize,
    pub chips: Vec<ChipCost>,
    pub sync_cycles: f64,
    /// `max over tiles (compute + exchange) + sync`.
    pub time_cycles: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub supersteps: Vec<Superstep>,
}

impl CostLedger {
    /// Modeled time of the batch in cycles.
    pub fn total_time(&self) -> f64 {
        self.supersteps.iter().map(|s| s.time_cycles).sum()
    }

    pub fn intra_bytes(&self) -> u64 {
        self.supersteps.iter().flat_map(|s| &s.chips).map(|c| c.intra_bytes).sum()
    }

    pub fn inter_bytes(&self) -> u64 {
        self.supersteps.iter().flat_map(|s| &s.chips).map(|c| c.inter_bytes).sum()
    }

    pub fn exchange_bytes(&self) -> u64 {
        self.intra_bytes() + self.inter_bytes()
    }

    /// Sum over supersteps of the slowest tile's compute.
    pub fn compute_cycles(&self) -> f64 {
        self.supersteps
            .iter()
            .map(|s| s.chips.iter().fold(0.0f64, |m, c| m.max(c.compute_cycles)))
            .sum()
    }

    pub fn sync_count(&self) -> usize {
        self.supersteps.len()
    }

    /// CSV with columns `superstep,phase,chip,cycles,intra_bytes,inter_bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("superstep,phase,chip,cycles,intra_bytes,inter_bytes\n");
        for (k, s) in self.supersteps.iter().enumerate() {
            for (chip, c) in s.chips.iter().enumerate() {
                let _ = writeln!(out, "{k},compute,{chip},{},0,0", c.compute_cycles);
                let _ = writeln!(
                    out,
                    "{k},exchange,{chip},{},{},{}",
                    c.exchange_cycles, c.intra_bytes, c.inter_bytes
                );
                let _ = writeln!(out, "{k},sync,{chip},{},0,0", s.sync_cycles);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Default)]
struct TileCost {
    compute: f64,
    exchange: f64,
    intra: u64,
    inter: u64,
}

impl TileCost {
    fn traffic(&mut self, machine: &MachineSpec, from: u32, to: u32, bytes: u64) {
        let (tier, cost) = machine.link_cost(from, to);
        self.exchange += bytes as f64 / 8.0 * cost;
        match tier {
            LinkTier::Intra => self.intra += bytes,
            LinkTier::Inter => self.inter += bytes,
        }
    }
}

fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

/// Part `k` of `total` split as evenly as possible into `parts` parts.
fn share(total: u64, parts: usize, k: usize) -> u64 {
    let parts = parts.max(1) as u64;
    let k = k as u64;
    total / parts + u64::from(k < total % parts)
}

fn finish(
    kind: SuperstepKind,
    timestep: usize,
    costs: &[TileCost],
    mapping: &TileMapping,
    machine: &MachineSpec,
) -> Superstep {
    let mut chips = vec![ChipCost::default(); machine.num_chips as usize];
    let mut slowest = 0.0f64;
    for (tile, c) in mapping.tiles.iter().zip(costs) {
        let chip = &mut chips[tile.id.chip as usize];
        chip.compute_cycles = chip.compute_cycles.max(c.compute);
        chip.exchange_cycles = chip.exchange_cycles.max(c.exchange);
        chip.intra_bytes += c.intra;
        chip.inter_bytes += c.inter;
        slowest = slowest.max(c.compute + c.exchange);
    }
    let sync = machine.sync_cycles(mapping.chips_used());
    Superstep {
        kind,
        timestep,
        chips,
        sync_cycles: sync,
        time_cycles: slowest + sync,
    }
}

/// Models one training batch on the tile machine.
///
/// Every timestep costs a forward and a backward superstep; the batch ends
/// with an optimizer superstep.
///
/// * Forward: each tile updates the state of its neurons and reads one
///   weight column per incoming spike. Each tile receives the full spike
///   tensor of its input population. A tensor produced on another chip
///   crosses the link once, striped over the receiving layer's tiles, and
///   is then shared on chip.
/// * Sparse tensors are additionally merged from per-tile partial lists.
///   The merged tensor is spread evenly over the producing layer's tiles
///   (at most one part per batch row).
/// * Backward: state gradients, weight gradients for every spike and input
///   gradients for every retained entry. Partial input gradients are
///   reduced over a binary tree of the consuming layer's tiles onto the
///   parts of the producing layer.
///
/// Dense activity ships `B × n` values per population with no headers and
/// no merge.
pub fn simulate_batch(
    spec: &NetworkSpec,
    mapping: &TileMapping,
    machine: &MachineSpec,
    activity: &ActivityTrace,
) -> Result<CostLedger> {
    machine.validate()?;
    if mapping.layer_sizes != spec.layer_sizes[1..] {
        return Err(Error::Contract("mapping was built for a different network".into()));
    }
    if mapping.chips_used() > machine.num_chips {
        return Err(Error::Contract("mapping uses more chips than the machine has".into()));
    }
    activity.validate(spec)?;
    let cost = &machine.cost;
    let batch = activity.batch_size as u64;
    let sparse = activity.representation == Representation::Sparse;
    let n_layers = mapping.layer_sizes.len();

    // Position of each (tile, layer) entry within its layer's tile list.
    let positions: Vec<Vec<usize>> = mapping
        .tiles
        .iter()
        .enumerate()
        .map(|(ti, tile)| {
            tile.layers
                .iter()
                .map(|&(li, _)| mapping.layer_tiles[li].iter().position(|&x| x == ti).unwrap())
                .collect()
        })
        .collect();
    // Chip that produces population `pop`; the input arrives on the chip of
    // the first layer.
    let source_chip = |pop: usize| mapping.owner(pop.saturating_sub(1)).chip;
    let payload = |a: &PopulationActivity| -> u64 {
        if sparse {
            a.entries * WORD_BYTES + batch * HEADER_BYTES_PER_ROW
        } else {
            a.entries * WORD_BYTES
        }
    };
    let grad_payload = |a: &PopulationActivity| -> u64 { a.entries * WORD_BYTES };
    // Rows read by read-and-sum kernels: only real spikes on the sparse
    // path, every neuron on the dense one.
    let macs = |a: &PopulationActivity| -> u64 {
        if sparse {
            a.spikes
        } else {
            a.entries
        }
    };
    // Number of parts a population's tensor is spread over.
    let parts = |li: usize| mapping.layer_tiles[li].len().min(activity.batch_size);

    let mut supersteps = Vec::with_capacity(2 * activity.steps.len() + 1);
    for (t, step) in activity.steps.iter().enumerate() {
        let forward: Vec<TileCost> = mapping
            .tiles
            .par_iter()
            .zip(&positions)
            .map(|(tile, pos)| {
                let mut c = TileCost::default();
                for (&(li, count), &k) in tile.layers.iter().zip(pos) {
                    let input = &step[li];
                    c.compute += count as f64
                        * (batch as f64 * cost.cycles_per_state_update
                            + macs(input) as f64 * cost.cycles_per_mac);
                    let bytes = payload(input);
                    let from = source_chip(li);
                    c.traffic(machine, tile.id.chip, tile.id.chip, bytes);
                    if from != tile.id.chip {
                        let stripe = share(bytes, mapping.layer_tiles[li].len(), k);
                        c.traffic(machine, from, tile.id.chip, stripe);
                    }
                    if sparse && li + 1 < n_layers {
                        let out = &step[li + 1];
                        if k < parts(li) {
                            let mine = share(out.entries, parts(li), k);
                            c.traffic(machine, tile.id.chip, tile.id.chip, mine * WORD_BYTES);
                            c.compute += mine as f64 * cost.cycles_per_mac;
                        }
                    }
                }
                c
            })
            .collect();
        supersteps.push(finish(SuperstepKind::Forward, t, &forward, mapping, machine));

        let backward: Vec<TileCost> = mapping
            .tiles
            .par_iter()
            .zip(&positions)
            .map(|(tile, pos)| {
                let mut c = TileCost::default();
                for (&(li, count), &k) in tile.layers.iter().zip(pos) {
                    let input = &step[li];
                    let input_grad = if li > 0 { input.entries } else { 0 };
                    c.compute += count as f64
                        * (batch as f64 * cost.cycles_per_state_update
                            + (macs(input) + input_grad) as f64 * cost.cycles_per_mac);
                    if li > 0 {
                        // One tree step on chip, one striped hop if the
                        // producer lives elsewhere.
                        let bytes = grad_payload(input);
                        c.traffic(machine, tile.id.chip, tile.id.chip, bytes);
                        let to = source_chip(li);
                        if to != tile.id.chip {
                            let stripe = share(bytes, mapping.layer_tiles[li].len(), k);
                            c.traffic(machine, tile.id.chip, to, stripe);
                        }
                    }
                    if li + 1 < n_layers && k < parts(li) {
                        // Final reduction of this tile's part of the
                        // layer's outgoing gradient.
                        let out = &step[li + 1];
                        let depth = ceil_log2(mapping.layer_tiles[li + 1].len());
                        let mine = share(out.entries, parts(li), k);
                        c.traffic(machine, tile.id.chip, tile.id.chip, depth * mine * WORD_BYTES);
                        c.compute += (depth * mine) as f64 * cost.cycles_per_mac;
                    }
                }
                c
            })
            .collect();
        supersteps.push(finish(SuperstepKind::Backward, t, &backward, mapping, machine));
    }

    let costs: Vec<TileCost> = mapping
        .tiles
        .iter()
        .map(|tile| TileCost {
            compute: tile
                .layers
                .iter()
                .map(|&(li, count)| count as f64 * spec.layer_sizes[li] as f64 * cost.cycles_per_mac)
                .sum(),
            ..TileCost::default()
        })
        .collect();
    supersteps.push(finish(
        SuperstepKind::Optimizer,
        activity.steps.len(),
        &costs,
        mapping,
        machine,
    ));
    Ok(CostLedger { supersteps })
}

/// Modeled dense time over modeled sparse time.
pub fn acceleration_model(dense: &CostLedger, sparse: &CostLedger) -> Result<f64> {
    let s = sparse.total_time();
    if !(s > 0.0) {
        return Err(Error::Contract("sparse ledger has no modeled time".into()));
    }
    Ok(dense.total_time() / s)
}

/// Network made of `k` copies of `per_chip`'s hidden layers, chained, with
/// the input and output layers kept once.
pub fn chain_network(per_chip: &NetworkSpec, k: usize) -> NetworkSpec {
    let hidden = &per_chip.layer_sizes[1..per_chip.layer_sizes.len() - 1];
    let hidden_caps = &per_chip.sparse_sizes[1..per_chip.sparse_sizes.len() - 1];
    let mut layer_sizes = vec![per_chip.layer_sizes[0]];
    let mut sparse_sizes = vec![per_chip.sparse_sizes[0]];
    for _ in 0..k {
        layer_sizes.extend_from_slice(hidden);
        sparse_sizes.extend_from_slice(hidden_caps);
    }
    layer_sizes.push(*per_chip.layer_sizes.last().unwrap());
    sparse_sizes.push(*per_chip.sparse_sizes.last().unwrap());
    NetworkSpec {
        layer_sizes,
        sparse_sizes,
        ..per_chip.clone()
    }
}

/// Modeled time of the chained network on `chips` chips, one copy of the
/// hidden stack per chip, under the fixed-activity workload.
pub fn chained_time(
    per_chip: &NetworkSpec,
    machine: &MachineSpec,
    chips: u32,
    neurons_per_tile: u32,
    memory: &MemoryModel,
) -> Result<f64> {
    let net = chain_network(per_chip, chips as usize);
    let hidden = per_chip.layer_sizes.len() - 2;
    let mut chip_of_layer: Vec<u32> = (0..chips).flat_map(|c| std::iter::repeat_n(c, hidden)).collect();
    chip_of_layer.push(chips - 1);
    let m = MachineSpec {
        num_chips: chips,
        ..machine.clone()
    };
    let mapping = map_layers_to_chips(&net, &m, neurons_per_tile, memory, &chip_of_layer)?;
    let ledger = simulate_batch(&net, &mapping, &m, &ActivityTrace::saturated(&net))?;
    Ok(ledger.total_time())
}

/// Weak-scaling slowdown: modeled time on `machine.num_chips` chips over
/// the time of the single-chip network.
pub fn weak_scale_run(
    per_chip: &NetworkSpec,
    machine: &MachineSpec,
    neurons_per_tile: u32,
    memory: &MemoryModel,
) -> Result<f64> {
    let k = machine.num_chips;
    if ![1, 2, 4, 8, 16].contains(&k) {
        return Err(Error::Config(format!("unsupported chip count {k} (use 1, 2, 4, 8 or 16)")));
    }
    if per_chip.layer_sizes.len() < 3 {
        return Err(Error::Config("weak scaling needs at least one hidden layer".into()));
    }
    if k == 1 {
        // Still validate that the network maps.
        chained_time(per_chip, machine, 1, neurons_per_tile, memory)?;
        return Ok(1.0);
    }
    let one = chained_time(per_chip, machine, 1, neurons_per_tile, memory)?;
    let many = chained_time(per_chip, machine, k, neurons_per_tile, memory)?;
    Ok(many / one)
}
