//! Training through time: forward simulation with trace recording,
//! surrogate-gradient backward sweep, loss, optimizers and the epoch loop.

mod backward;
mod checkpoint;
mod forward;
mod loss;
mod optim;
mod train;

pub use backward::backward_pass;
pub use checkpoint::Checkpoint;
pub use forward::{forward_pass, ForwardTrace, LayerTrace, SpikeRecord};
pub use loss::{softmax, softmax_cross_entropy, LossOutput};
pub use optim::{adam_update, sgd_update, OptimizerState};
pub use train::{
    batch_inputs, evaluate, train_epoch, train_step, EpochMetrics, Sample, StepOutput,
    TrainOptions,
};

use serde::{Deserialize, Serialize};

use crate::model::SpikeFn;
use crate::rng::DropRng;

/// Whether spikes travel between layers as dense binary matrices or as
/// fixed-capacity sparse batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ExecMode {
    #[default]
    Dense,
    Sparse,
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown mode `{other}` (expected dense or sparse)")),
        }
    }
}

/// Knobs shared by the forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub mode: ExecMode,
    pub spike_fn: SpikeFn,
    /// Fixed-activity override: every neuron (and every input channel) is
    /// treated as firing, so sparse batches saturate at capacity.
    pub force_spikes: bool,
    /// Stop gradients through the reset factor `(1 − S)`.
    pub detach_reset: bool,
    pub drop: DropRng,
}

impl RunOptions {
    pub fn new(mode: ExecMode) -> Self {
        Self {
            mode,
            spike_fn: SpikeFn::Heaviside,
            force_spikes: false,
            detach_reset: false,
            drop: DropRng::new(0),
        }
    }

    pub fn relaxed() -> Self {
        Self {
            spike_fn: SpikeFn::Relaxed,
            ..Self::new(ExecMode::Dense)
        }
    }
}

/// Scores of the relaxed (smooth-spike) model. Only meaningful for
/// gradient validation; see [`SpikeFn::Relaxed`].
pub fn surrogate_forward_mode(
    net: &crate::model::Network,
    inputs: &[crate::matrix::Matrix],
) -> crate::Result<crate::matrix::Matrix> {
    forward_pass(net, inputs, &RunOptions::relaxed()).map(|(_, scores)| scores)
}
