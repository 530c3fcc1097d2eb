use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OptimizerState;
use crate::error::{Error, Result};
use crate::model::Network;

const FORMAT: &str = "sparse-snn-checkpoint/1";

/// Everything needed to resume training bit-exactly. Stored as JSON;
/// `f32` values are written in shortest round-trip form, so a save/load
/// cycle reproduces every bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub network: Network,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub epoch: u64,
}

impl Checkpoint {
    pub fn new(network: Network, optimizer: OptimizerState, seed: u64, epoch: u64) -> Self {
        Self {
            format: FORMAT.to_string(),
            network,
            optimizer,
            seed,
            epoch,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != FORMAT {
            return Err(Error::Corrupt(format!("unknown checkpoint format `{}`", ckpt.format)));
        }
        Network::new(ckpt.network.spec.clone(), ckpt.network.layers.clone())?;
        Ok(ckpt)
    }
}
