use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::TrainSchedule;
use crate::backbone::NetworkConfig;
use crate::detector::EvalParams;
use crate::error::{Error, Result};

/// Per-channel normalisation applied to synthetic images before the
/// pyramid is built.
pub const IMAGE_MEAN: [f64; 3] = [0.5; 3];
pub const IMAGE_STD: [f64; 3] = [0.25; 3];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub train_seed: u64,
    pub val_size: usize,
    pub val_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_size: 512,
            train_seed: 0,
            val_size: 128,
            val_seed: 10_000,
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub model: NetworkConfig,
    pub schedule: TrainSchedule,
    pub data: DataConfig,
    pub eval: EvalParams,
    /// Master seed for parameter init and shuffling.
    pub seed: u64,
}


impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.eval.validate()?;
        if self.data.train_size == 0 || self.data.val_size == 0 {
            return Err(Error::Config("train_size and val_size must be >= 1".into()));
        }
        let train = self.data.train_seed..self.data.train_seed + self.data.train_size as u64;
        let val = self.data.val_seed..self.data.val_seed + self.data.val_size as u64;
        if train.start < val.end && val.start < train.end {
            return Err(Error::Config(format!(
                "train seeds {train:?} overlap validation seeds {val:?}"
            )));
        }
        Ok(())
    }

    /// Digest of the model architecture; checkpoints are only loadable into
    /// a network with the same digest.
    pub fn model_digest(&self) -> [u8; 32] {
        model_digest(&self.model)
    }
}

pub(crate) fn model_digest(model: &NetworkConfig) -> [u8; 32] {
    let bytes = serde_json::to_vec(model).expect("config serialises");
    Sha256::digest(&bytes).into()
}
