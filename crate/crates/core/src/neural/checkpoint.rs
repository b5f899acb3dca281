//! Self-describing JSON checkpoint for a single network.
//!
//! Fields:
//! - `format`: always `"intervene-checkpoint"`
//! - `version`: schema version, currently 1
//! - `scalar`: `"f64"` or `"f32"`
//! - `layers`: tagged layer specs with parameters and batchnorm buffers
//! - `mode`: `train` or `eval`
//! - `slice_index`: split point for sliced models, else `null`
//! - `seeds`: seed lineage (dataset seed, model seed, named derived seeds)
//! - `metadata`: free-form JSON supplied by the caller

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{LayeredNet, Mode, Slice};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "intervene-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub dataset_seed: Option<u64>,
    pub model_seed: Option<u64>,
    #[serde(default)]
    pub derived: Vec<(String, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub layers: Vec<super::Layer<T>>,
    pub mode: Mode,
    pub slice_index: Option<usize>,
    pub seeds: SeedLineage,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_net(net: &LayeredNet<T>, slice: Option<Slice>, seeds: SeedLineage) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.into(),
            layers: net.layers().to_vec(),
            mode: net.mode(),
            slice_index: slice.map(|s| s.split_index()),
            seeds,
            metadata: serde_json::Value::Null,
        }
    }

    /// Rebuilds the network, re-validating every invariant.
    pub fn to_net(&self) -> Result<(LayeredNet<T>, Option<Slice>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.scalar != T::NAME {
            return Err(Error::Config(format!("checkpoint scalar {} != {}", self.scalar, T::NAME)));
        }
        let mut net = LayeredNet::new(self.layers.clone())?;
        net.set_mode(self.mode);
        let slice = self.slice_index.map(|s| Slice::new(s, &net)).transpose()?;
        Ok((net, slice))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_vec_pretty(self)?.as_slice())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
