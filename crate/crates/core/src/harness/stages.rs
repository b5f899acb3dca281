use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::ConceptDataset;
use crate::datagen::generate;
use crate::error::Result;
use crate::neural::{Checkpoint, LayeredNet, SeedLineage, Slice};
use crate::scalar::Scalar;
use crate::store::write_atomic;

use super::ExperimentConfig;

pub const ARTIFACT_FILE: &str = "artifact.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Per-seed checkpoint directory; each stage lives in `<seed dir>/<stage>/`.
#[derive(Clone, Debug)]
pub struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn for_seed(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self::new(cfg.run_dir().join(seed.to_string()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifact_path(&self, stage: &str) -> PathBuf {
        self.dir.join(stage).join(ARTIFACT_FILE)
    }

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.dir.join(stage).join(CHECKPOINT_FILE)
    }

    /// Writes a standalone network checkpoint next to the stage artifact, once.
    pub fn export_checkpoint<T: Scalar>(
        &self,
        stage: &str,
        net: &LayeredNet<T>,
        slice: Option<Slice>,
        seeds: SeedLineage,
        metadata: serde_json::Value,
    ) -> Result<()> {
        let path = self.checkpoint_path(stage);
        if path.exists() {
            return Ok(());
        }
        let mut ckpt = Checkpoint::from_net(net, slice, seeds);
        ckpt.metadata = metadata;
        ckpt.save(&path)
    }

    pub fn has(&self, stage: &str) -> bool {
        self.artifact_path(stage).exists()
    }

    pub fn load<A: DeserializeOwned>(&self, stage: &str) -> Result<A> {
        Ok(serde_json::from_slice(&std::fs::read(self.artifact_path(stage))?)?)
    }

    /// Loads the stage artifact if present, else runs `f` and stores its result.
    pub fn get_or_run<A, F>(&self, stage: &str, f: F) -> Result<A>
    where
        A: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<A>,
    {
        let path = self.artifact_path(stage);
        if path.exists() {
            log::debug!("reusing {}", path.display());
            return self.load(stage);
        }
        let a = f()?;
        write_atomic(&path, &serde_json::to_vec(&a)?)?;
        Ok(a)
    }

    /// Generates the seed's dataset once and reloads it afterwards.
    pub fn dataset(&self, cfg: &ExperimentConfig, seed: u64) -> Result<ConceptDataset<f64>> {
        let stem = self.dir.join("data").join("dataset");
        if stem.with_extension("json").exists() {
            return ConceptDataset::load(&stem);
        }
        let ds = generate(&cfg.dataset.gen_config(seed))?;
        ds.save(&stem)?;
        Ok(ds)
    }
}

/// Independent seed for a named stage of a run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caches_stage_results() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = StageCache::new(tmp.path());
        let mut calls = 0;
        let a: Vec<f64> = cache
            .get_or_run("s", || {
                calls += 1;
                Ok(vec![0.1, 1.0 / 3.0])
            })
            .unwrap();
        let b: Vec<f64> = cache
            .get_or_run("s", || {
                calls += 1;
                Ok(vec![])
            })
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(calls, 1);
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(stage_seed(0, "probe"), stage_seed(0, "cbm"));
        assert_ne!(stage_seed(0, "probe"), stage_seed(1, "probe"));
        assert_eq!(stage_seed(3, "x"), stage_seed(3, "x"));
    }
}
