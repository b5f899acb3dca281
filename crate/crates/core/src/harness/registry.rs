use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::artifacts::{family_stages, TrainedModel};
use super::pipeline::{ResultsBundle, Scores};
use super::stages::{StageCache, CHECKPOINT_FILE};
use super::{ExperimentConfig, Family};
use crate::data::{ConceptDataset, Mechanism};
use crate::error::{Error, Result};
use crate::models::ProbeLinearity;
use crate::store::write_atomic;

pub const REGISTRY_FILE: &str = "registry.json";
pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub j: usize,
    pub mechanism: Mechanism,
    /// Stem relative to the run directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub family: Family,
    pub seed: u64,
    pub dataset_id: String,
    pub num_concepts: usize,
    pub input_dim: usize,
    pub probe: ProbeLinearity,
    /// Checkpoint stages relative to the seed directory.
    pub stages: Vec<String>,
    /// Standalone network checkpoints relative to the run directory.
    pub checkpoints: Vec<String>,
    pub hyperparameters: serde_json::Value,
    pub notes: Option<String>,
    pub concept_metrics: Option<Scores>,
    pub target_metrics: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub schema_version: u32,
    pub config_hash: String,
    pub datasets: Vec<DatasetEntry>,
    pub models: Vec<ModelEntry>,
}

fn family_notes(family: Family) -> Option<&'static str> {
    match family {
        Family::PostHocCbm => Some("probe and head fitted on validation rows over the frozen backbone"),
        Family::PostHocCbmResidual => {
            Some("probe and head fitted on validation rows over the frozen backbone; residual fitted last with the rest frozen")
        }
        Family::FinetunedMultitask => Some("carries its own jointly trained linear probe"),
        Family::FinetunedAppend => Some("unknown concepts enter the head as 0.5"),
        _ => None,
    }
}

pub fn dataset_id(seed: u64) -> String {
    format!("s{seed}")
}

pub fn model_id(seed: u64, family: Family) -> String {
    format!("s{seed}-{}", family.name())
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            schema_version: REGISTRY_SCHEMA_VERSION,
            config_hash: String::new(),
            datasets: Vec::new(),
            models: Vec::new(),
        }
    }

    /// Entries for every dataset and family whose checkpoints exist under the run directory.
    pub fn scan(cfg: &ExperimentConfig, bundle: Option<&ResultsBundle>) -> Self {
        let mut reg = Self {
            config_hash: cfg.hash(),
            ..Self::empty()
        };
        for &seed in &cfg.seeds {
            let cache = StageCache::for_seed(cfg, seed);
            if !cache.dir().join("data").join("dataset.json").exists() {
                continue;
            }
            let ds = dataset_id(seed);
            reg.datasets.push(DatasetEntry {
                id: ds.clone(),
                seed,
                n: cfg.dataset.n,
                p: cfg.dataset.p,
                k: cfg.dataset.k,
                j: cfg.dataset.j,
                mechanism: cfg.dataset.mechanism,
                path: format!("{seed}/data/dataset"),
            });
            for family in Family::ALL {
                let stages = family_stages(family, cfg.probe);
                if !stages.iter().all(|s| cache.has(s)) {
                    continue;
                }
                let row = bundle.and_then(|b| b.table_row(seed, family));
                reg.models.push(ModelEntry {
                    id: model_id(seed, family),
                    family,
                    seed,
                    dataset_id: ds.clone(),
                    num_concepts: cfg.dataset.k,
                    input_dim: cfg.dataset.p,
                    probe: cfg.probe,
                    stages: stages.iter().map(|s| s.to_string()).collect(),
                    checkpoints: stages
                        .iter()
                        .filter(|s| cache.checkpoint_path(s).exists())
                        .map(|s| format!("{seed}/{s}/{CHECKPOINT_FILE}"))
                        .collect(),
                    hyperparameters: cfg.family_hyperparameters(family),
                    notes: family_notes(family).map(String::from),
                    concept_metrics: row.and_then(|r| r.concept),
                    target_metrics: row.map(|r| r.target),
                });
            }
        }
        reg
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(REGISTRY_FILE), &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let reg: Self = serde_json::from_slice(&std::fs::read(run_dir.join(REGISTRY_FILE))?)?;
        if reg.schema_version != REGISTRY_SCHEMA_VERSION {
            return Err(Error::Config(format!("registry schema {} unsupported", reg.schema_version)));
        }
        Ok(reg)
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn model(&self, id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.id == id)
    }
}

pub fn write_registry_with(cfg: &ExperimentConfig, bundle: Option<&ResultsBundle>) -> Result<()> {
    Registry::scan(cfg, bundle).save(&cfg.run_dir())
}

pub fn load_dataset(run_dir: &Path, entry: &DatasetEntry) -> Result<ConceptDataset<f64>> {
    ConceptDataset::load(&run_dir.join(&entry.path))
}

/// First element of a stored stage tuple.
fn stored<A: DeserializeOwned>(cache: &StageCache, stage: &str, index: usize) -> Result<A> {
    let v: serde_json::Value = cache.load(stage)?;
    let item = v
        .get(index)
        .cloned()
        .ok_or_else(|| Error::Config(format!("checkpoint {stage} lacks element {index}")))?;
    Ok(serde_json::from_value(item)?)
}

/// Loads a registered model from its checkpoints without training anything.
pub fn load_model(run_dir: &Path, entry: &ModelEntry) -> Result<TrainedModel> {
    let cache = StageCache::new(run_dir.join(entry.seed.to_string()));
    let stage = |i: usize| -> Result<&str> {
        entry
            .stages
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("model {} lists too few stages", entry.id)))
    };
    Ok(match entry.family {
        Family::BlackBox => TrainedModel::BlackBox {
            model: stored(&cache, stage(0)?, 0)?,
            probe: stored(&cache, stage(1)?, 0)?,
        },
        Family::CbmJoint | Family::CbmIndependent | Family::CbmSequential => TrainedModel::Cbm {
            model: stored(&cache, stage(0)?, 0)?,
        },
        Family::PostHocCbm | Family::PostHocCbmResidual => TrainedModel::PostHoc {
            black_box: stored(&cache, stage(0)?, 0)?,
            cbm: stored(&cache, stage(1)?, 0)?,
        },
        Family::FinetunedIntervenability => TrainedModel::FinetunedIntervenability {
            model: stored(&cache, stage(0)?, 0)?,
            probe: stored(&cache, stage(1)?, 0)?,
        },
        Family::FinetunedMultitask => TrainedModel::FinetunedMultitask {
            model: stored(&cache, stage(0)?, 0)?,
            probe: stored(&cache, stage(0)?, 1)?,
        },
        Family::FinetunedAppend => TrainedModel::FinetunedAppend {
            black_box: stored(&cache, stage(0)?, 0)?,
            head: stored(&cache, stage(1)?, 0)?,
        },
    })
}

/// Run directory that holds `registry.json`: either `path` itself or its only child run.
pub fn find_run_dir(path: &Path) -> Result<PathBuf> {
    if path.join(REGISTRY_FILE).exists() {
        return Ok(path.to_path_buf());
    }
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(path)? {
        let p = entry?.path();
        if p.join(REGISTRY_FILE).exists() {
            runs.push(p);
        }
    }
    match runs.len() {
        1 => Ok(runs.pop().expect("one run")),
        0 => Err(Error::Config(format!("no {REGISTRY_FILE} under {}", path.display()))),
        _ => Err(Error::Config(format!("several runs under {}; pass one run directory", path.display()))),
    }
}
