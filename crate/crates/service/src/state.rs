use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use intervene_core::data::ConceptDataset;
use intervene_core::harness::{load_dataset, load_model, ModelEntry, Registry, TrainedModel};
use intervene_core::interventions::InterventionConfig;
use intervene_core::Result;

/// A registered model loaded for serving.
pub struct LoadedModel {
    pub entry: ModelEntry,
    pub model: TrainedModel,
}

/// Everything the service reads; immutable once loaded.
pub struct AppState {
    pub run_dir: PathBuf,
    pub registry: Registry,
    pub models: BTreeMap<String, LoadedModel>,
    pub datasets: BTreeMap<String, ConceptDataset<f64>>,
    /// Intervention settings requests start from before applying overrides.
    pub defaults: InterventionConfig,
}

impl AppState {
    /// Loads the registry of `run_dir` together with every model and dataset it lists.
    pub fn load(run_dir: &Path) -> Result<Self> {
        let registry = Registry::load(run_dir)?;
        let mut datasets = BTreeMap::new();
        for d in &registry.datasets {
            datasets.insert(d.id.clone(), load_dataset(run_dir, d)?);
        }
        let mut models = BTreeMap::new();
        for m in &registry.models {
            log::info!("loading {}", m.id);
            models.insert(
                m.id.clone(),
                LoadedModel {
                    entry: m.clone(),
                    model: load_model(run_dir, m)?,
                },
            );
        }
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            registry,
            models,
            datasets,
            defaults: InterventionConfig::default(),
        })
    }

    pub fn empty() -> Self {
        Self {
            run_dir: PathBuf::new(),
            registry: Registry::empty(),
            models: BTreeMap::new(),
            datasets: BTreeMap::new(),
            defaults: InterventionConfig::default(),
        }
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}
