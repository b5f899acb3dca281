use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Mechanism;
use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::interventions::{DistanceKind, InterventionConfig, StrategyKind};
use crate::models::{CbmMode, ProbeLinearity, TrainHyper};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Model families the pipeline can train and evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BlackBox,
    CbmJoint,
    CbmIndependent,
    CbmSequential,
    PostHocCbm,
    PostHocCbmResidual,
    FinetunedIntervenability,
    FinetunedMultitask,
    FinetunedAppend,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::BlackBox,
        Family::CbmJoint,
        Family::CbmIndependent,
        Family::CbmSequential,
        Family::PostHocCbm,
        Family::PostHocCbmResidual,
        Family::FinetunedIntervenability,
        Family::FinetunedMultitask,
        Family::FinetunedAppend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BlackBox => "black_box",
            Family::CbmJoint => "cbm_joint",
            Family::CbmIndependent => "cbm_independent",
            Family::CbmSequential => "cbm_sequential",
            Family::PostHocCbm => "post_hoc_cbm",
            Family::PostHocCbmResidual => "post_hoc_cbm_residual",
            Family::FinetunedIntervenability => "finetuned_intervenability",
            Family::FinetunedMultitask => "finetuned_multitask",
            Family::FinetunedAppend => "finetuned_append",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn cbm_mode(self) -> Option<CbmMode> {
        match self {
            Family::CbmJoint => Some(CbmMode::Joint),
            Family::CbmIndependent => Some(CbmMode::Independent),
            Family::CbmSequential => Some(CbmMode::Sequential),
            _ => None,
        }
    }

    /// Whether training this family needs the black box.
    pub fn needs_black_box(self) -> bool {
        self.cbm_mode().is_none()
    }
}

/// Dataset shape; the generator seed comes from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    #[serde(default)]
    pub j: usize,
    pub mechanism: Mechanism,
}

impl DatasetSpec {
    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n: self.n,
            p: self.p,
            k: self.k,
            j: self.j,
            seed,
            mechanism: self.mechanism,
        }
    }

    fn from_gen(g: GenConfig) -> Self {
        Self {
            n: g.n,
            p: g.p,
            k: g.k,
            j: g.j,
            mechanism: g.mechanism,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSet {
    #[serde(default = "TrainHyper::black_box")]
    pub black_box: TrainHyper,
    #[serde(default = "TrainHyper::cbm")]
    pub cbm: TrainHyper,
    #[serde(default = "TrainHyper::probe")]
    pub probe: TrainHyper,
    #[serde(default = "TrainHyper::posthoc_head")]
    pub posthoc_head: TrainHyper,
}

impl Default for HyperSet {
    fn default() -> Self {
        Self {
            black_box: TrainHyper::black_box(),
            cbm: TrainHyper::cbm(),
            probe: TrainHyper::probe(),
            posthoc_head: TrainHyper::posthoc_head(),
        }
    }
}

/// Values swept by the ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub lambdas: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub probes: Vec<ProbeLinearity>,
    pub distances: Vec<DistanceKind>,
    /// Shares of the validation split.
    pub valsizes: Vec<f64>,
    pub cbm_modes: Vec<CbmMode>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            lambdas: vec![0.2, 0.4, 0.8, 1.6, 3.2],
            strategies: vec![StrategyKind::RandomSubset, StrategyKind::Uncertainty],
            probes: vec![ProbeLinearity::Linear, ProbeLinearity::Nonlinear],
            distances: vec![DistanceKind::Euclidean, DistanceKind::Cosine],
            valsizes: vec![0.005, 0.01, 0.05, 0.1, 0.5, 1.0],
            cbm_modes: vec![CbmMode::Joint, CbmMode::Independent, CbmMode::Sequential],
        }
    }
}

fn default_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_alpha() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub hyper: HyperSet,
    #[serde(default)]
    pub intervention: InterventionConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default = "default_alpha")]
    pub cbm_alpha: f64,
    #[serde(default = "default_probe")]
    pub probe: ProbeLinearity,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    /// Curve grid; defaults to `{0, ⌈K/5⌉, …, K}`.
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_probe() -> ProbeLinearity {
    ProbeLinearity::Linear
}

fn default_strategy() -> StrategyKind {
    StrategyKind::RandomSubset
}

/// The part of the config that determines trained artifacts.
#[derive(Serialize)]
struct ArtifactKey<'a> {
    schema_version: u32,
    dataset: &'a DatasetSpec,
    hyper: &'a HyperSet,
    intervention: &'a InterventionConfig,
    finetune: &'a FinetuneConfig,
    cbm_alpha: f64,
    probe: ProbeLinearity,
    strategy: StrategyKind,
}

impl ExperimentConfig {
    fn with_dataset(gen: GenConfig, seeds: Vec<u64>) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            dataset: DatasetSpec::from_gen(gen),
            families: default_families(),
            hyper: HyperSet::default(),
            intervention: InterventionConfig::default(),
            finetune: FinetuneConfig::default(),
            cbm_alpha: default_alpha(),
            probe: default_probe(),
            strategy: default_strategy(),
            ks: None,
            grids: Grids::default(),
            seeds,
            output_dir: default_output(),
        }
    }

    /// Desk-scale bottleneck data over three seeds.
    pub fn desk() -> Self {
        Self::with_dataset(GenConfig::desk_bottleneck(0), vec![0, 1, 2])
    }

    pub fn desk_incomplete() -> Self {
        Self::with_dataset(GenConfig::desk_incomplete(0), vec![0, 1, 2])
    }

    /// Full-size bottleneck data over ten seeds.
    pub fn full() -> Self {
        Self::with_dataset(GenConfig::full_bottleneck(0), default_seeds())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to toml")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dataset.gen_config(0).validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("family list is empty".into()));
        }
        for h in [&self.hyper.black_box, &self.hyper.cbm, &self.hyper.probe, &self.hyper.posthoc_head] {
            h.validate()?;
        }
        self.intervention.validate()?;
        self.finetune.validate()?;
        if !(self.cbm_alpha >= 0.0 && self.cbm_alpha.is_finite()) {
            return Err(Error::Config(format!("cbm_alpha must be non-negative, got {}", self.cbm_alpha)));
        }
        let ks = self.k_grid();
        if ks.windows(2).any(|w| w[0] > w[1]) || ks.iter().any(|&k| k > self.dataset.k) {
            return Err(Error::Config(format!("ks must be sorted within [0, {}]", self.dataset.k)));
        }
        for &l in &self.grids.lambdas {
            InterventionConfig {
                lambda: l,
                ..self.intervention
            }
            .validate()?;
        }
        if self.grids.valsizes.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Config("valsizes must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn k_grid(&self) -> Vec<usize> {
        self.ks.clone().unwrap_or_else(|| crate::metrics::default_k_grid(self.dataset.k))
    }

    /// Hex SHA-256 over the fields that determine trained artifacts. Seeds,
    /// families, grids and the output directory are excluded so runs that
    /// differ only in those share checkpoints.
    pub fn hash(&self) -> String {
        let key = ArtifactKey {
            schema_version: self.schema_version,
            dataset: &self.dataset,
            hyper: &self.hyper,
            intervention: &self.intervention,
            finetune: &self.finetune,
            cbm_alpha: self.cbm_alpha,
            probe: self.probe,
            strategy: self.strategy,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("key serialises")))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.hash()[..16])
    }

    /// Hyperparameters a family's checkpoints were trained under, for registry metadata.
    pub fn family_hyperparameters(&self, family: Family) -> serde_json::Value {
        let h = &self.hyper;
        match family {
            Family::BlackBox => serde_json::json!({
                "black_box": h.black_box,
                "probe": h.probe,
                "probe_linearity": self.probe,
                "intervention": self.intervention,
            }),
            Family::CbmJoint | Family::CbmIndependent | Family::CbmSequential => serde_json::json!({
                "cbm": h.cbm,
                "cbm_alpha": self.cbm_alpha,
                "mode": family.cbm_mode(),
            }),
            Family::PostHocCbm | Family::PostHocCbmResidual => serde_json::json!({
                "black_box": h.black_box,
                "probe": h.probe,
                "posthoc_head": h.posthoc_head,
                "residual": family == Family::PostHocCbmResidual,
            }),
            Family::FinetunedIntervenability | Family::FinetunedMultitask | Family::FinetunedAppend => serde_json::json!({
                "black_box": h.black_box,
                "probe": h.probe,
                "probe_linearity": self.probe,
                "finetune": self.finetune,
                "strategy": self.strategy,
                "intervention": self.intervention,
            }),
        }
    }
}
