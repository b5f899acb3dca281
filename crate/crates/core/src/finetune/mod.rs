//! Fine-tuning a trained black box: for intervenability, multitask with a
//! probe, and with concepts appended to the activations.

mod append;
mod intervenability;
mod multitask;
mod variant;

pub use append::{finetune_append, mask_concepts, AppendHead, AppendModel, UNKNOWN_CONCEPT};
pub use intervenability::finetune_intervenability;
pub use multitask::{finetune_multitask, MultitaskLog};
pub use variant::{intervene_on_finetuned, FinetunedVariant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interventions::{InterventionConfig, StrategyKind, StrategySpec};
use crate::models::TrainHyper;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub hyper: TrainHyper,
    /// Strategy used to sample `c′` during fine-tuning.
    pub pi: StrategyKind,
    /// Share of the K concepts intervened on per instance.
    pub pi_fraction: f64,
    pub intervention: InterventionConfig,
    /// Concept-loss weight of the multitask objective.
    pub alpha: f64,
    /// Probability of masking a concept to ½ during append fine-tuning.
    pub mask_prob: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            hyper: TrainHyper::finetune(),
            pi: StrategyKind::RandomSubset,
            pi_fraction: 0.5,
            intervention: InterventionConfig::default(),
            alpha: 1.0,
            mask_prob: 0.5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.intervention.validate()?;
        if !(0.0..=1.0).contains(&self.pi_fraction) {
            return Err(Error::Config(format!("pi_fraction {} outside [0, 1]", self.pi_fraction)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} outside [0, 1]", self.mask_prob)));
        }
        Ok(())
    }

    /// Strategy with `k = round(pi_fraction · K)`.
    pub fn strategy(&self, num_concepts: usize) -> StrategySpec {
        let k = (self.pi_fraction * num_concepts as f64).round() as usize;
        StrategySpec {
            kind: self.pi,
            k: k.min(num_concepts),
            eps_unc: crate::interventions::DEFAULT_EPS_UNC,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Where a fine-tuned checkpoint came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_model_id: String,
    pub method: String,
    pub pi: StrategySpec,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(base_model_id: impl Into<String>, method: &str, cfg: &FinetuneConfig, num_concepts: usize, seed: u64) -> Self {
        Self {
            base_model_id: base_model_id.into(),
            method: method.into(),
            pi: cfg.strategy(num_concepts),
            config_hash: cfg.hash(),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_strategy_takes_half_the_concepts() {
        let cfg = FinetuneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.strategy(10).k, 5);
        assert_eq!(cfg.strategy(30).k, 15);
    }

    #[test]
    fn hash_tracks_config() {
        let a = FinetuneConfig::default();
        let b = FinetuneConfig { alpha: 0.5, ..a };
        assert_eq!(a.hash(), FinetuneConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
