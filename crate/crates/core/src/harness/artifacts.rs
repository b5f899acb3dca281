use serde::{Deserialize, Serialize};

use super::stages::{stage_seed, StageCache};
use super::{ExperimentConfig, Family};
use crate::data::{ConceptDataset, DataView, Split};
use crate::error::{Error, Result};
use crate::finetune::{
    finetune_append, finetune_intervenability, finetune_multitask, AppendHead, AppendModel, FinetuneConfig, FinetunedVariant,
    MultitaskLog, Provenance,
};
use crate::neural::{LayeredNet, SeedLineage, Slice};
use crate::interventions::{Intervenable, PostHocModel, ProbedModel};
use crate::models::{
    train_black_box, train_cbm, train_posthoc_cbm, train_probe, BlackBoxModel, CbmLog, CbmMode, CbmModel, PostHocCbm, PostHocLog,
    ProbeLinearity, ProbeModel, TrainLog,
};

/// A trained model together with whatever it needs to accept interventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainedModel {
    BlackBox { model: BlackBoxModel<f64>, probe: ProbeModel<f64> },
    Cbm { model: CbmModel<f64> },
    PostHoc { black_box: BlackBoxModel<f64>, cbm: PostHocCbm<f64> },
    FinetunedIntervenability { model: BlackBoxModel<f64>, probe: ProbeModel<f64> },
    FinetunedMultitask { model: BlackBoxModel<f64>, probe: ProbeModel<f64> },
    FinetunedAppend { black_box: BlackBoxModel<f64>, head: AppendHead<f64> },
}

impl TrainedModel {
    /// Runs `f` on the model's intervention interface.
    pub fn with_intervenable<R>(&self, f: impl FnOnce(&dyn Intervenable<f64>) -> R) -> R {
        match self {
            TrainedModel::BlackBox { model, probe } => f(&ProbedModel { model, probe }),
            TrainedModel::Cbm { model } => f(model),
            TrainedModel::PostHoc { black_box, cbm } => f(&PostHocModel { black_box, cbm }),
            TrainedModel::FinetunedIntervenability { model, probe } => {
                f(&FinetunedVariant::Intervenability(ProbedModel { model, probe }))
            }
            TrainedModel::FinetunedMultitask { model, probe } => f(&FinetunedVariant::Multitask(ProbedModel { model, probe })),
            TrainedModel::FinetunedAppend { black_box, head } => f(&FinetunedVariant::Append(AppendModel { black_box, head })),
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.with_intervenable(|m| m.num_concepts())
    }

    /// Whether the model reads out concepts before any intervention.
    pub fn has_concept_readout(&self) -> bool {
        !matches!(self, TrainedModel::FinetunedAppend { .. })
    }
}

/// Lazily trained, checkpointed artifacts of one seed.
pub struct SeedArtifacts<'c> {
    pub cfg: &'c ExperimentConfig,
    pub seed: u64,
    pub cache: StageCache,
    pub dataset: ConceptDataset<f64>,
}

fn finetune_cfg(cfg: &ExperimentConfig) -> FinetuneConfig {
    FinetuneConfig {
        intervention: cfg.intervention,
        pi: cfg.strategy,
        ..cfg.finetune
    }
}

fn probe_stage(linearity: ProbeLinearity) -> &'static str {
    match linearity {
        ProbeLinearity::Linear => "probe",
        ProbeLinearity::Nonlinear => "probe_nonlinear",
    }
}

impl<'c> SeedArtifacts<'c> {
    pub fn open(cfg: &'c ExperimentConfig, seed: u64) -> Result<Self> {
        let cache = StageCache::for_seed(cfg, seed);
        let dataset = cache.dataset(cfg, seed)?;
        Ok(Self {
            cfg,
            seed,
            cache,
            dataset,
        })
    }

    pub fn view(&self, split: Split) -> DataView<'_, f64> {
        self.dataset.view(split)
    }

    fn export(&self, stage: &str, net: &LayeredNet<f64>, slice: Option<Slice>, family: Family) -> Result<()> {
        let seeds = SeedLineage {
            dataset_seed: Some(self.seed),
            model_seed: Some(stage_seed(self.seed, stage)),
            derived: vec![("config".into(), u64::from_str_radix(&self.cfg.hash()[..16], 16).expect("hex"))],
        };
        let meta = serde_json::json!({
            "stage": stage,
            "family": family,
            "hyperparameters": self.cfg.family_hyperparameters(family),
        });
        self.cache.export_checkpoint(stage, net, slice, seeds, meta)
    }

    pub fn black_box(&self) -> Result<BlackBoxModel<f64>> {
        let (m, _): (BlackBoxModel<f64>, TrainLog) = self.cache.get_or_run("black_box", || {
            train_black_box(&self.view(Split::Train), &self.cfg.hyper.black_box, stage_seed(self.seed, "black_box"))
        })?;
        self.export("black_box", &m.net, Some(m.slice), Family::BlackBox)?;
        Ok(m)
    }

    pub fn probe(&self, linearity: ProbeLinearity) -> Result<ProbeModel<f64>> {
        let stage = probe_stage(linearity);
        let bb = self.black_box()?;
        let (p, _): (ProbeModel<f64>, TrainLog) = self.cache.get_or_run(stage, || {
            train_probe(&bb, &self.view(Split::Validation), linearity, &self.cfg.hyper.probe, stage_seed(self.seed, stage))
        })?;
        Ok(p)
    }

    /// Probe trained on a share of the validation split, as in the validation-size sweep.
    pub fn probe_on(&self, stage: &str, val: &DataView<'_, f64>) -> Result<ProbeModel<f64>> {
        let bb = self.black_box()?;
        let (p, _): (ProbeModel<f64>, TrainLog) = self.cache.get_or_run(stage, || {
            train_probe(&bb, val, self.cfg.probe, &self.cfg.hyper.probe, stage_seed(self.seed, stage))
        })?;
        Ok(p)
    }

    pub fn cbm(&self, mode: CbmMode) -> Result<CbmModel<f64>> {
        let stage = match mode {
            CbmMode::Joint => "cbm_joint",
            CbmMode::Independent => "cbm_independent",
            CbmMode::Sequential => "cbm_sequential",
        };
        let (m, _): (CbmModel<f64>, CbmLog) = self.cache.get_or_run(stage, || {
            train_cbm(&self.view(Split::Train), mode, self.cfg.cbm_alpha, &self.cfg.hyper.cbm, stage_seed(self.seed, stage))
        })?;
        let family = match mode {
            CbmMode::Joint => Family::CbmJoint,
            CbmMode::Independent => Family::CbmIndependent,
            CbmMode::Sequential => Family::CbmSequential,
        };
        self.export(stage, &m.net, Some(m.slice), family)?;
        Ok(m)
    }

    pub fn posthoc(&self, with_residual: bool) -> Result<PostHocCbm<f64>> {
        let stage = if with_residual { "post_hoc_cbm_residual" } else { "post_hoc_cbm" };
        let bb = self.black_box()?;
        let (m, _): (PostHocCbm<f64>, PostHocLog) = self.cache.get_or_run(stage, || {
            train_posthoc_cbm(
                &bb,
                &self.view(Split::Validation),
                &self.cfg.hyper.probe,
                &self.cfg.hyper.posthoc_head,
                with_residual,
                stage_seed(self.seed, stage),
            )
        })?;
        Ok(m)
    }

    fn provenance(&self, method: &str, ft: &FinetuneConfig) -> Provenance {
        Provenance::new(
            format!("{}/{}/black_box", &self.cfg.hash()[..16], self.seed),
            method,
            ft,
            self.dataset.num_concepts(),
            stage_seed(self.seed, method),
        )
    }

    /// Intervenability fine-tuning under an explicit config, probe and validation rows.
    pub fn finetuned_intervenability_with(
        &self,
        stage: &str,
        probe: &ProbeModel<f64>,
        val: &DataView<'_, f64>,
        ft: &FinetuneConfig,
    ) -> Result<BlackBoxModel<f64>> {
        let bb = self.black_box()?;
        let (m, _, _): (BlackBoxModel<f64>, TrainLog, Provenance) = self.cache.get_or_run(stage, || {
            let prov = self.provenance(stage, ft);
            let (m, log) = finetune_intervenability(&bb, probe, val, ft, prov.seed)?;
            Ok((m, log, prov))
        })?;
        self.export(stage, &m.net, Some(m.slice), Family::FinetunedIntervenability)?;
        Ok(m)
    }

    pub fn finetuned_intervenability(&self) -> Result<BlackBoxModel<f64>> {
        let probe = self.probe(self.cfg.probe)?;
        self.finetuned_intervenability_with("ft_intervenability", &probe, &self.view(Split::Validation), &finetune_cfg(self.cfg))
    }

    pub fn finetuned_multitask(&self) -> Result<(BlackBoxModel<f64>, ProbeModel<f64>)> {
        let bb = self.black_box()?;
        let (m, p, _, _): (BlackBoxModel<f64>, ProbeModel<f64>, MultitaskLog, Provenance) =
            self.cache.get_or_run("ft_multitask", || {
                let ft = finetune_cfg(self.cfg);
                let prov = self.provenance("ft_multitask", &ft);
                let (m, p, log) = finetune_multitask(&bb, &self.view(Split::Validation), &ft, prov.seed)?;
                Ok((m, p, log, prov))
            })?;
        self.export("ft_multitask", &m.net, Some(m.slice), Family::FinetunedMultitask)?;
        Ok((m, p))
    }

    pub fn finetuned_append(&self) -> Result<AppendHead<f64>> {
        let bb = self.black_box()?;
        let (h, _, _): (AppendHead<f64>, TrainLog, Provenance) = self.cache.get_or_run("ft_append", || {
            let ft = finetune_cfg(self.cfg);
            let prov = self.provenance("ft_append", &ft);
            let (h, log) = finetune_append(&bb, &self.view(Split::Validation), &ft, prov.seed)?;
            Ok((h, log, prov))
        })?;
        Ok(h)
    }

    /// Trains (or loads) one family under the configured defaults.
    pub fn family(&self, family: Family) -> Result<TrainedModel> {
        Ok(match family {
            Family::BlackBox => TrainedModel::BlackBox {
                model: self.black_box()?,
                probe: self.probe(self.cfg.probe)?,
            },
            Family::CbmJoint | Family::CbmIndependent | Family::CbmSequential => TrainedModel::Cbm {
                model: self.cbm(family.cbm_mode().expect("cbm family"))?,
            },
            Family::PostHocCbm | Family::PostHocCbmResidual => TrainedModel::PostHoc {
                black_box: self.black_box()?,
                cbm: self.posthoc(family == Family::PostHocCbmResidual)?,
            },
            Family::FinetunedIntervenability => TrainedModel::FinetunedIntervenability {
                model: self.finetuned_intervenability()?,
                probe: self.probe(self.cfg.probe)?,
            },
            Family::FinetunedMultitask => {
                let (model, probe) = self.finetuned_multitask()?;
                TrainedModel::FinetunedMultitask { model, probe }
            }
            Family::FinetunedAppend => TrainedModel::FinetunedAppend {
                black_box: self.black_box()?,
                head: self.finetuned_append()?,
            },
        })
    }

    /// Stored family model, without training.
    pub fn stored_family(&self, family: Family) -> Result<TrainedModel> {
        let missing = |stage: &str| Error::Config(format!("seed {} has no {stage} checkpoint", self.seed));
        for stage in family_stages(family, self.cfg.probe) {
            if !self.cache.has(stage) {
                return Err(missing(stage));
            }
        }
        self.family(family)
    }
}

/// Checkpoint stages a family is assembled from.
pub fn family_stages(family: Family, probe: ProbeLinearity) -> Vec<&'static str> {
    let p = probe_stage(probe);
    match family {
        Family::BlackBox => vec!["black_box", p],
        Family::CbmJoint => vec!["cbm_joint"],
        Family::CbmIndependent => vec!["cbm_independent"],
        Family::CbmSequential => vec!["cbm_sequential"],
        Family::PostHocCbm => vec!["black_box", "post_hoc_cbm"],
        Family::PostHocCbmResidual => vec!["black_box", "post_hoc_cbm_residual"],
        Family::FinetunedIntervenability => vec!["ft_intervenability", p],
        Family::FinetunedMultitask => vec!["ft_multitask"],
        Family::FinetunedAppend => vec!["black_box", "ft_append"],
    }
}
