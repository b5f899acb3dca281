use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{SeedArtifacts, TrainedModel};
use super::{ExperimentConfig, Family};
use crate::data::{DataView, Split};
use crate::error::{Error, Result};
use crate::interventions::{edit_representations, intervenability, Intervenable, InterventionConfig, StrategySpec};
use crate::linalg::Matrix;
use crate::metrics::{aupr, auroc, brier, intervention_curve, CurveRun};
use crate::models::{CbmMode, ProbeModel};
use crate::neural::bce;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Label of the default (non-ablation) setting.
pub const DEFAULT_LABEL: &str = "default";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auroc: f64,
    pub aupr: f64,
    pub brier: f64,
}

impl Scores {
    pub fn target(probs: &[f64], labels: &[f64]) -> Result<Self> {
        Ok(Self {
            auroc: auroc(probs, labels)?,
            aupr: aupr(probs, labels)?,
            brier: brier(probs, labels)?,
        })
    }

    /// Per-concept scores averaged over concepts.
    pub fn concepts(c_hat: &Matrix<f64>, c: &Matrix<f64>) -> Result<Self> {
        c_hat.same_shape(c, "concept scores")?;
        let k = c.cols() as f64;
        let mut acc = Self {
            auroc: 0.0,
            aupr: 0.0,
            brier: 0.0,
        };
        for j in 0..c.cols() {
            let s = Self::target(&c_hat.column(j), &c.column(j))?;
            acc.auroc += s.auroc / k;
            acc.aupr += s.aupr / k;
            acc.brier += s.brier / k;
        }
        Ok(acc)
    }
}

/// Test-set performance without interventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub seed: u64,
    pub family: String,
    pub concept: Option<Scores>,
    pub target: Scores,
    /// Mean target-loss reduction under the configured strategy at `k = round(K/2)`.
    pub intervenability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub label: String,
    pub family: String,
    pub seed: u64,
    pub k: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub brier: f64,
}

/// Median over one test batch of the concept loss left after editing to the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditStat {
    pub label: String,
    pub seed: u64,
    pub median_concept_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub table: Vec<TableRow>,
    pub curves: Vec<CurveRow>,
    pub edit_stats: Vec<EditStat>,
}

impl SeedResult {
    fn extend(&mut self, other: SeedResult) {
        self.table.extend(other.table);
        self.curves.extend(other.curves);
        self.edit_stats.extend(other.edit_stats);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub schema_version: u32,
    pub config_hash: String,
    /// `pipeline` or `ablation:<axis>`.
    pub kind: String,
    pub seeds: Vec<u64>,
    pub table: Vec<TableRow>,
    pub curves: Vec<CurveRow>,
    pub edit_stats: Vec<EditStat>,
    pub failures: Vec<StageFailure>,
}

impl ResultsBundle {
    pub fn empty(kind: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            schema_version: BUNDLE_SCHEMA_VERSION,
            config_hash: config_hash.into(),
            kind: kind.into(),
            seeds: Vec::new(),
            table: Vec::new(),
            curves: Vec::new(),
            edit_stats: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Per-seed curve rows of one family and label, ordered by seed then k.
    pub fn curve(&self, label: &str, family: Family) -> Vec<&CurveRow> {
        let mut rows: Vec<&CurveRow> = self.curves.iter().filter(|r| r.label == label && r.family == family.name()).collect();
        rows.sort_by_key(|r| (r.seed, r.k));
        rows
    }

    /// AUROC at the largest k minus AUROC at the smallest, per seed.
    pub fn curve_gains(&self, label: &str, family: Family) -> Vec<(u64, f64)> {
        let rows = self.curve(label, family);
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
            .into_iter()
            .filter_map(|s| {
                let mine: Vec<&&CurveRow> = rows.iter().filter(|r| r.seed == s).collect();
                Some((s, mine.last()?.auroc - mine.first()?.auroc))
            })
            .collect()
    }

    pub fn table_row(&self, seed: u64, family: Family) -> Option<&TableRow> {
        self.table.iter().find(|r| r.seed == seed && r.family == family.name())
    }
}

fn curve_rows(
    label: &str,
    family: Family,
    seed: u64,
    model: &dyn Intervenable<f64>,
    test: DataView<'_, f64>,
    strategy: &StrategySpec,
    ks: &[usize],
    config: &InterventionConfig,
) -> Result<Vec<CurveRow>> {
    let points = intervention_curve(&[CurveRun { seed, model, test }], strategy, ks, config)?;
    Ok(points
        .into_iter()
        .map(|p| {
            let s = p.per_seed[0];
            CurveRow {
                label: label.into(),
                family: family.name().into(),
                seed,
                k: p.k,
                auroc: s.auroc,
                aupr: s.aupr,
                brier: s.brier,
            }
        })
        .collect())
}

fn strategy_spec(cfg: &ExperimentConfig) -> StrategySpec {
    StrategySpec {
        kind: cfg.strategy,
        k: 0,
        eps_unc: crate::interventions::DEFAULT_EPS_UNC,
    }
}

/// Table row and default curve of one trained family.
pub fn evaluate_family(art: &SeedArtifacts<'_>, family: Family, model: &TrainedModel) -> Result<SeedResult> {
    let cfg = art.cfg;
    let test = art.view(Split::Test);
    let (x, c, y) = (test.x(), test.c(), test.y());
    let spec = strategy_spec(cfg);
    model.with_intervenable(|m| {
        let base = m.baseline(&x)?;
        let half = (m.num_concepts() as f64 / 2.0).round() as usize;
        let row = TableRow {
            seed: art.seed,
            family: family.name().into(),
            concept: if model.has_concept_readout() { Some(Scores::concepts(&base.c_hat, &c)?) } else { None },
            target: Scores::target(&base.y, &y)?,
            intervenability: intervenability(
                m,
                &test,
                &spec.with_k(half),
                &cfg.intervention,
                1,
                super::stages::stage_seed(art.seed, "intervenability"),
            )?,
        };
        let curves = curve_rows(DEFAULT_LABEL, family, art.seed, m, test.clone(), &spec, &cfg.k_grid(), &cfg.intervention)?;
        Ok(SeedResult {
            table: vec![row],
            curves,
            edit_stats: Vec::new(),
        })
    })
}

fn run_seeds<F>(cfg: &ExperimentConfig, kind: String, per_seed: F) -> Result<ResultsBundle>
where
    F: Fn(&SeedArtifacts<'_>, &mut Vec<StageFailure>) -> SeedResult + Sync,
{
    cfg.validate()?;
    let outcomes: Vec<(SeedResult, Vec<StageFailure>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut failures = Vec::new();
            let result = match SeedArtifacts::open(cfg, seed) {
                Ok(art) => per_seed(&art, &mut failures),
                Err(e) => {
                    failures.push(StageFailure {
                        seed,
                        stage: "data".into(),
                        message: e.to_string(),
                    });
                    SeedResult::default()
                }
            };
            (result, failures)
        })
        .collect();
    let mut bundle = ResultsBundle::empty(kind, cfg.hash());
    bundle.seeds = cfg.seeds.clone();
    for (r, f) in outcomes {
        bundle.table.extend(r.table);
        bundle.curves.extend(r.curves);
        bundle.edit_stats.extend(r.edit_stats);
        bundle.failures.extend(f);
    }
    Ok(bundle)
}

/// Records a failed stage and carries on with the seed's remaining work.
fn attempt(seed: u64, stage: &str, failures: &mut Vec<StageFailure>, out: &mut SeedResult, f: impl FnOnce() -> Result<SeedResult>) {
    match f() {
        Ok(r) => out.extend(r),
        Err(e) => {
            log::warn!("seed {seed}: {stage} failed: {e}");
            failures.push(StageFailure {
                seed,
                stage: stage.into(),
                message: e.to_string(),
            });
        }
    }
}

/// Trains every configured family for every seed, evaluates it on the test
/// split and writes the model registry. Seeds run in parallel; a failing
/// stage is recorded and the remaining stages and seeds still run.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    let bundle = run_seeds(cfg, "pipeline".into(), |art, failures| {
        let mut out = SeedResult::default();
        for &family in &cfg.families {
            attempt(art.seed, family.name(), failures, &mut out, || {
                let model = art.family(family)?;
                evaluate_family(art, family, &model)
            });
        }
        out
    })?;
    super::registry::write_registry_with(cfg, Some(&bundle))?;
    Ok(bundle)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Lambda,
    Strategy,
    Probe,
    Distance,
    Valsize,
    CbmMode,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Lambda,
        AblationAxis::Strategy,
        AblationAxis::Probe,
        AblationAxis::Distance,
        AblationAxis::Valsize,
        AblationAxis::CbmMode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Lambda => "lambda",
            AblationAxis::Strategy => "strategy",
            AblationAxis::Probe => "probe",
            AblationAxis::Distance => "distance",
            AblationAxis::Valsize => "valsize",
            AblationAxis::CbmMode => "cbm_mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Median concept loss after editing the first test batch towards the ground truth.
pub fn edit_stat(
    label: &str,
    art: &SeedArtifacts<'_>,
    model: &crate::models::BlackBoxModel<f64>,
    probe: &ProbeModel<f64>,
    config: &InterventionConfig,
) -> Result<EditStat> {
    let test = art.view(Split::Test).head(config.batch_size);
    let z = model.representations(&test.x())?;
    let c = test.c();
    let out = edit_representations(&z, &c, probe, config)?;
    let p = probe.predict(&out.z_edited)?;
    let mut losses: Vec<f64> = (0..p.rows())
        .map(|i| p.row(i).iter().zip(c.row(i)).map(|(&a, &b)| bce(a, b)).sum())
        .collect();
    if losses.is_empty() {
        return Err(Error::Empty("edit batch"));
    }
    losses.sort_by(f64::total_cmp);
    let n = losses.len();
    let median = if n % 2 == 1 { losses[n / 2] } else { 0.5 * (losses[n / 2 - 1] + losses[n / 2]) };
    Ok(EditStat {
        label: label.into(),
        seed: art.seed,
        median_concept_loss: median,
    })
}

fn ablate_seed(cfg: &ExperimentConfig, axis: AblationAxis, art: &SeedArtifacts<'_>, failures: &mut Vec<StageFailure>) -> SeedResult {
    let mut out = SeedResult::default();
    let seed = art.seed;
    let ks = cfg.k_grid();
    let spec = strategy_spec(cfg);
    let test = || art.view(Split::Test);
    let probed = |label: &str, family: Family, model: &crate::models::BlackBoxModel<f64>, probe: &ProbeModel<f64>, spec: &StrategySpec, ic: &InterventionConfig| {
        let m = crate::interventions::ProbedModel::new(model, probe)?;
        curve_rows(label, family, seed, &m, test(), spec, &ks, ic)
    };
    match axis {
        AblationAxis::Lambda => {
            for &lambda in &cfg.grids.lambdas {
                let label = format!("lambda={lambda}");
                let ic = InterventionConfig {
                    lambda,
                    ..cfg.intervention
                };
                attempt(seed, &label, failures, &mut out, || {
                    let (bb, probe) = (art.black_box()?, art.probe(cfg.probe)?);
                    let curves = probed(&label, Family::BlackBox, &bb, &probe, &spec, &ic)?;
                    Ok(SeedResult {
                        table: Vec::new(),
                        curves,
                        edit_stats: vec![edit_stat(&label, art, &bb, &probe, &ic)?],
                    })
                });
            }
        }
        AblationAxis::Strategy => {
            for &kind in &cfg.grids.strategies {
                let label = format!("strategy={}", snake(&kind));
                attempt(seed, &label, failures, &mut out, || {
                    let (bb, probe) = (art.black_box()?, art.probe(cfg.probe)?);
                    let s = StrategySpec { kind, ..spec };
                    Ok(SeedResult {
                        curves: probed(&label, Family::BlackBox, &bb, &probe, &s, &cfg.intervention)?,
                        ..Default::default()
                    })
                });
            }
        }
        AblationAxis::Probe => {
            for &lin in &cfg.grids.probes {
                let label = format!("probe={}", snake(&lin));
                attempt(seed, &label, failures, &mut out, || {
                    let (bb, probe) = (art.black_box()?, art.probe(lin)?);
                    Ok(SeedResult {
                        curves: probed(&label, Family::BlackBox, &bb, &probe, &spec, &cfg.intervention)?,
                        ..Default::default()
                    })
                });
            }
        }
        AblationAxis::Distance => {
            for &distance in &cfg.grids.distances {
                let label = format!("distance={}", snake(&distance));
                let ic = InterventionConfig {
                    distance,
                    ..cfg.intervention
                };
                attempt(seed, &label, failures, &mut out, || {
                    let (bb, probe) = (art.black_box()?, art.probe(cfg.probe)?);
                    let ft = crate::finetune::FinetuneConfig {
                        intervention: ic,
                        pi: cfg.strategy,
                        ..cfg.finetune
                    };
                    let stage = format!("ablation/{label}/ft_intervenability");
                    let tuned = art.finetuned_intervenability_with(&stage, &probe, &art.view(Split::Validation), &ft)?;
                    let mut curves = probed(&label, Family::BlackBox, &bb, &probe, &spec, &ic)?;
                    curves.extend(probed(&label, Family::FinetunedIntervenability, &tuned, &probe, &spec, &ic)?);
                    Ok(SeedResult {
                        curves,
                        ..Default::default()
                    })
                });
            }
        }
        AblationAxis::Valsize => {
            for &share in &cfg.grids.valsizes {
                let label = format!("valsize={share}");
                attempt(seed, &label, failures, &mut out, || {
                    let bb = art.black_box()?;
                    let val = art.view(Split::Validation).subsample(share, super::stages::stage_seed(seed, &label))?;
                    let probe = art.probe_on(&format!("ablation/{label}/probe"), &val)?;
                    let ft = crate::finetune::FinetuneConfig {
                        intervention: cfg.intervention,
                        pi: cfg.strategy,
                        ..cfg.finetune
                    };
                    let tuned = art.finetuned_intervenability_with(&format!("ablation/{label}/ft_intervenability"), &probe, &val, &ft)?;
                    let mut curves = probed(&label, Family::BlackBox, &bb, &probe, &spec, &cfg.intervention)?;
                    curves.extend(probed(&label, Family::FinetunedIntervenability, &tuned, &probe, &spec, &cfg.intervention)?);
                    Ok(SeedResult {
                        curves,
                        ..Default::default()
                    })
                });
            }
        }
        AblationAxis::CbmMode => {
            for &mode in &cfg.grids.cbm_modes {
                let label = format!("cbm_mode={}", snake(&mode));
                let family = match mode {
                    CbmMode::Joint => Family::CbmJoint,
                    CbmMode::Independent => Family::CbmIndependent,
                    CbmMode::Sequential => Family::CbmSequential,
                };
                attempt(seed, &label, failures, &mut out, || {
                    let m = art.cbm(mode)?;
                    Ok(SeedResult {
                        curves: curve_rows(&label, family, seed, &m, test(), &spec, &ks, &cfg.intervention)?,
                        ..Default::default()
                    })
                });
            }
        }
    }
    out
}

/// One curve set per grid value of `axis`, over the configured seeds.
pub fn run_ablation(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<ResultsBundle> {
    run_seeds(cfg, format!("ablation:{}", axis.name()), |art, failures| ablate_seed(cfg, axis, art, failures))
}
