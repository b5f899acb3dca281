use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use intervene_core::data::Split;
use intervene_core::harness::{DatasetEntry, ModelEntry};
use intervene_core::interventions::{intervene, DistanceKind, InterventionConfig, StrategyKind, StrategySpec, DEFAULT_EPS_UNC};
use intervene_core::Matrix;

use crate::error::ApiError;
use crate::state::{AppState, LoadedModel};

fn default_split() -> Split {
    Split::Test
}

/// Either a row of the model's dataset or a raw covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub index: Option<usize>,
    #[serde(default = "default_split")]
    pub split: Split,
    pub x: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZSummary {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub l2_norm: f64,
}

impl ZSummary {
    fn of(z: &[f64]) -> Self {
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        Self {
            dim: z.len(),
            mean,
            std: (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt(),
            min: z.iter().copied().fold(f64::INFINITY, f64::min),
            max: z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            l2_norm: z.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Ground truth of a dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub c: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub model_id: String,
    pub family: String,
    pub y_hat: f64,
    pub c_hat: Vec<f64>,
    /// False when `c_hat` is a placeholder rather than a prediction.
    pub concept_readout: bool,
    pub z: Option<ZSummary>,
    pub truth: Option<Truth>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub distance: Option<DistanceKind>,
    pub lr: Option<f64>,
    pub max_steps: Option<usize>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, base: InterventionConfig) -> InterventionConfig {
        InterventionConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            distance: self.distance.unwrap_or(base.distance),
            lr: self.lr.unwrap_or(base.lr),
            max_steps: self.max_steps.unwrap_or(base.max_steps),
            tol: self.tol.unwrap_or(base.tol),
            ..base
        }
    }
}

/// Strategy that picks concepts to set to their ground truth; needs a dataset row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub kind: StrategyKind,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneRequest {
    pub index: Option<usize>,
    #[serde(default = "default_split")]
    pub split: Split,
    pub x: Option<Vec<f64>>,
    /// Concept index to value in `[0, 1]`; unlisted concepts keep their prediction.
    #[serde(default)]
    pub concept_edits: BTreeMap<usize, f64>,
    #[serde(default)]
    pub overrides: Overrides,
    /// Applied before `concept_edits`, which win on overlap.
    pub preset: Option<Preset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub model_id: String,
    pub family: String,
    pub y_before: f64,
    pub y_after: f64,
    pub c_before: Vec<f64>,
    pub c_after: Vec<f64>,
    /// Concepts whose value differs from the prediction's starting point.
    pub edited: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub steps: usize,
    pub config: InterventionConfig,
}

pub fn list_datasets(state: &AppState) -> Vec<DatasetEntry> {
    state.registry.datasets.clone()
}

pub fn list_models(state: &AppState) -> Vec<ModelEntry> {
    state.registry.models.clone()
}

fn model<'s>(state: &'s AppState, id: &str) -> Result<&'s LoadedModel, ApiError> {
    state.models.get(id).ok_or_else(|| ApiError::UnknownModel(id.into()))
}

fn instance(
    state: &AppState,
    m: &LoadedModel,
    index: Option<usize>,
    split: Split,
    x: Option<&[f64]>,
) -> Result<(Matrix<f64>, Option<Truth>), ApiError> {
    match (index, x) {
        (Some(i), None) => {
            let ds = state
                .datasets
                .get(&m.entry.dataset_id)
                .ok_or_else(|| ApiError::Internal(format!("dataset {} not loaded", m.entry.dataset_id)))?;
            let view = ds.view(split);
            let row = *view
                .indices()
                .get(i)
                .ok_or_else(|| ApiError::BadRequest(format!("index {i} outside the {} rows of the split", view.len())))?;
            Ok((
                Matrix::row_vector(ds.x.row(row)),
                Some(Truth {
                    c: ds.c.row(row).to_vec(),
                    y: ds.y[row],
                }),
            ))
        }
        (None, Some(x)) => {
            if x.len() != m.entry.input_dim {
                return Err(ApiError::BadRequest(format!("x has {} entries, model expects {}", x.len(), m.entry.input_dim)));
            }
            Ok((Matrix::row_vector(x), None))
        }
        _ => Err(ApiError::BadRequest("give exactly one of `index` or `x`".into())),
    }
}

pub fn explain(state: &AppState, id: &str, req: &ExplainRequest) -> Result<ExplainResponse, ApiError> {
    let m = model(state, id)?;
    let (x, truth) = instance(state, m, req.index, req.split, req.x.as_deref())?;
    let base = m.model.with_intervenable(|im| im.baseline(&x))?;
    Ok(ExplainResponse {
        model_id: id.into(),
        family: m.entry.family.name().into(),
        y_hat: base.y[0],
        c_hat: base.c_hat.row(0).to_vec(),
        concept_readout: m.model.has_concept_readout(),
        z: base.z.as_ref().map(|z| ZSummary::of(z.row(0))),
        truth,
    })
}

pub fn intervene_on(state: &AppState, id: &str, req: &InterveneRequest) -> Result<InterveneResponse, ApiError> {
    let m = model(state, id)?;
    let (x, truth) = instance(state, m, req.index, req.split, req.x.as_deref())?;
    let config = req.overrides.apply(state.defaults);
    config.validate()?;
    let k = m.entry.num_concepts;
    for (&j, &v) in &req.concept_edits {
        if j >= k {
            return Err(ApiError::BadRequest(format!("concept {j} out of range for K = {k}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(ApiError::BadRequest(format!("concept {j} value {v} outside [0, 1]")));
        }
    }
    m.model.with_intervenable(|im| {
        let base = im.baseline(&x)?;
        let mut c_prime = base.c_hat.row(0).to_vec();
        if let Some(p) = req.preset {
            let truth = truth
                .as_ref()
                .ok_or_else(|| ApiError::BadRequest("a preset needs a dataset `index`".into()))?;
            let spec = StrategySpec {
                kind: p.kind,
                k: p.k,
                eps_unc: DEFAULT_EPS_UNC,
            };
            c_prime = spec.apply_row(&c_prime, &truth.c, &mut ChaCha8Rng::seed_from_u64(p.seed))?;
        }
        for (&j, &v) in &req.concept_edits {
            c_prime[j] = v;
        }
        let edited = (0..k).filter(|&j| c_prime[j] != base.c_hat[(0, j)]).collect();
        let out = intervene(im, &x, &Matrix::row_vector(&c_prime), &config)?;
        Ok(InterveneResponse {
            model_id: id.into(),
            family: m.entry.family.name().into(),
            y_before: out.y_before[0],
            y_after: out.y_after[0],
            c_before: out.c_before.row(0).to_vec(),
            c_after: out.c_after.row(0).to_vec(),
            edited,
            objective_trace: out.objective_trace.into_iter().next().unwrap_or_default(),
            steps: out.steps.first().copied().unwrap_or(0),
            config,
        })
    })
}
