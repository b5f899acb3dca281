use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edit::{edit_representations, InterventionConfig};
use super::strategy::StrategySpec;
use crate::data::DataView;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::models::{BlackBoxModel, CbmModel, PostHocCbm, ProbeModel};
use crate::neural::bce;
use crate::scalar::Scalar;

/// Predictions of a model before any intervention.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline<T> {
    pub y: Vec<T>,
    /// Concept values an intervention starts from; all ½ for models without a concept readout.
    pub c_hat: Matrix<T>,
    /// Representations at the slice, when the model has one.
    pub z: Option<Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InterventionResult<T> {
    pub z_edited: Option<Matrix<T>>,
    pub c_before: Matrix<T>,
    pub c_after: Matrix<T>,
    pub y_before: Vec<T>,
    pub y_after: Vec<T>,
    /// Inner-loop objective per row; empty for models that substitute concepts directly.
    pub objective_trace: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
}

/// A model family that accepts concept interventions.
pub trait Intervenable<T: Scalar>: Sync {
    fn family(&self) -> &'static str;

    fn num_concepts(&self) -> usize;

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>>;

    /// Updated prediction after setting the concepts to `c_prime`.
    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, config: &InterventionConfig) -> Result<InterventionResult<T>>;
}

pub(crate) fn check_concepts<T: Scalar>(base: &Baseline<T>, c_prime: &Matrix<T>) -> Result<()> {
    if c_prime.shape() != base.c_hat.shape() {
        return Err(shape_err("intervene", base.c_hat.shape_str(), c_prime.shape_str()));
    }
    if c_prime.as_slice().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::InvalidArgument("concept values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Black box plus a probe on its slice: interventions edit `z`.
#[derive(Clone, Copy, Debug)]
pub struct ProbedModel<'a, T> {
    pub model: &'a BlackBoxModel<T>,
    pub probe: &'a ProbeModel<T>,
}

impl<'a, T: Scalar> ProbedModel<'a, T> {
    pub fn new(model: &'a BlackBoxModel<T>, probe: &'a ProbeModel<T>) -> Result<Self> {
        if probe.input_dim() != model.representation_dim() {
            return Err(shape_err(
                "probed model",
                format!("probe over {} activations", model.representation_dim()),
                format!("{}", probe.input_dim()),
            ));
        }
        Ok(Self { model, probe })
    }
}

impl<'a, T: Scalar> Intervenable<T> for ProbedModel<'a, T> {
    fn family(&self) -> &'static str {
        "probed"
    }

    fn num_concepts(&self) -> usize {
        self.probe.num_concepts()
    }

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>> {
        let pred = self.model.predict(x)?;
        let c_hat = self.probe.predict(&pred.z)?;
        Ok(Baseline {
            y: pred.y,
            c_hat,
            z: Some(pred.z),
        })
    }

    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, config: &InterventionConfig) -> Result<InterventionResult<T>> {
        check_concepts(base, c_prime)?;
        let z = base.z.as_ref().ok_or_else(|| Error::VariantMismatch("probed baseline without representations".into()))?;
        let edit = edit_representations(z, c_prime, self.probe, config)?;
        let y_after = self.model.head(&edit.z_edited)?.into_vec();
        let c_after = self.probe.predict(&edit.z_edited)?;
        Ok(InterventionResult {
            z_edited: Some(edit.z_edited),
            c_before: base.c_hat.clone(),
            c_after,
            y_before: base.y.clone(),
            y_after,
            objective_trace: edit.objective_trace,
            steps: edit.steps,
        })
    }
}

/// Concept bottleneck: interventions replace `ĉ` at the bottleneck.
impl<T: Scalar> Intervenable<T> for CbmModel<T> {
    fn family(&self) -> &'static str {
        "cbm"
    }

    fn num_concepts(&self) -> usize {
        CbmModel::num_concepts(self)
    }

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>> {
        let pred = self.predict(x)?;
        Ok(Baseline {
            y: pred.y,
            c_hat: pred.c_hat,
            z: None,
        })
    }

    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, _config: &InterventionConfig) -> Result<InterventionResult<T>> {
        check_concepts(base, c_prime)?;
        Ok(InterventionResult {
            z_edited: None,
            c_before: base.c_hat.clone(),
            c_after: c_prime.clone(),
            y_before: base.y.clone(),
            y_after: self.head(c_prime)?.into_vec(),
            objective_trace: vec![Vec::new(); c_prime.rows()],
            steps: vec![0; c_prime.rows()],
        })
    }
}

/// Post hoc CBM on a frozen black-box body.
#[derive(Clone, Copy, Debug)]
pub struct PostHocModel<'a, T> {
    pub black_box: &'a BlackBoxModel<T>,
    pub cbm: &'a PostHocCbm<T>,
}

impl<'a, T: Scalar> Intervenable<T> for PostHocModel<'a, T> {
    fn family(&self) -> &'static str {
        "post_hoc_cbm"
    }

    fn num_concepts(&self) -> usize {
        self.cbm.probe.num_concepts()
    }

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>> {
        let z = self.black_box.representations(x)?;
        let (y, c_hat) = self.cbm.predict(&z)?;
        Ok(Baseline { y, c_hat, z: Some(z) })
    }

    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, _config: &InterventionConfig) -> Result<InterventionResult<T>> {
        check_concepts(base, c_prime)?;
        let z = base.z.as_ref().ok_or_else(|| Error::VariantMismatch("post hoc baseline without representations".into()))?;
        Ok(InterventionResult {
            z_edited: None,
            c_before: base.c_hat.clone(),
            c_after: c_prime.clone(),
            y_before: base.y.clone(),
            y_after: self.cbm.predict_from(c_prime, z)?,
            objective_trace: vec![Vec::new(); c_prime.rows()],
            steps: vec![0; c_prime.rows()],
        })
    }
}

/// Steps 2 and 3 of the intervention recipe on inputs `x` with concept values `c_prime`.
pub fn intervene<T: Scalar, M: Intervenable<T> + ?Sized>(
    model: &M,
    x: &Matrix<T>,
    c_prime: &Matrix<T>,
    config: &InterventionConfig,
) -> Result<InterventionResult<T>> {
    config.validate()?;
    let base = model.baseline(x)?;
    model.apply(&base, c_prime, config)
}

/// Mean of `L^y(ŷ, y) − L^y(ŷ′, y)` over the rows of `view` and `repeats`
/// passes, with one strategy draw per instance per pass.
pub fn intervenability<T: Scalar, M: Intervenable<T> + ?Sized>(
    model: &M,
    view: &DataView<'_, T>,
    strategy: &StrategySpec,
    config: &InterventionConfig,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    config.validate()?;
    strategy.validate(model.num_concepts())?;
    if view.is_empty() {
        return Err(Error::Empty("intervenability split"));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, c, y) = (view.x(), view.c(), view.y());
    let mut total = 0.0;
    for _ in 0..repeats {
        for start in (0..x.rows()).step_by(config.batch_size) {
            let idx: Vec<usize> = (start..(start + config.batch_size).min(x.rows())).collect();
            let base = model.baseline(&x.select_rows(&idx))?;
            let c_prime = strategy.apply(&base.c_hat, &c.select_rows(&idx), &mut rng)?;
            let res = model.apply(&base, &c_prime, config)?;
            for (j, &i) in idx.iter().enumerate() {
                total += (bce(res.y_before[j], y[i]) - bce(res.y_after[j], y[i])).as_f64();
            }
        }
    }
    Ok(total / (repeats * x.rows()) as f64)
}
