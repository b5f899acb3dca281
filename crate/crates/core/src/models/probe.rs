use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_bce, require_eval, BlackBoxModel, TrainHyper, TrainLog};
use crate::data::{DataView, Split, SplitAudit};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::neural::{Layer, LayeredNet};
use crate::scalar::Scalar;

/// Hidden width of the nonlinear probe.
pub const PROBE_HIDDEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLinearity {
    Linear,
    Nonlinear,
}

/// `q_ξ : z ↦ ĉ`, trained on validation representations only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProbeModel<T> {
    pub net: LayeredNet<T>,
    pub linearity: ProbeLinearity,
    /// Rows from each split that were used to fit the probe.
    pub audit: SplitAudit,
}

impl<T: Scalar> ProbeModel<T> {
    pub fn init<R: rand::Rng + ?Sized>(input_dim: usize, k: usize, linearity: ProbeLinearity, rng: &mut R) -> Self {
        let layers = match linearity {
            ProbeLinearity::Linear => vec![Layer::affine_he(input_dim, k, rng), Layer::Sigmoid],
            ProbeLinearity::Nonlinear => vec![
                Layer::affine_he(input_dim, PROBE_HIDDEN, rng),
                Layer::Relu,
                Layer::affine_he(PROBE_HIDDEN, k, rng),
                Layer::Sigmoid,
            ],
        };
        Self {
            net: LayeredNet::new(layers).expect("probe dims compose").eval(),
            linearity,
            audit: SplitAudit::default(),
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.net.output_dim().expect("probe has an affine layer")
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim().expect("probe has an affine layer")
    }

    /// `ĉ = q_ξ(z)`.
    pub fn predict(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.net, "probe")?;
        if z.cols() != self.input_dim() {
            return Err(shape_err("probe", format!("{} representation columns", self.input_dim()), z.shape_str()));
        }
        self.net.predict(z)
    }
}

/// Fits a probe on `h_φ(x)` for the validation rows in `view`.
pub fn train_probe<T: Scalar>(
    model: &BlackBoxModel<T>,
    view: &DataView<'_, T>,
    linearity: ProbeLinearity,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(ProbeModel<T>, TrainLog)> {
    let z = model.representations(&view.x())?;
    train_probe_on(&z, view, linearity, hyper, seed)
}

/// Fits a probe on precomputed representations `z` of the rows of `view`.
pub fn train_probe_on<T: Scalar>(
    z: &Matrix<T>,
    view: &DataView<'_, T>,
    linearity: ProbeLinearity,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(ProbeModel<T>, TrainLog)> {
    if view.split() != Split::Validation {
        return Err(Error::InvalidArgument(format!("probes train on the validation split, got {:?}", view.split())));
    }
    if view.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if z.rows() != view.len() {
        return Err(shape_err("train_probe", format!("{} representation rows", view.len()), z.shape_str()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = ProbeModel::init(z.cols(), view.dataset().num_concepts(), linearity, &mut rng);
    let n = probe.net.len();
    let log = fit_bce(&mut probe.net, 0..n, z, &view.c(), hyper, &mut rng, "probe epoch")?;
    probe.audit = view.audit()?;
    Ok((probe, log))
}
