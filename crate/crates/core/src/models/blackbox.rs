use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_bce, require_eval, TrainHyper, TrainLog, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
use crate::data::DataView;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::neural::{Layer, LayeredNet, Slice};
use crate::scalar::Scalar;

pub const FCNN_WIDTH: usize = 256;
pub const FCNN_DROPOUT: f64 = 0.05;
/// Slice index: after the three `Linear → ReLU → Dropout → BatchNorm` blocks.
pub const FCNN_SLICE: usize = 12;

pub(crate) fn block<T: Scalar, R: rand::Rng + ?Sized>(fan_in: usize, width: usize, rng: &mut R) -> Vec<Layer<T>> {
    vec![
        Layer::affine_he(fan_in, width, rng),
        Layer::Relu,
        Layer::dropout(FCNN_DROPOUT).expect("valid rate"),
        Layer::batchnorm(width, BATCHNORM_MOMENTUM, BATCHNORM_EPS).expect("valid batchnorm"),
    ]
}

/// Fully connected classifier: three hidden blocks, then `Linear(256, 1)` and a sigmoid.
pub fn fcnn<T: Scalar, R: rand::Rng + ?Sized>(input_dim: usize, rng: &mut R) -> LayeredNet<T> {
    let mut layers = block(input_dim, FCNN_WIDTH, rng);
    layers.extend(block(FCNN_WIDTH, FCNN_WIDTH, rng));
    layers.extend(block(FCNN_WIDTH, FCNN_WIDTH, rng));
    layers.push(Layer::affine_he(FCNN_WIDTH, 1, rng));
    layers.push(Layer::Sigmoid);
    LayeredNet::new(layers).expect("fcnn dims compose")
}

/// A target-only classifier `f = g_ψ ∘ h_φ` split at `slice`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BlackBoxModel<T> {
    pub net: LayeredNet<T>,
    pub slice: Slice,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlackBoxPrediction<T> {
    pub y: Vec<T>,
    pub z: Matrix<T>,
}

impl<T: Scalar> BlackBoxModel<T> {
    pub fn new(net: LayeredNet<T>, slice: Slice) -> Result<Self> {
        Slice::new(slice.split_index(), &net)?;
        if net.output_dim() != Some(1) {
            return Err(shape_err("BlackBoxModel::new", "a single output unit", format!("{:?}", net.output_dim())));
        }
        Ok(Self { net, slice })
    }

    /// Untrained FCNN with the default slice.
    pub fn init(input_dim: usize, seed: u64) -> Self {
        let net = fcnn(input_dim, &mut ChaCha8Rng::seed_from_u64(seed));
        let slice = Slice::new(FCNN_SLICE, &net).expect("fcnn slice");
        Self { net, slice }
    }

    pub fn representation_dim(&self) -> usize {
        self.net.input_dim_at(self.slice.split_index()).expect("head has an affine layer")
    }

    /// `z = h_φ(x)`.
    pub fn representations(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.net, "black box")?;
        self.net.predict_range(self.slice.body(), x)
    }

    /// `g_ψ(z)` as a column of probabilities.
    pub fn head(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.net, "black box")?;
        self.net.predict_range(self.slice.head(&self.net), z)
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<BlackBoxPrediction<T>> {
        let z = self.representations(x)?;
        let y = self.head(&z)?.into_vec();
        Ok(BlackBoxPrediction { y, z })
    }

    /// Head layers as a standalone net.
    pub fn head_net(&self) -> LayeredNet<T> {
        self.net.sub_net(self.slice.head(&self.net)).expect("non-empty head")
    }

    pub fn body_snapshot(&self) -> Vec<T> {
        self.net.sub_net(self.slice.body()).expect("non-empty body").snapshot()
    }

    pub fn head_snapshot(&self) -> Vec<T> {
        self.head_net().snapshot()
    }
}

/// Trains an FCNN on `(x, y)` of `view` with BCE. Returns it in eval mode.
pub fn train_black_box<T: Scalar>(view: &DataView<'_, T>, hyper: &TrainHyper, seed: u64) -> Result<(BlackBoxModel<T>, TrainLog)> {
    if view.is_empty() {
        return Err(Error::Empty("black-box training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = fcnn(view.dataset().num_features(), &mut rng);
    let slice = Slice::new(FCNN_SLICE, &net)?;
    let mut model = BlackBoxModel { net, slice };
    let n = model.net.len();
    let log = fit_bce(&mut model.net, 0..n, &view.x(), &view.y_matrix(), hyper, &mut rng, "black-box epoch")?;
    Ok((model, log))
}
