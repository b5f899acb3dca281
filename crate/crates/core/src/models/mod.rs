//! Model families: black box with a slice, concept bottleneck models, probes
//! and post hoc CBMs, plus the shared mini-batch training loop.

mod blackbox;
mod cbm;
mod posthoc;
mod probe;

pub use blackbox::{fcnn, train_black_box, BlackBoxModel, BlackBoxPrediction, FCNN_DROPOUT, FCNN_SLICE, FCNN_WIDTH};
pub use cbm::{train_cbm, CbmLog, CbmMode, CbmModel, CbmPrediction, JointLoss, CBM_SLICE};
pub use posthoc::{train_posthoc_cbm, PostHocCbm, PostHocLog};
pub use probe::{train_probe, train_probe_on, ProbeLinearity, ProbeModel, PROBE_HIDDEN};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::minibatches;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neural::{bce_loss, Gradients, LayeredNet, Mode, Optimizer, OptimizerKind};
use crate::scalar::Scalar;

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

/// Epoch count, learning rate, batch size and optimizer for one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerName,
}

impl TrainHyper {
    pub fn black_box() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            batch_size: 64,
            optimizer: OptimizerName::Adam,
        }
    }

    pub fn cbm() -> Self {
        Self {
            epochs: 150,
            ..Self::black_box()
        }
    }

    pub fn probe() -> Self {
        Self {
            epochs: 150,
            lr: 1e-2,
            batch_size: 64,
            optimizer: OptimizerName::Sgd,
        }
    }

    /// Head (and residual) of the post hoc CBM.
    pub fn posthoc_head() -> Self {
        Self {
            epochs: 150,
            lr: 1e-3,
            batch_size: 64,
            optimizer: OptimizerName::Adam,
        }
    }

    pub fn finetune() -> Self {
        Self {
            epochs: 150,
            lr: 1e-4,
            batch_size: 64,
            optimizer: OptimizerName::Adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "training needs epochs >= 1, batch_size >= 1 and a positive lr (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn optimizer<T: Scalar>(&self) -> Result<Optimizer<T>> {
        Optimizer::new(match self.optimizer {
            OptimizerName::Sgd => OptimizerKind::Sgd { lr: self.lr },
            OptimizerName::Adam => OptimizerKind::adam(self.lr),
        })
    }
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

pub(crate) fn apply_step<T: Scalar>(net: &mut LayeredNet<T>, grads: &Gradients<T>, opt: &mut Optimizer<T>) -> Result<()> {
    let tensors = grads.tensors();
    let mut slots = net.param_slots(grads.range.clone());
    opt.step(&mut slots, &tensors)
}

/// Trains the layers in `range` so that their output on `x` matches `targets`
/// under mean BCE. The range must end in a sigmoid. Leaves the net in eval mode.
pub(crate) fn fit_bce<T: Scalar, R: Rng + ?Sized>(
    net: &mut LayeredNet<T>,
    range: Range<usize>,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    hyper: &TrainHyper,
    rng: &mut R,
    stage: &'static str,
) -> Result<TrainLog> {
    hyper.validate()?;
    if x.rows() == 0 {
        return Err(Error::Empty("training rows"));
    }
    if x.rows() != targets.rows() {
        return Err(crate::error::shape_err("fit_bce", format!("{} target rows", x.rows()), format!("{}", targets.rows())));
    }
    let mut opt = hyper.optimizer::<T>()?;
    let mut log = TrainLog::default();
    net.set_mode(Mode::Train);
    for epoch in 0..hyper.epochs {
        let mut total = 0.0;
        let batches = minibatches(x.rows(), hyper.batch_size, rng);
        for b in &batches {
            let xb = x.select_rows(b);
            let tb = targets.select_rows(b);
            let fwd = net.forward_range(range.clone(), &xb, rng)?;
            let (loss, grad) = bce_loss(fwd.output(), &tb)?;
            if !loss.is_finite() {
                net.set_mode(Mode::Eval);
                return Err(Error::Diverged { stage, index: epoch });
            }
            total += loss.as_f64();
            let grads = net.backward_params(&fwd, &grad)?;
            apply_step(net, &grads, &mut opt)?;
        }
        log.epoch_losses.push(total / batches.len() as f64);
    }
    net.set_mode(Mode::Eval);
    Ok(log)
}

pub fn require_eval<T: Scalar>(net: &LayeredNet<T>, what: &'static str) -> Result<()> {
    if net.mode() != Mode::Eval {
        return Err(Error::NotEvalMode(what));
    }
    Ok(())
}
