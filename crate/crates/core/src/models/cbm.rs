use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blackbox::block;
use super::{apply_step, fit_bce, require_eval, TrainHyper, TrainLog, FCNN_WIDTH};
use crate::data::{minibatches, DataView};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::neural::{bce_loss, Gradients, Layer, LayeredNet, Mode, Slice};
use crate::scalar::Scalar;

/// Bottleneck position: two hidden blocks, then `Linear(256, K)` and a sigmoid.
pub const CBM_SLICE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbmMode {
    Joint,
    Independent,
    Sequential,
}

/// Concept bottleneck model: the encoder `h_φ` outputs `ĉ` and the head `g_ψ`
/// sees nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CbmModel<T> {
    pub net: LayeredNet<T>,
    pub slice: Slice,
    pub mode: CbmMode,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbmPrediction<T> {
    pub y: Vec<T>,
    pub c_hat: Matrix<T>,
}

/// Joint objective split into its parts; `total = target + alpha * concept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub target: f64,
    pub concept: f64,
    pub alpha: f64,
    pub total: f64,
}

impl<T: Scalar> CbmModel<T> {
    pub fn init(input_dim: usize, k: usize, mode: CbmMode, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and non-negative, got {alpha}")));
        }
        if k == 0 {
            return Err(Error::Config("a bottleneck needs at least one concept".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = block(input_dim, FCNN_WIDTH, &mut rng);
        layers.extend(block(FCNN_WIDTH, FCNN_WIDTH, &mut rng));
        layers.push(Layer::affine_he(FCNN_WIDTH, k, &mut rng));
        layers.push(Layer::Sigmoid);
        layers.push(Layer::affine_he(k, 1, &mut rng));
        layers.push(Layer::Sigmoid);
        let net = LayeredNet::new(layers)?;
        let slice = Slice::new(CBM_SLICE, &net)?;
        Ok(Self { net, slice, mode, alpha })
    }

    pub fn num_concepts(&self) -> usize {
        self.net.input_dim_at(self.slice.split_index()).expect("head has an affine layer")
    }

    pub fn concepts(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.net, "cbm")?;
        self.net.predict_range(self.slice.body(), x)
    }

    /// `g_ψ(c)` for any (possibly intervened) concept matrix.
    pub fn head(&self, c: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.net, "cbm")?;
        if c.cols() != self.num_concepts() {
            return Err(shape_err("cbm head", format!("{} concept columns", self.num_concepts()), c.shape_str()));
        }
        self.net.predict_range(self.slice.head(&self.net), c)
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<CbmPrediction<T>> {
        let c_hat = self.concepts(x)?;
        let y = self.head(&c_hat)?.into_vec();
        Ok(CbmPrediction { y, c_hat })
    }

    /// Eval-mode loss parts on `(x, c, y)`.
    pub fn joint_loss(&self, x: &Matrix<T>, c: &Matrix<T>, y: &Matrix<T>) -> Result<JointLoss> {
        let pred = self.predict(x)?;
        let (concept, _) = bce_loss(&pred.c_hat, c)?;
        let (target, _) = bce_loss(&Matrix::column_vector(&pred.y), y)?;
        Ok(JointLoss::new(target.as_f64(), concept.as_f64(), self.alpha))
    }
}

impl JointLoss {
    pub fn new(target: f64, concept: f64, alpha: f64) -> Self {
        Self {
            target,
            concept,
            alpha,
            total: target + alpha * concept,
        }
    }
}

/// Per-epoch loss parts of a CBM fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CbmLog {
    pub epochs: Vec<JointLoss>,
}

/// Trains a CBM on the rows of `view` in the requested mode.
pub fn train_cbm<T: Scalar>(
    view: &DataView<'_, T>,
    mode: CbmMode,
    alpha: f64,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(CbmModel<T>, CbmLog)> {
    hyper.validate()?;
    if view.is_empty() {
        return Err(Error::Empty("cbm training split"));
    }
    let mut model = CbmModel::init(view.dataset().num_features(), view.dataset().num_concepts(), mode, alpha, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (x, c, y) = (view.x(), view.c(), view.y_matrix());
    let body = model.slice.body();
    let head = model.slice.head(&model.net);
    let log = match mode {
        CbmMode::Joint => fit_joint(&mut model, &x, &c, &y, hyper, &mut rng)?,
        CbmMode::Independent => {
            let enc = fit_bce(&mut model.net, body, &x, &c, hyper, &mut rng, "cbm encoder epoch")?;
            let hd = fit_bce(&mut model.net, head, &c, &y, hyper, &mut rng, "cbm head epoch")?;
            staged_log(&enc, &hd, alpha)
        }
        CbmMode::Sequential => {
            let enc = fit_bce(&mut model.net, body, &x, &c, hyper, &mut rng, "cbm encoder epoch")?;
            let c_hat = model.concepts(&x)?;
            let hd = fit_bce(&mut model.net, head, &c_hat, &y, hyper, &mut rng, "cbm head epoch")?;
            staged_log(&enc, &hd, alpha)
        }
    };
    model.net.set_mode(Mode::Eval);
    Ok((model, log))
}

fn staged_log(encoder: &TrainLog, head: &TrainLog, alpha: f64) -> CbmLog {
    CbmLog {
        epochs: encoder
            .epoch_losses
            .iter()
            .zip(&head.epoch_losses)
            .map(|(&c, &y)| JointLoss::new(y, c, alpha))
            .collect(),
    }
}

fn fit_joint<T: Scalar>(
    model: &mut CbmModel<T>,
    x: &Matrix<T>,
    c: &Matrix<T>,
    y: &Matrix<T>,
    hyper: &TrainHyper,
    rng: &mut ChaCha8Rng,
) -> Result<CbmLog> {
    let mut opt = hyper.optimizer::<T>()?;
    let alpha = T::lit(model.alpha);
    let body = model.slice.body();
    let head = model.slice.head(&model.net);
    let mut log = CbmLog::default();
    model.net.set_mode(Mode::Train);
    for epoch in 0..hyper.epochs {
        let (mut lt, mut lc) = (0.0, 0.0);
        let batches = minibatches(x.rows(), hyper.batch_size, rng);
        for b in &batches {
            let fb = model.net.forward_range(body.clone(), &x.select_rows(b), rng)?;
            let fh = model.net.forward_range(head.clone(), fb.output(), rng)?;
            let (loss_c, grad_c) = bce_loss(fb.output(), &c.select_rows(b))?;
            let (loss_y, grad_y) = bce_loss(fh.output(), &y.select_rows(b))?;
            if !(loss_c.is_finite() && loss_y.is_finite()) {
                model.net.set_mode(Mode::Eval);
                return Err(Error::Diverged {
                    stage: "joint cbm epoch",
                    index: epoch,
                });
            }
            lt += loss_y.as_f64();
            lc += loss_c.as_f64();
            let (gh, dc) = model.net.backward(&fh, &grad_y)?;
            let upstream = dc.add(&grad_c.scale(alpha))?;
            let gb = model.net.backward_params(&fb, &upstream)?;
            let mut layers = gb.layers;
            layers.extend(gh.layers);
            let grads = Gradients {
                range: body.start..head.end,
                layers,
            };
            apply_step(&mut model.net, &grads, &mut opt)?;
        }
        let nb = batches.len() as f64;
        log.epochs.push(JointLoss::new(lt / nb, lc / nb, model.alpha));
    }
    model.net.set_mode(Mode::Eval);
    Ok(log)
}
