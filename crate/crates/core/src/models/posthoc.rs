use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::probe::train_probe_on;
use super::{apply_step, fit_bce, require_eval, BlackBoxModel, ProbeLinearity, ProbeModel, TrainHyper, TrainLog};
use crate::data::{minibatches, DataView};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::neural::{bce_loss, sigmoid, Layer, LayeredNet, Mode};
use crate::scalar::Scalar;

/// CBM built on a frozen black-box body: `sigmoid(g(q(z)) + r(z))`, with the
/// linear residual `r` optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PostHocCbm<T> {
    pub probe: ProbeModel<T>,
    /// `Affine(K, 1)` followed by a sigmoid.
    pub head: LayeredNet<T>,
    /// `Affine(dim z, 1)` added to the head logit.
    pub residual: Option<LayeredNet<T>>,
}

impl<T: Scalar> PostHocCbm<T> {
    fn head_logit(&self, c: &Matrix<T>) -> Result<Matrix<T>> {
        require_eval(&self.head, "post hoc head")?;
        self.head.predict_range(0..1, c)
    }

    fn residual_logit(&self, z: &Matrix<T>) -> Result<Option<Matrix<T>>> {
        self.residual.as_ref().map(|r| r.predict(z)).transpose()
    }

    /// Target probabilities from concepts `c` (predicted or intervened) and representations `z`.
    pub fn predict_from(&self, c: &Matrix<T>, z: &Matrix<T>) -> Result<Vec<T>> {
        if c.rows() != z.rows() {
            return Err(shape_err("post hoc cbm", format!("{} rows", c.rows()), z.shape_str()));
        }
        let mut logit = self.head_logit(c)?;
        if let Some(r) = self.residual_logit(z)? {
            logit.add_assign(&r)?;
        }
        Ok(logit.into_vec().into_iter().map(sigmoid).collect())
    }

    /// `(ŷ, ĉ)` for representations `z`.
    pub fn predict(&self, z: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
        let c_hat = self.probe.predict(z)?;
        Ok((self.predict_from(&c_hat, z)?, c_hat))
    }
}

/// Per-stage logs of a post hoc CBM fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PostHocLog {
    pub probe: TrainLog,
    pub head: TrainLog,
    pub residual: Option<TrainLog>,
}

/// Probe on frozen activations, then a head on probe outputs, then optionally
/// a linear residual with everything else frozen. All on validation rows.
pub fn train_posthoc_cbm<T: Scalar>(
    black_box: &BlackBoxModel<T>,
    view: &DataView<'_, T>,
    probe_hyper: &TrainHyper,
    head_hyper: &TrainHyper,
    with_residual: bool,
    seed: u64,
) -> Result<(PostHocCbm<T>, PostHocLog)> {
    head_hyper.validate()?;
    let z = black_box.representations(&view.x())?;
    let (probe, probe_log) = train_probe_on(&z, view, ProbeLinearity::Linear, probe_hyper, seed)?;
    let c_hat = probe.predict(&z)?;
    let y = view.y_matrix();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let k = probe.num_concepts();
    let mut head = LayeredNet::new(vec![Layer::affine_he(k, 1, &mut rng), Layer::Sigmoid])?;
    let head_log = fit_bce(&mut head, 0..2, &c_hat, &y, head_hyper, &mut rng, "post hoc head epoch")?;
    let mut model = PostHocCbm {
        probe,
        head,
        residual: None,
    };
    let mut log = PostHocLog {
        probe: probe_log,
        head: head_log,
        residual: None,
    };
    if with_residual {
        let offset = model.head_logit(&c_hat)?;
        let (residual, rlog) = fit_residual(&z, &offset, &y, head_hyper, &mut rng)?;
        model.residual = Some(residual);
        log.residual = Some(rlog);
    }
    Ok((model, log))
}

/// Fits `r` in `sigmoid(offset + r(z))`. `r` starts at zero, so the fit begins
/// exactly at the residual-free model.
fn fit_residual<T: Scalar>(
    z: &Matrix<T>,
    offset: &Matrix<T>,
    y: &Matrix<T>,
    hyper: &TrainHyper,
    rng: &mut ChaCha8Rng,
) -> Result<(LayeredNet<T>, TrainLog)> {
    let mut r = LayeredNet::new(vec![Layer::affine(Matrix::zeros(1, z.cols()), vec![T::zero()])?])?;
    let mut opt = hyper.optimizer::<T>()?;
    let mut log = TrainLog::default();
    r.set_mode(Mode::Train);
    for epoch in 0..hyper.epochs {
        let mut total = 0.0;
        let batches = minibatches(z.rows(), hyper.batch_size, rng);
        for b in &batches {
            let fwd = r.forward_eval(&z.select_rows(b))?;
            let logit = fwd.output().add(&offset.select_rows(b))?;
            let p = logit.map(sigmoid);
            let (loss, grad_p) = bce_loss(&p, &y.select_rows(b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "post hoc residual epoch",
                    index: epoch,
                });
            }
            total += loss.as_f64();
            let grad_logit = grad_p.zip_map(&p, |g, pv| g * pv * (T::one() - pv))?;
            let grads = r.backward_params(&fwd, &grad_logit)?;
            apply_step(&mut r, &grads, &mut opt)?;
        }
        log.epoch_losses.push(total / batches.len() as f64);
    }
    r.set_mode(Mode::Eval);
    Ok((r, log))
}
