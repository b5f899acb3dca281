use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FinetuneConfig;
use crate::data::{minibatches, DataView};
use crate::error::{shape_err, Error, Result};
use crate::interventions::{check_concepts, Baseline, Intervenable, InterventionConfig, InterventionResult};
use crate::linalg::Matrix;
use crate::models::{apply_step, require_eval, BlackBoxModel, TrainLog};
use crate::neural::{bce_loss, Layer, LayeredNet};
use crate::scalar::Scalar;

/// Value fed for a concept that is not known at prediction time.
pub const UNKNOWN_CONCEPT: f64 = 0.5;

/// Head over `[z, c]`, started from the black-box head with zero weights on the concepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AppendHead<T> {
    pub net: LayeredNet<T>,
    pub representation_dim: usize,
    pub num_concepts: usize,
}

impl<T: Scalar> AppendHead<T> {
    pub fn from_black_box(black_box: &BlackBoxModel<T>, num_concepts: usize) -> Result<Self> {
        let head = black_box.head_net();
        let d = black_box.representation_dim();
        let (w, b) = match head.layers() {
            [Layer::Affine { weight, bias }, Layer::Sigmoid] if weight.rows() == 1 => (weight, bias),
            _ => return Err(Error::VariantMismatch("append fine-tuning needs an affine-sigmoid head".into())),
        };
        let weight = Matrix::from_fn(1, d + num_concepts, |_, j| if j < d { w[(0, j)] } else { T::zero() });
        let net = LayeredNet::new(vec![Layer::affine(weight, b.clone())?, Layer::Sigmoid])?.eval();
        Ok(Self {
            net,
            representation_dim: d,
            num_concepts,
        })
    }

    pub fn predict(&self, z: &Matrix<T>, c: &Matrix<T>) -> Result<Vec<T>> {
        require_eval(&self.net, "append head")?;
        if z.cols() != self.representation_dim || c.cols() != self.num_concepts {
            return Err(shape_err(
                "append head",
                format!("[{} | {}] columns", self.representation_dim, self.num_concepts),
                format!("[{} | {}]", z.cols(), c.cols()),
            ));
        }
        Ok(self.net.predict(&z.hstack(c)?)?.into_vec())
    }
}

/// Replaces each concept with [`UNKNOWN_CONCEPT`] independently with probability `p`.
pub fn mask_concepts<T: Scalar, R: Rng + ?Sized>(c: &Matrix<T>, p: f64, rng: &mut R) -> Matrix<T> {
    let unknown = T::lit(UNKNOWN_CONCEPT);
    Matrix::from_fn(c.rows(), c.cols(), |i, j| if rng.gen_bool(p) { unknown } else { c[(i, j)] })
}

/// Trains a head on `[h_φ(x), c̃]` with the body frozen, where `c̃` is the
/// ground truth with a random share of entries masked. The mask is redrawn
/// every epoch.
pub fn finetune_append<T: Scalar>(
    black_box: &BlackBoxModel<T>,
    view: &DataView<'_, T>,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(AppendHead<T>, TrainLog)> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Empty("fine-tuning split"));
    }
    let mut head = AppendHead::from_black_box(black_box, view.dataset().num_concepts())?;
    let z = black_box.representations(&view.x())?;
    let (c, y) = (view.c(), view.y_matrix());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = cfg.hyper.optimizer::<T>()?;
    let mut log = TrainLog::default();
    let range = 0..head.net.len();
    for epoch in 0..cfg.hyper.epochs {
        let input = z.hstack(&mask_concepts(&c, cfg.mask_prob, &mut rng))?;
        let batches = minibatches(input.rows(), cfg.hyper.batch_size, &mut rng);
        let mut total = 0.0;
        for b in &batches {
            let fwd = head.net.forward_range_eval(range.clone(), &input.select_rows(b))?;
            let (loss, grad) = bce_loss(fwd.output(), &y.select_rows(b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "append fine-tuning epoch",
                    index: epoch,
                });
            }
            total += loss.as_f64();
            let grads = head.net.backward_params(&fwd, &grad)?;
            apply_step(&mut head.net, &grads, &mut opt)?;
        }
        log.epoch_losses.push(total / batches.len() as f64);
    }
    Ok((head, log))
}

/// Black box whose head sees the concepts; interventions substitute `c′` for the unknowns.
#[derive(Clone, Copy, Debug)]
pub struct AppendModel<'a, T> {
    pub black_box: &'a BlackBoxModel<T>,
    pub head: &'a AppendHead<T>,
}

impl<'a, T: Scalar> Intervenable<T> for AppendModel<'a, T> {
    fn family(&self) -> &'static str {
        "append"
    }

    fn num_concepts(&self) -> usize {
        self.head.num_concepts
    }

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>> {
        let z = self.black_box.representations(x)?;
        let c_hat = Matrix::filled(x.rows(), self.head.num_concepts, T::lit(UNKNOWN_CONCEPT));
        let y = self.head.predict(&z, &c_hat)?;
        Ok(Baseline { y, c_hat, z: Some(z) })
    }

    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, _config: &InterventionConfig) -> Result<InterventionResult<T>> {
        check_concepts(base, c_prime)?;
        let z = base.z.as_ref().ok_or_else(|| Error::VariantMismatch("append baseline without representations".into()))?;
        Ok(InterventionResult {
            z_edited: None,
            c_before: base.c_hat.clone(),
            c_after: c_prime.clone(),
            y_before: base.y.clone(),
            y_after: self.head.predict(z, c_prime)?,
            objective_trace: vec![Vec::new(); c_prime.rows()],
            steps: vec![0; c_prime.rows()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masking_rate_matches_probability() {
        let c = Matrix::<f64>::filled(1000, 10, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = mask_concepts(&c, 0.5, &mut rng);
        let masked = m.as_slice().iter().filter(|&&v| v == UNKNOWN_CONCEPT).count();
        assert!((4700..5300).contains(&masked), "{masked}");
        assert_eq!(mask_concepts(&c, 0.0, &mut rng), c);
    }

    #[test]
    fn fresh_append_head_reproduces_black_box() {
        let mut bb = BlackBoxModel::<f64>::init(6, 1);
        bb.net.set_mode(crate::neural::Mode::Eval);
        let head = AppendHead::from_black_box(&bb, 3).unwrap();
        let x = Matrix::from_fn(5, 6, |i, j| (i as f64 - j as f64) * 0.3);
        let pred = bb.predict(&x).unwrap();
        let c = Matrix::from_fn(5, 3, |i, j| ((i + j) % 2) as f64);
        for (a, b) in head.predict(&pred.z, &c).unwrap().iter().zip(&pred.y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
