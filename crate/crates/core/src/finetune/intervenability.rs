use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FinetuneConfig;
use crate::data::{minibatches, DataView};
use crate::error::{Error, Result};
use crate::interventions::edit_representations;
use crate::models::{apply_step, BlackBoxModel, ProbeModel, TrainLog};
use crate::neural::bce_loss;
use crate::scalar::Scalar;

/// Trains only the head `g_ψ` so that predictions from edited representations
/// match the labels. The body and the probe are left untouched.
///
/// Each batch samples `c′` from the strategy, edits `z` towards it and takes
/// one optimizer step on `L^y(g_ψ(z′), y)` with `z′` held fixed.
pub fn finetune_intervenability<T: Scalar>(
    black_box: &BlackBoxModel<T>,
    probe: &ProbeModel<T>,
    view: &DataView<'_, T>,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(BlackBoxModel<T>, TrainLog)> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Empty("fine-tuning split"));
    }
    let z = black_box.representations(&view.x())?;
    let c_hat = probe.predict(&z)?;
    let (c, y) = (view.c(), view.y_matrix());
    let strategy = cfg.strategy(probe.num_concepts());

    let mut model = black_box.clone();
    let head = model.slice.head(&model.net);
    let mut opt = cfg.hyper.optimizer::<T>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog::default();
    let mode = model.net.mode();
    for epoch in 0..cfg.hyper.epochs {
        let batches = minibatches(z.rows(), cfg.hyper.batch_size, &mut rng);
        let mut total = 0.0;
        for (bi, b) in batches.iter().enumerate() {
            let zb = z.select_rows(b);
            let c_prime = strategy.apply(&c_hat.select_rows(b), &c.select_rows(b), &mut rng)?;
            let edit = edit_representations(&zb, &c_prime, probe, &cfg.intervention)?;
            // The head has no stochastic layers, so eval-mode activations suffice.
            let fwd = model.net.forward_range_eval(head.clone(), &edit.z_edited)?;
            let (loss, grad) = bce_loss(fwd.output(), &y.select_rows(b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "intervenability fine-tuning batch",
                    index: epoch * batches.len() + bi,
                });
            }
            total += loss.as_f64();
            let grads = model.net.backward_params(&fwd, &grad)?;
            apply_step(&mut model.net, &grads, &mut opt)?;
        }
        log.epoch_losses.push(total / batches.len() as f64);
    }
    model.net.set_mode(mode);
    Ok((model, log))
}
