use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FinetuneConfig;
use crate::data::{minibatches, DataView};
use crate::error::{Error, Result};
use crate::models::{apply_step, BlackBoxModel, JointLoss, ProbeLinearity, ProbeModel};
use crate::neural::{bce_loss, Gradients, Mode};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultitaskLog {
    pub epochs: Vec<JointLoss>,
}

/// Jointly trains the whole black box and a fresh linear probe on its slice
/// under `L^y(f(x), y) + α·L^c(q(h(x)), c)`.
pub fn finetune_multitask<T: Scalar>(
    black_box: &BlackBoxModel<T>,
    view: &DataView<'_, T>,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(BlackBoxModel<T>, ProbeModel<T>, MultitaskLog)> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Empty("fine-tuning split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = view.dataset().num_concepts();
    let mut model = black_box.clone();
    let mut probe = ProbeModel::init(model.representation_dim(), k, ProbeLinearity::Linear, &mut rng);
    let (x, c, y) = (view.x(), view.c(), view.y_matrix());
    let alpha = T::lit(cfg.alpha);
    let body = model.slice.body();
    let head = model.slice.head(&model.net);
    let probe_range = 0..probe.net.len();
    let mut opt = cfg.hyper.optimizer::<T>()?;
    let mut probe_opt = cfg.hyper.optimizer::<T>()?;
    let mut log = MultitaskLog::default();

    model.net.set_mode(Mode::Train);
    for epoch in 0..cfg.hyper.epochs {
        let (mut lt, mut lc) = (0.0, 0.0);
        let batches = minibatches(x.rows(), cfg.hyper.batch_size, &mut rng);
        for b in &batches {
            let fb = model.net.forward_range(body.clone(), &x.select_rows(b), &mut rng)?;
            let fh = model.net.forward_range(head.clone(), fb.output(), &mut rng)?;
            let fq = probe.net.forward_range_eval(probe_range.clone(), fb.output())?;
            let (loss_y, grad_y) = bce_loss(fh.output(), &y.select_rows(b))?;
            let (loss_c, grad_c) = bce_loss(fq.output(), &c.select_rows(b))?;
            if !(loss_y.is_finite() && loss_c.is_finite()) {
                model.net.set_mode(Mode::Eval);
                return Err(Error::Diverged {
                    stage: "multitask fine-tuning epoch",
                    index: epoch,
                });
            }
            lt += loss_y.as_f64();
            lc += loss_c.as_f64();
            let (gh, dz_y) = model.net.backward(&fh, &grad_y)?;
            let (mut gq, dz_c) = probe.net.backward(&fq, &grad_c)?;
            gq.scale(alpha);
            let gb = model.net.backward_params(&fb, &dz_y.add(&dz_c.scale(alpha))?)?;
            let mut layers = gb.layers;
            layers.extend(gh.layers);
            let grads = Gradients {
                range: body.start..head.end,
                layers,
            };
            apply_step(&mut model.net, &grads, &mut opt)?;
            apply_step(&mut probe.net, &gq, &mut probe_opt)?;
        }
        let nb = batches.len() as f64;
        log.epochs.push(JointLoss::new(lt / nb, lc / nb, cfg.alpha));
    }
    model.net.set_mode(Mode::Eval);
    probe.audit = view.audit()?;
    Ok((model, probe, log))
}
