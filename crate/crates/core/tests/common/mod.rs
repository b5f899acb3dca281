#![allow(dead_code)]

use intervene_core::neural::{Layer, LayeredNet, Mode};
use intervene_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small enough that train-mode batchnorm over a handful of rows, where a
/// feature's batch variance can be near zero, stays in its linear regime.
pub const FD_STEP: f64 = 1e-6;

/// Below this gradient norm the comparison is absolute (error under
/// `1e-4 * NORM_FLOOR`): tensors whose true gradient is zero, such as a bias
/// feeding train-mode batchnorm, only carry rounding noise of order 1e-9.
pub const NORM_FLOOR: f64 = 1e-4;

/// Relative error between two tensors, `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(NORM_FLOOR)
}

/// Scalar probe `Σ output ⊙ weights` evaluated with a fixed dropout seed,
/// plus the sign pattern of every ReLU input. Train-mode running statistics
/// drift on `net`, which train-mode outputs never read.
fn probe_loss(net: &mut LayeredNet<f64>, x: &Matrix<f64>, weights: &Matrix<f64>, seed: u64) -> (f64, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fwd = match net.mode() {
        Mode::Train => net.forward(x, &mut rng).unwrap(),
        Mode::Eval => net.forward_eval(x).unwrap(),
    };
    let mut signs = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if matches!(layer, Layer::Relu) {
            signs.extend(fwd.activations()[i].as_slice().iter().map(|&v| v > 0.0));
        }
    }
    let loss = fwd.output().as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum();
    (loss, signs)
}

pub struct GradCheck {
    pub param_rel: Vec<(String, f64)>,
    pub input_rel: f64,
    /// Coordinates left out because a ±step moved some ReLU input across zero,
    /// where the central difference does not estimate the derivative.
    pub kinks: usize,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.param_rel.iter().map(|p| p.1).fold(self.input_rel, f64::max)
    }
}

/// Central difference at one coordinate, or `None` across a ReLU kink.
fn central(net: &mut LayeredNet<f64>, x: &Matrix<f64>, weights: &Matrix<f64>, seed: u64, base: &[bool], set: &mut dyn FnMut(&mut LayeredNet<f64>, &mut Matrix<f64>, f64)) -> Option<f64> {
    let mut xp = x.clone();
    set(net, &mut xp, FD_STEP);
    let (up, s_up) = probe_loss(net, &xp, weights, seed);
    let mut xm = x.clone();
    set(net, &mut xm, -FD_STEP);
    let (down, s_down) = probe_loss(net, &xm, weights, seed);
    set(net, &mut xm, 0.0);
    (s_up == base && s_down == base).then(|| (up - down) / (2.0 * FD_STEP))
}

/// Compares backprop gradients of a random linear functional of the output
/// against central finite differences for every parameter and every input entry.
pub fn check_net(net: &LayeredNet<f64>, x: &Matrix<f64>, seed: u64) -> GradCheck {
    check_net_sampled(net, x, seed, usize::MAX)
}

/// As [`check_net`], but differences at most `per_tensor` random coordinates of each parameter tensor.
pub fn check_net_sampled(net: &LayeredNet<f64>, x: &Matrix<f64>, seed: u64, per_tensor: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let dropout_seed = seed.wrapping_mul(31) + 7;
    let mut work = net.clone();
    let out_shape = {
        let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
        work.forward(x, &mut r).unwrap().output().shape()
    };
    let weights = Matrix::from_fn(out_shape.0, out_shape.1, |_, _| rng.gen_range(-1.0..1.0));

    let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
    let fwd = work.forward(x, &mut r).unwrap();
    let (grads, dx) = net.backward(&fwd, &weights).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let (_, base) = probe_loss(&mut work, x, &weights, dropout_seed);

    let mut kinks = 0;
    let mut param_rel = Vec::new();
    let n_layers = work.len();
    let ids: Vec<(String, usize)> = work
        .param_slots(0..n_layers)
        .iter()
        .map(|s| (s.id.clone(), s.values.len()))
        .collect();
    for (t, (id, len)) in ids.iter().enumerate() {
        let coords: Vec<usize> = if *len <= per_tensor {
            (0..*len).collect()
        } else {
            rand::seq::index::sample(&mut rng, *len, per_tensor).into_vec()
        };
        let (mut picked, mut numeric) = (Vec::new(), Vec::new());
        for &j in &coords {
            let orig = work.param_slots(0..n_layers)[t].values[j];
            let mut set = |n: &mut LayeredNet<f64>, _: &mut Matrix<f64>, h: f64| n.param_slots(0..n_layers)[t].values[j] = orig + h;
            match central(&mut work, x, &weights, dropout_seed, &base, &mut set) {
                Some(d) => {
                    numeric.push(d);
                    picked.push(analytic[t][j]);
                }
                None => kinks += 1,
            }
        }
        param_rel.push((id.clone(), rel_error(&picked, &numeric)));
    }

    let (mut picked, mut numeric) = (Vec::new(), Vec::new());
    for j in 0..x.as_slice().len() {
        let orig = x.as_slice()[j];
        let mut set = |_: &mut LayeredNet<f64>, xp: &mut Matrix<f64>, h: f64| xp.as_mut_slice()[j] = orig + h;
        match central(&mut work, x, &weights, dropout_seed, &base, &mut set) {
            Some(d) => {
                numeric.push(d);
                picked.push(dx.as_slice()[j]);
            }
            None => kinks += 1,
        }
    }
    GradCheck {
        param_rel,
        input_rel: rel_error(&picked, &numeric),
        kinks,
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

/// A pipeline config small enough to run every family in seconds.
pub fn tiny_config(output_dir: &std::path::Path, seeds: Vec<u64>) -> intervene_core::harness::ExperimentConfig {
    use intervene_core::harness::ExperimentConfig;
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.n = 400;
    cfg.dataset.p = 8;
    cfg.dataset.k = 3;
    for h in [&mut cfg.hyper.black_box, &mut cfg.hyper.cbm, &mut cfg.hyper.probe, &mut cfg.hyper.posthoc_head] {
        h.epochs = 2;
    }
    cfg.finetune.hyper.epochs = 2;
    cfg.intervention.max_steps = 10;
    cfg.intervention.batch_size = 64;
    cfg.grids.lambdas = vec![0.4, 1.6];
    cfg.grids.valsizes = vec![0.5];
    cfg.seeds = seeds;
    cfg.output_dir = output_dir.to_path_buf();
    cfg
}

/// AUROC by comparing every positive with every negative.
pub fn brute_auroc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u128, 0u128);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1;
            twice_wins += if si > sj { 2 } else if si == sj { 1 } else { 0 };
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// Average precision from precision and recall recounted at every distinct threshold.
pub fn brute_aupr(scores: &[f64], labels: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1.0).count() as u64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_tp) = (0.0, 0u64);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 1.0).count() as u64;
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 0.0).count() as u64;
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    ap
}

/// Exact probability of every k-subset (sorted) under sequential draws
/// proportional to `weights` without replacement.
pub fn subset_probabilities(weights: &[f64], k: usize) -> std::collections::BTreeMap<Vec<usize>, f64> {
    fn walk(w: &[f64], k: usize, chosen: &mut Vec<usize>, p: f64, out: &mut std::collections::BTreeMap<Vec<usize>, f64>) {
        if chosen.len() == k {
            let mut key = chosen.clone();
            key.sort_unstable();
            *out.entry(key).or_insert(0.0) += p;
            return;
        }
        let rest: f64 = (0..w.len()).filter(|i| !chosen.contains(i)).map(|i| w[i]).sum();
        for i in 0..w.len() {
            if chosen.contains(&i) {
                continue;
            }
            chosen.push(i);
            walk(w, k, chosen, p * w[i] / rest, out);
            chosen.pop();
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(weights, k, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Pearson chi-square p-value of observed counts against exact probabilities.
pub fn chi_square_p(observed: &std::collections::BTreeMap<Vec<usize>, u64>, expected: &std::collections::BTreeMap<Vec<usize>, f64>, draws: u64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if expected.len() < 2 {
        return 1.0;
    }
    let stat: f64 = expected
        .iter()
        .map(|(key, &p)| {
            let e = p * draws as f64;
            let o = *observed.get(key).unwrap_or(&0) as f64;
            (o - e) * (o - e) / e
        })
        .sum();
    let unexpected = observed.keys().any(|key| !expected.contains_key(key));
    if unexpected {
        return 0.0;
    }
    1.0 - ChiSquared::new((expected.len() - 1) as f64).unwrap().cdf(stat)
}

fn with_mode(mut net: LayeredNet<f64>, mode: Mode) -> LayeredNet<f64> {
    net.set_mode(mode);
    net
}

/// Worst relative error of every layer kind, wrapped between affines, in both modes.
pub fn layer_kind_checks(seed: u64) -> Vec<(String, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let kinds: Vec<(&str, Layer<f64>)> = vec![
        ("affine", Layer::affine_he(4, 3, &mut rng)),
        ("relu", Layer::Relu),
        ("sigmoid", Layer::Sigmoid),
        ("softmax", Layer::Softmax),
        ("dropout", Layer::dropout(0.3).unwrap()),
        ("batchnorm", Layer::batchnorm(4, 0.1, 1e-5).unwrap()),
    ];
    let mut out = Vec::new();
    for (name, layer) in kinds {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (w_in, w_out) = layer.dims().unwrap_or((4, 4));
        let net = LayeredNet::new(vec![Layer::affine_he(4, w_in, &mut r), layer, Layer::affine_he(w_out, 2, &mut r)]).unwrap();
        let x = random_matrix(5, 4, &mut r);
        for mode in [Mode::Train, Mode::Eval] {
            let r = check_net(&with_mode(net.clone(), mode), &x, seed);
            out.push((format!("{name}/{mode:?}"), r.worst(), r.kinks));
        }
    }
    out
}

/// Relative error of the edit objective's gradient with respect to `z′`.
pub fn edit_objective_check(seed: u64, linearity: intervene_core::models::ProbeLinearity, distance: intervene_core::interventions::DistanceKind) -> f64 {
    use intervene_core::interventions::{edit_objective, InterventionConfig};
    use intervene_core::models::ProbeModel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, k) = (3, 6, 4);
    let probe = ProbeModel::init(d, k, linearity, &mut rng);
    let z = random_matrix(n, d, &mut rng);
    let noise = random_matrix(n, d, &mut rng);
    let z_edit = z.zip_map(&noise, |a, b| a + 0.3 * b).unwrap();
    let target = Matrix::from_fn(n, k, |_, _| rng.gen_range(0.0..=1.0));
    let cfg = InterventionConfig {
        lambda: [0.2, 0.8, 3.2][(seed % 3) as usize],
        distance,
        ..Default::default()
    };
    let (_, grad) = edit_objective(&z, &z_edit, &target, &probe, &cfg, true).unwrap();
    let total = |ze: &Matrix<f64>| -> f64 { edit_objective(&z, ze, &target, &probe, &cfg, false).unwrap().0.iter().sum() };
    let mut ze = z_edit.clone();
    let mut numeric = vec![0.0; ze.as_slice().len()];
    for (j, slot) in numeric.iter_mut().enumerate() {
        let orig = ze.as_slice()[j];
        ze.as_mut_slice()[j] = orig + FD_STEP;
        let up = total(&ze);
        ze.as_mut_slice()[j] = orig - FD_STEP;
        let down = total(&ze);
        ze.as_mut_slice()[j] = orig;
        *slot = (up - down) / (2.0 * FD_STEP);
    }
    rel_error(grad.unwrap().as_slice(), &numeric)
}

/// Relative error of the mean binary cross-entropy gradient with respect to the probabilities.
pub fn bce_loss_check(seed: u64) -> f64 {
    use intervene_core::neural::bce_loss;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Matrix::from_fn(4, 3, |_, _| rng.gen_range(0.05..0.95));
    let t = Matrix::from_fn(4, 3, |_, _| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { rng.gen_range(0..2) as f64 });
    let (_, grad) = bce_loss(&p, &t).unwrap();
    let mut q = p.clone();
    let mut numeric = vec![0.0; q.as_slice().len()];
    for (j, slot) in numeric.iter_mut().enumerate() {
        let orig = q.as_slice()[j];
        q.as_mut_slice()[j] = orig + FD_STEP;
        let up = bce_loss(&q, &t).unwrap().0;
        q.as_mut_slice()[j] = orig - FD_STEP;
        let down = bce_loss(&q, &t).unwrap().0;
        q.as_mut_slice()[j] = orig;
        *slot = (up - down) / (2.0 * FD_STEP);
    }
    rel_error(grad.as_slice(), &numeric)
}

/// Coordinates differenced per parameter tensor of the full-width models.
pub const SAMPLED_COORDS: usize = 20;

/// Worst relative error of every composed model on one random instance.
pub fn composed_model_checks(seed: u64) -> Vec<(String, f64, usize)> {
    use intervene_core::finetune::AppendHead;
    use intervene_core::interventions::DistanceKind;
    use intervene_core::models::{BlackBoxModel, CbmMode, CbmModel, ProbeLinearity, ProbeModel};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, k, d) = (8, 4, intervene_core::models::FCNN_WIDTH);
    let mut out = Vec::new();
    let x = random_matrix(4, p, &mut rng);

    let bb = BlackBoxModel::<f64>::init(p, seed);
    let cbm = CbmModel::<f64>::init(p, k, CbmMode::Joint, 1.0, seed).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let r = check_net_sampled(&with_mode(bb.net.clone(), mode), &x, seed, SAMPLED_COORDS);
        out.push((format!("black_box/{mode:?}"), r.worst(), r.kinks));
        let r = check_net_sampled(&with_mode(cbm.net.clone(), mode), &x, seed, SAMPLED_COORDS);
        out.push((format!("cbm/{mode:?}"), r.worst(), r.kinks));
    }

    let z = random_matrix(4, d, &mut rng);
    for lin in [ProbeLinearity::Linear, ProbeLinearity::Nonlinear] {
        let probe = ProbeModel::<f64>::init(d, k, lin, &mut rng);
        let r = check_net_sampled(&probe.net.clone().eval(), &z, seed, SAMPLED_COORDS);
        out.push((format!("probe/{lin:?}"), r.worst(), r.kinks));
        if lin == ProbeLinearity::Linear {
            let head = LayeredNet::new(vec![Layer::affine_he(k, 1, &mut rng), Layer::Sigmoid]).unwrap();
            let post_hoc = probe.net.clone().eval().chain(&head).unwrap();
            let r = check_net_sampled(&post_hoc, &z, seed, SAMPLED_COORDS);
            out.push(("post_hoc".into(), r.worst(), r.kinks));
        }
    }

    let mut append = AppendHead::from_black_box(&bb, k).unwrap();
    if let Layer::Affine { weight, .. } = &mut append.net.layers_mut()[0] {
        for j in d..d + k {
            weight[(0, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let zc = z.hstack(&Matrix::from_fn(4, k, |_, _| rng.gen_range(0.0..1.0))).unwrap();
    let r = check_net_sampled(&append.net, &zc, seed, SAMPLED_COORDS);
    out.push(("append_head".into(), r.worst(), r.kinks));

    for lin in [ProbeLinearity::Linear, ProbeLinearity::Nonlinear] {
        for dist in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            out.push((format!("edit_objective/{lin:?}/{dist:?}"), edit_objective_check(seed, lin, dist), 0));
        }
    }
    out.push(("bce_loss".into(), bce_loss_check(seed), 0));
    out
}
