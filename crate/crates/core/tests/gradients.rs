mod common;

use common::{check_net, composed_model_checks, layer_kind_checks, random_matrix};
use intervene_core::neural::{Layer, LayeredNet, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn assert_ok(net: &LayeredNet<f64>, batch: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = net.input_dim().unwrap_or(4);
    let x = random_matrix(batch, width, &mut rng);
    let report = check_net(net, &x, seed);
    assert!(
        report.worst() < TOL,
        "seed {seed}: params {:?}, input {}",
        report.param_rel,
        report.input_rel
    );
}

fn with_mode(mut net: LayeredNet<f64>, mode: Mode) -> LayeredNet<f64> {
    net.set_mode(mode);
    net
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..5u64 {
        for (name, worst, _) in layer_kind_checks(seed) {
            assert!(worst < TOL, "seed {seed}: {name} rel error {worst}");
        }
    }
}

#[test]
fn composed_models_match_finite_differences() {
    for seed in 0..2u64 {
        for (name, worst, _) in composed_model_checks(seed) {
            assert!(worst < TOL, "seed {seed}: {name} rel error {worst}");
        }
    }
}

#[test]
fn random_two_layer_nets() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = LayeredNet::new(vec![
            Layer::affine_he(5, 7, &mut rng),
            Layer::Relu,
            Layer::affine_he(7, 3, &mut rng),
            Layer::Sigmoid,
        ])
        .unwrap();
        assert_ok(&net, 6, seed);
    }
}

#[test]
fn batchnorm_with_perturbed_running_stats_in_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bn = Layer::<f64>::batchnorm(3, 0.1, 1e-5).unwrap();
    if let Layer::BatchNorm { scale, shift, running_mean, running_var, .. } = &mut bn {
        scale.copy_from_slice(&[1.5, 0.5, -0.7]);
        shift.copy_from_slice(&[0.1, -0.2, 0.3]);
        running_mean.copy_from_slice(&[0.2, -0.1, 0.05]);
        running_var.copy_from_slice(&[0.8, 1.3, 2.0]);
    }
    let net = LayeredNet::new(vec![Layer::affine_he(4, 3, &mut rng), bn, Layer::Sigmoid]).unwrap();
    assert_ok(&with_mode(net.clone(), Mode::Eval), 4, 5);
    assert_ok(&with_mode(net, Mode::Train), 4, 5);
}
