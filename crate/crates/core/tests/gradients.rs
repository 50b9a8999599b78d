//! Backprop against finite differences for every layer kind and both preset pairs.

use pigan_core::nn::{
    check_spec, finite_difference_gradcheck, standard_suite, ConvPreset, GradcheckOptions, LayerSpec, MlpPreset, Mode,
    Network, NetworkSpec, ScalarLoss, Tensor, SUITE_TOLERANCE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(spec: NetworkSpec, batch: usize, mode: Mode, opts: GradcheckOptions) -> f64 {
    let report = check_spec(&spec, batch, mode, opts).unwrap();
    assert!(report.checked > 0);
    assert!(report.skipped_kinks * 10 <= report.checked.max(10), "too many kink skips: {report:?}");
    report.max_relative_error
}

#[test]
fn every_layer_kind_and_desk_preset() {
    let cases = standard_suite(100, 2_000, 0).unwrap();
    assert_eq!(cases.len(), 2 * 13 + 4);
    for case in &cases {
        println!("{:>24} {:?}: {:.3e}", case.name, case.mode, case.report.max_relative_error);
        assert!(case.report.checked > 0, "{}", case.name);
        assert!(case.passed(), "{} {:?}: {:?}", case.name, case.mode, case.report);
    }
}

#[test]
fn two_layer_dense_sigmoid_matches_central_differences() {
    let spec = NetworkSpec::new(vec![3], vec![LayerSpec::dense(3, 4), LayerSpec::Sigmoid, LayerSpec::dense(4, 2), LayerSpec::Sigmoid]).unwrap();
    let opts = GradcheckOptions { h: 1e-5, ..GradcheckOptions::default() };
    assert!(check(spec, 3, Mode::Train, opts) < 1e-6);
}

#[test]
fn linear_net_with_quadratic_loss_is_exact() {
    let spec = NetworkSpec::new(vec![4], vec![LayerSpec::dense(4, 3), LayerSpec::dense(3, 2)]).unwrap();
    let net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = Tensor::randn(&[2, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let report = finite_difference_gradcheck(&net, &x, Mode::Train, ScalarLoss::HalfSquares, GradcheckOptions::default()).unwrap();
    assert!(report.max_relative_error < 1e-9, "{report:?}");
}

#[test]
fn batch_norm_in_train_mode() {
    let spec = NetworkSpec::new(
        vec![4],
        vec![LayerSpec::dense(4, 5), LayerSpec::Tanh, LayerSpec::BatchNorm { channels: 5 }, LayerSpec::dense(5, 2)],
    )
    .unwrap();
    assert!(check(spec, 6, Mode::Train, GradcheckOptions::default()) < 1e-4);
}

#[test]
fn small_conv_presets_with_another_seed() {
    let preset = ConvPreset { image_size: 8, latent_dim: 6, width: 2, kernel: 3 };
    let opts = GradcheckOptions { seed: 9, ..GradcheckOptions::default() };
    for spec in [preset.generator().unwrap(), preset.discriminator().unwrap()] {
        for mode in [Mode::Train, Mode::Infer] {
            assert!(check(spec.clone(), 3, mode, opts) < SUITE_TOLERANCE);
        }
    }
}

#[test]
fn mlp_presets() {
    let preset = MlpPreset { latent_dim: 8, hidden: 16, data_dim: 2 };
    for spec in [preset.generator().unwrap(), preset.discriminator().unwrap()] {
        assert!(check(spec, 4, Mode::Train, GradcheckOptions::default()) < SUITE_TOLERANCE);
    }
}

#[test]
fn step_outside_range_is_rejected() {
    let net = Network::new(NetworkSpec::new(vec![2], vec![LayerSpec::Relu]).unwrap(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let opts = GradcheckOptions { h: 1e-2, ..GradcheckOptions::default() };
    assert!(finite_difference_gradcheck(&net, &Tensor::zeros(&[1, 2]), Mode::Infer, ScalarLoss::Sum, opts).is_err());
}
