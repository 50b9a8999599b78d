//! Backprop versus finite differences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::LayerSpec;
use super::network::{Mode, Network, NetworkSpec};
use super::presets::ConvPreset;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scalar reduction applied to the network output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarLoss {
    Sum,
    /// `0.5 * Σ y²`.
    HalfSquares,
    /// `Σ w_i y_i` with fixed standard-normal weights drawn from `seed`.
    Weighted { seed: u64 },
}

impl ScalarLoss {
    fn weights(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn value(&self, y: &Tensor) -> f64 {
        match *self {
            ScalarLoss::Sum => y.data().iter().sum(),
            ScalarLoss::HalfSquares => 0.5 * y.data().iter().map(|v| v * v).sum::<f64>(),
            ScalarLoss::Weighted { seed } => {
                Self::weights(seed, y.len()).iter().zip(y.data()).map(|(w, v)| w * v).sum()
            }
        }
    }

    pub fn gradient(&self, y: &Tensor) -> Tensor {
        let data = match *self {
            ScalarLoss::Sum => vec![1.0; y.len()],
            ScalarLoss::HalfSquares => y.data().to_vec(),
            ScalarLoss::Weighted { seed } => Self::weights(seed, y.len()),
        };
        Tensor::from_parts(y.shape().to_vec(), data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Finite-difference step, in `[1e-7, 1e-3]`.
    pub h: f64,
    /// Coordinates beyond this count are randomly subsampled.
    pub max_coordinates: usize,
    /// Also check the gradient with respect to the input.
    pub include_input: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { h: 1e-4, max_coordinates: 10_000, include_input: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// `layer/tensor/index` (or `input/index`) of the worst coordinate.
    pub worst: Option<String>,
    pub total_coordinates: usize,
    pub checked: usize,
    /// Coordinates whose perturbation moved an activation across a ReLU kink.
    pub skipped_kinks: usize,
}

#[derive(Clone, Copy)]
enum Coordinate {
    Param { layer: usize, tensor: usize, index: usize },
    Input(usize),
}

/// `|g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8)`.
pub fn relative_error(backprop: f64, numeric: f64) -> f64 {
    (backprop - numeric).abs() / backprop.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative discrepancy between [`Network::backward`] and a
/// fourth-order central difference `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// Coordinates where any perturbation flips the sign of a ReLU input are
/// skipped and counted: the loss is not differentiable across those kinks.
pub fn finite_difference_gradcheck(
    net: &Network,
    input: &Tensor,
    mode: Mode,
    loss: ScalarLoss,
    opts: GradcheckOptions,
) -> Result<GradcheckReport> {
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(Error::Argument(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.h)));
    }
    let (y, tape) = net.forward(input, mode)?;
    let (grads, input_grad) = net.backward(&tape, &loss.gradient(&y))?;
    let base_signature = tape.kink_signature();

    let mut coords = Vec::new();
    for (l, layer) in net.params().layers.iter().enumerate() {
        for (t, tensor) in layer.trainable.iter().enumerate() {
            coords.extend((0..tensor.len()).map(|index| Coordinate::Param { layer: l, tensor: t, index }));
        }
    }
    if opts.include_input {
        coords.extend((0..input.len()).map(Coordinate::Input));
    }
    let total = coords.len();
    if total > opts.max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = sample(&mut rng, total, opts.max_coordinates).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let mut probe = net.clone();
    let mut x = input.clone();
    let mut report = GradcheckReport { max_relative_error: 0.0, worst: None, total_coordinates: total, checked: 0, skipped_kinks: 0 };
    for coord in coords {
        let original = match coord {
            Coordinate::Param { layer, tensor, index } => probe.params().layers[layer].trainable[tensor].data()[index],
            Coordinate::Input(i) => x.data()[i],
        };
        let mut values = [0.0; 4];
        let mut crossed = false;
        for (slot, offset) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
            let v = original + offset * opts.h;
            match coord {
                Coordinate::Param { layer, tensor, index } => {
                    probe.params_mut().layers[layer].trainable[tensor].data_mut()[index] = v
                }
                Coordinate::Input(i) => x.data_mut()[i] = v,
            }
            let (out, t) = probe.forward(&x, mode)?;
            values[slot] = loss.value(&out);
            crossed |= t.kink_signature() != base_signature;
        }
        match coord {
            Coordinate::Param { layer, tensor, index } => {
                probe.params_mut().layers[layer].trainable[tensor].data_mut()[index] = original
            }
            Coordinate::Input(i) => x.data_mut()[i] = original,
        }
        if crossed {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (8.0 * (values[1] - values[2]) - (values[0] - values[3])) / (12.0 * opts.h);
        let (analytic, label) = match coord {
            Coordinate::Param { layer, tensor, index } => {
                (grads.layers[layer][tensor].data()[index], format!("layer {layer} tensor {tensor} [{index}]"))
            }
            Coordinate::Input(i) => (input_grad.data()[i], format!("input [{i}]")),
        };
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(label);
        }
    }
    Ok(report)
}

/// Relative error below which a suite case passes.
pub const SUITE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: String,
    pub mode: Mode,
    pub report: GradcheckReport,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < SUITE_TOLERANCE
    }
}

/// Adds fan-in scaled noise to weights and biases so every path carries
/// signal; the 0.02 training init leaves most gradients near the `1e-8` floor.
pub fn randomize_for_gradcheck<R: rand::Rng + ?Sized>(net: &mut Network, rng: &mut R) {
    for layer in &mut net.params_mut().layers {
        for (i, t) in layer.trainable.iter_mut().enumerate() {
            // Rank-1 tensors at index 0 are batch-norm scales; keep them near one.
            if t.shape().len() > 1 || i == 1 {
                let fan_in = if t.shape().len() > 1 { t.len() / t.shape()[0] } else { 4 };
                let noise = Tensor::randn(t.shape(), 1.0 / (fan_in as f64).sqrt(), rng);
                for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
                    *v += n;
                }
            }
        }
    }
}

/// Checks one randomized network on a standard-normal batch.
pub fn check_spec(spec: &NetworkSpec, batch: usize, mode: Mode, opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(11));
    let mut net = Network::new(spec.clone(), &mut rng)?;
    randomize_for_gradcheck(&mut net, &mut rng);
    let mut shape = vec![batch];
    shape.extend(&spec.input_shape);
    let x = Tensor::randn(&shape, 1.0, &mut rng);
    finite_difference_gradcheck(&net, &x, mode, ScalarLoss::Weighted { seed: opts.seed.wrapping_add(3) }, opts)
}

/// One small network per layer kind.
pub fn layer_cases() -> Result<Vec<NetworkSpec>> {
    let single = |layer: LayerSpec, input: Vec<usize>| NetworkSpec::new(input, vec![layer]);
    vec![
        single(LayerSpec::dense(5, 3), vec![5]),
        single(LayerSpec::Dense { inputs: 4, outputs: 2, bias: false }, vec![4]),
        single(LayerSpec::ConvStride2 { in_channels: 2, out_channels: 3, kernel: 3, bias: true }, vec![2, 6, 6]),
        single(LayerSpec::ConvStride2 { in_channels: 1, out_channels: 2, kernel: 5, bias: true }, vec![1, 7, 7]),
        single(LayerSpec::ConvStride1 { in_channels: 2, out_channels: 2, kernel: 3, bias: true }, vec![2, 5, 5]),
        single(LayerSpec::ConvStride1Upsample2 { in_channels: 2, out_channels: 3, kernel: 3, bias: true }, vec![2, 3, 4]),
        single(LayerSpec::BatchNorm { channels: 3 }, vec![3]),
        single(LayerSpec::BatchNorm { channels: 2 }, vec![2, 3, 3]),
        single(LayerSpec::Relu, vec![6]),
        single(LayerSpec::leaky_relu(), vec![6]),
        single(LayerSpec::Sigmoid, vec![6]),
        single(LayerSpec::Tanh, vec![6]),
        single(LayerSpec::Reshape { shape: vec![2, 3] }, vec![6]),
    ]
    .into_iter()
    .collect()
}

/// Every layer kind in isolation plus the conv preset pair at 16x16, each in
/// both modes. Preset coordinates are subsampled to `preset_coordinates`.
pub fn standard_suite(latent_dim: usize, preset_coordinates: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let opts = GradcheckOptions { seed, ..GradcheckOptions::default() };
    let mut cases = Vec::new();
    for spec in layer_cases()? {
        for mode in [Mode::Train, Mode::Infer] {
            let report = check_spec(&spec, 4, mode, opts)?;
            cases.push(SuiteCase { name: spec.layers[0].name().to_string(), mode, report });
        }
    }
    let preset = ConvPreset::desk(latent_dim);
    let opts = GradcheckOptions { max_coordinates: preset_coordinates, ..opts };
    for (name, spec) in [("desk generator", preset.generator()?), ("desk discriminator", preset.discriminator()?)] {
        for mode in [Mode::Train, Mode::Infer] {
            let report = check_spec(&spec, 3, mode, opts)?;
            cases.push(SuiteCase { name: name.to_string(), mode, report });
        }
    }
    Ok(cases)
}
