//! Sequential networks: parameters, forward with an activation tape, and backprop.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_forward, bilinear_upsample, bilinear_upsample_backward, sigmoid,
    BatchNormCache, LayerSpec, BATCH_NORM_MOMENTUM,
};
use super::linalg::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

/// Batch-norm behaviour: batch statistics (`Train`) or running statistics (`Infer`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Layer list plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input_shape, layers };
        spec.layer_shapes()?;
        Ok(spec)
    }

    /// Per-sample shapes: input followed by the output of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Dimension(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::Dimension(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().expect("non-empty"))
    }

    /// Index of the final dense layer; its input is the penultimate-layer encoding.
    pub fn penultimate_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Dense { .. }))
    }
}

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Weight then optional bias (dense, conv) or scale then shift (batch norm).
    pub trainable: Vec<Tensor>,
    /// Running mean then running variance (batch norm only).
    pub running: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<LayerParams>,
}

impl ParameterSet {
    /// Gaussian weights (std [`INIT_STD`]), zero biases, unit batch-norm scale.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|layer| {
                let trainable = layer
                    .trainable_shapes()
                    .into_iter()
                    .enumerate()
                    .map(|(i, shape)| match (layer, i) {
                        (LayerSpec::BatchNorm { .. }, 0) => Tensor::full(&shape, 1.0),
                        (LayerSpec::BatchNorm { .. }, _) | (_, 1) => Tensor::zeros(&shape),
                        _ => Tensor::randn(&shape, INIT_STD, rng),
                    })
                    .collect();
                let running = layer
                    .running_shapes()
                    .into_iter()
                    .enumerate()
                    .map(|(i, shape)| Tensor::full(&shape, if i == 0 { 0.0 } else { 1.0 }))
                    .collect();
                LayerParams { trainable, running }
            })
            .collect();
        Self { layers }
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Dimension(format!(
                "{} parameter groups for {} layers",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (p, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let want_t = l.trainable_shapes();
            let want_r = l.running_shapes();
            let got_t: Vec<&[usize]> = p.trainable.iter().map(|t| t.shape()).collect();
            let got_r: Vec<&[usize]> = p.running.iter().map(|t| t.shape()).collect();
            if got_t != want_t.iter().map(|s| s.as_slice()).collect::<Vec<_>>()
                || got_r != want_r.iter().map(|s| s.as_slice()).collect::<Vec<_>>()
            {
                return Err(Error::Dimension(format!("layer {i} parameter shapes do not match its spec")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.trainable).map(Tensor::len).sum()
    }
}

/// Gradients mirroring [`ParameterSet`]'s trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| l.trainable.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flatten().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    /// Elementwise `self += other`; layouts must match.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
            });
        if !same {
            return Err(Error::Dimension("gradient layouts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().flatten().zip(other.layers.iter().flatten()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Input(Tensor),
    Output(Tensor),
    BatchNorm(BatchNormCache),
}

/// Activation record of one forward call, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    owner: u64,
    version: u64,
    mode: Mode,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
    caches: Vec<Cache>,
    kink_layers: Vec<bool>,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn layers(&self) -> usize {
        self.caches.len()
    }

    /// Signs of every ReLU / leaky-ReLU input; changes mark a crossed kink.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.caches
            .iter()
            .zip(&self.kink_layers)
            .filter_map(|(c, is_kink)| match c {
                Cache::Input(t) if *is_kink => Some(t),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| *v > 0.0))
            .collect()
    }
}

/// A [`NetworkSpec`] with its parameters.
///
/// Every network carries an identity and a parameter version; a tape is only
/// accepted by the network (and parameter state) that produced it.
#[derive(Debug)]
pub struct Network {
    id: u64,
    version: u64,
    spec: NetworkSpec,
    params: ParameterSet,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.layer_shapes()?;
        let params = ParameterSet::init(&spec, rng);
        Self::from_parts(spec, params)
    }

    pub fn from_parts(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        spec.layer_shapes()?;
        params.check_against(&spec)?;
        Ok(Self { id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed), version: 0, spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut ParameterSet {
        self.version += 1;
        &mut self.params
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        self.forward_prefix(input, mode, self.spec.layers.len())
    }

    /// Runs only `layers[..upto]`.
    pub fn forward_prefix(&self, input: &Tensor, mode: Mode, upto: usize) -> Result<(Tensor, Tape)> {
        if upto > self.spec.layers.len() {
            return Err(Error::Argument(format!("network has {} layers, asked for {upto}", self.spec.layers.len())));
        }
        if input.shape().len() < 2 || input.sample_shape() != self.spec.input_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match (batch, {:?})",
                input.shape(),
                self.spec.input_shape
            )));
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(upto);
        let mut input_shapes = Vec::with_capacity(upto);
        for (i, layer) in self.spec.layers[..upto].iter().enumerate() {
            input_shapes.push(x.shape().to_vec());
            let params = &self.params.layers[i];
            let (y, cache) = layer_forward(layer, params, x, mode)?;
            if let Some(bad) = y.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric { layer: i, detail: format!("{} produced a non-finite value at {bad}", layer.name()) });
            }
            caches.push(cache);
            x = y;
        }
        let tape = Tape {
            owner: self.id,
            version: self.version,
            mode,
            input_shapes,
            output_shape: x.shape().to_vec(),
            caches,
            kink_layers: self.spec.layers[..upto].iter().map(LayerSpec::has_kink).collect(),
        };
        Ok((x, tape))
    }

    /// Backpropagates `output_gradient` through the layers recorded on `tape`.
    ///
    /// Returns gradients for every trainable tensor (zero for layers beyond a
    /// prefix tape) and the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, output_gradient: &Tensor) -> Result<(Gradients, Tensor)> {
        if tape.owner != self.id || tape.version != self.version {
            return Err(Error::Consistency("tape was recorded by a different network or parameter state".into()));
        }
        if output_gradient.shape() != tape.output_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                output_gradient.shape(),
                tape.output_shape
            )));
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let mut g = output_gradient.clone();
        for i in (0..tape.caches.len()).rev() {
            let layer = &self.spec.layers[i];
            let (gin, pgrads) = layer_backward(layer, &self.params.layers[i], &tape.caches[i], &tape.input_shapes[i], g)?;
            if let Some(p) = pgrads {
                grads.layers[i] = p;
            }
            g = gin;
        }
        Ok((grads, g))
    }

    /// Folds the batch statistics recorded on a train-mode tape into the running estimates.
    pub fn commit_batch_statistics(&mut self, tape: &Tape) -> Result<()> {
        if tape.owner != self.id || tape.version != self.version {
            return Err(Error::Consistency("tape was recorded by a different network or parameter state".into()));
        }
        if tape.mode != Mode::Train {
            return Ok(());
        }
        self.version += 1;
        for (i, cache) in tape.caches.iter().enumerate() {
            if let Cache::BatchNorm(bn) = cache {
                let unbias = bn.count as f64 / (bn.count as f64 - 1.0);
                let running = &mut self.params.layers[i].running;
                for (r, b) in running[0].data_mut().iter_mut().zip(&bn.batch_mean) {
                    *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * b;
                }
                for (r, b) in running[1].data_mut().iter_mut().zip(&bn.batch_var) {
                    *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * b * unbias;
                }
            }
        }
        Ok(())
    }
}

fn layer_forward(layer: &LayerSpec, params: &LayerParams, x: Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
    let batch = x.batch();
    match layer {
        LayerSpec::Dense { inputs, outputs, bias } => {
            let (ni, no) = (*inputs, *outputs);
            let w = &params.trainable[0];
            let mut y = vec![0.0; batch * no];
            if *bias {
                for row in y.chunks_mut(no) {
                    row.copy_from_slice(params.trainable[1].data());
                }
            }
            gemm(
                x.data(),
                View::row_major(batch, ni),
                w.data(),
                View::transposed(no, ni),
                if *bias { 1.0 } else { 0.0 },
                &mut y,
                View::row_major(batch, no),
            );
            Ok((Tensor::from_parts(vec![batch, no], y), Cache::Input(x)))
        }
        LayerSpec::BatchNorm { .. } => {
            let t = &params.trainable;
            let r = &params.running;
            let (y, cache) = batchnorm_forward(&x, &t[0], &t[1], &r[0], &r[1], mode == Mode::Train)?;
            Ok((y, Cache::BatchNorm(cache)))
        }
        LayerSpec::Relu => {
            let y = x.data().iter().map(|v| v.max(0.0)).collect();
            Ok((Tensor::from_parts(x.shape().to_vec(), y), Cache::Input(x)))
        }
        LayerSpec::LeakyRelu { slope } => {
            let y = x.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
            Ok((Tensor::from_parts(x.shape().to_vec(), y), Cache::Input(x)))
        }
        LayerSpec::Sigmoid => {
            let y = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid(v)).collect());
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerSpec::Tanh => {
            let y = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.tanh()).collect());
            Ok((y.clone(), Cache::Output(y)))
        }
        LayerSpec::Reshape { shape } => {
            let mut full = vec![batch];
            full.extend(shape);
            Ok((x.reshape(full)?, Cache::None))
        }
        _ => {
            let conv = layer.conv().expect("remaining kinds are convolutions");
            let bias = conv.bias.then(|| &params.trainable[1]);
            let y = conv.forward(&x, &params.trainable[0], bias);
            let y = if conv.upsample { bilinear_upsample(&y, 2)? } else { y };
            Ok((y, Cache::Input(x)))
        }
    }
}

type LayerGrad = (Tensor, Option<Vec<Tensor>>);

fn layer_backward(
    layer: &LayerSpec,
    params: &LayerParams,
    cache: &Cache,
    input_shape: &[usize],
    g: Tensor,
) -> Result<LayerGrad> {
    let stale = || Error::Consistency(format!("{} tape entry has the wrong kind", layer.name()));
    match (layer, cache) {
        (LayerSpec::Dense { inputs, outputs, bias }, Cache::Input(x)) => {
            let (ni, no, batch) = (*inputs, *outputs, x.batch());
            let w = &params.trainable[0];
            let mut dw = vec![0.0; no * ni];
            gemm(g.data(), View::transposed(batch, no), x.data(), View::row_major(batch, ni), 0.0, &mut dw, View::row_major(no, ni));
            let mut dx = vec![0.0; batch * ni];
            gemm(g.data(), View::row_major(batch, no), w.data(), View::row_major(no, ni), 0.0, &mut dx, View::row_major(batch, ni));
            let mut pg = vec![Tensor::from_parts(vec![no, ni], dw)];
            if *bias {
                let mut db = vec![0.0; no];
                for row in g.data().chunks(no) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                pg.push(Tensor::from_parts(vec![no], db));
            }
            Ok((Tensor::from_parts(vec![batch, ni], dx), Some(pg)))
        }
        (LayerSpec::BatchNorm { .. }, Cache::BatchNorm(bn)) => {
            let (dx, dgamma, dbeta) = batchnorm_backward(&g, &params.trainable[0], bn);
            Ok((dx, Some(vec![dgamma, dbeta])))
        }
        (LayerSpec::Relu, Cache::Input(x)) => {
            let d = g.data().iter().zip(x.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
            Ok((Tensor::from_parts(g.shape().to_vec(), d), None))
        }
        (LayerSpec::LeakyRelu { slope }, Cache::Input(x)) => {
            let d = g.data().iter().zip(x.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { slope * gv }).collect();
            Ok((Tensor::from_parts(g.shape().to_vec(), d), None))
        }
        (LayerSpec::Sigmoid, Cache::Output(y)) => {
            let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
            Ok((Tensor::from_parts(g.shape().to_vec(), d), None))
        }
        (LayerSpec::Tanh, Cache::Output(y)) => {
            let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
            Ok((Tensor::from_parts(g.shape().to_vec(), d), None))
        }
        (LayerSpec::Reshape { .. }, Cache::None) => Ok((g.reshape(input_shape.to_vec())?, None)),
        (_, Cache::Input(x)) if layer.conv().is_some() => {
            let conv = layer.conv().expect("checked");
            let g = if conv.upsample { bilinear_upsample_backward(&g)? } else { g };
            let (dx, dw, db) = conv.backward(x, &params.trainable[0], &g);
            let mut pg = vec![dw];
            pg.extend(db);
            Ok((dx, Some(pg)))
        }
        _ => Err(stale()),
    }
}
