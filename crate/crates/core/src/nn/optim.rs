use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters. `beta1 = 0.5` is the usual choice for adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_epsilon")]
    pub epsilon: f64,
}

impl AdamConfig {
    fn default_beta1() -> f64 {
        0.5
    }

    fn default_beta2() -> f64 {
        0.999
    }

    fn default_epsilon() -> f64 {
        1e-8
    }

    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            epsilon: Self::default_epsilon(),
        }
    }
}

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<Tensor>>,
    second_moment: Vec<Vec<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        let zeros = Gradients::zeros_like(params).layers;
        Self { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub(crate) fn from_parts(
        config: AdamConfig,
        step: u64,
        first_moment: Vec<Vec<Tensor>>,
        second_moment: Vec<Vec<Tensor>>,
    ) -> Self {
        Self { config, step, first_moment, second_moment }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<Tensor>], &[Vec<Tensor>]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        self.step_params(net.params_mut(), grads)
    }

    /// One update of `params` against `grads`; increments the step counter.
    pub fn step_params(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::Dimension("gradient layout does not match parameters".into()));
        }
        for (i, layer) in grads.layers.iter().enumerate() {
            if layer.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric { layer: i, detail: "non-finite gradient".into() });
            }
            let shapes_match = layer.len() == params.layers[i].trainable.len()
                && layer.iter().zip(&params.layers[i].trainable).all(|(g, p)| g.shape() == p.shape());
            if !shapes_match {
                return Err(Error::Dimension(format!("layer {i} gradient shapes do not match parameters")));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (i, layer) in grads.layers.iter().enumerate() {
            for (j, g) in layer.iter().enumerate() {
                let p = params.layers[i].trainable[j].data_mut();
                let m = self.first_moment[i][j].data_mut();
                let v = self.second_moment[i][j].data_mut();
                for k in 0..p.len() {
                    let gk = g.data()[k];
                    m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                    let m_hat = m[k] / correction1;
                    let v_hat = v[k] / correction2;
                    p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> Network {
        let spec = NetworkSpec::new(vec![1], vec![LayerSpec::Dense { inputs: 1, outputs: 1, bias: false }]).unwrap();
        let mut net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.params_mut().layers[0].trainable[0].data_mut()[0] = w;
        net
    }

    fn grad(v: f64) -> Gradients {
        Gradients { layers: vec![vec![Tensor::full(&[1, 1], v)]] }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.3);
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.002), net.params());
        adam.step(&mut net, &grad(0.0)).unwrap();
        assert_eq!(net.params().layers[0].trainable[0].data()[0], 0.3);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m = 0.5, v = 0.001, m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let mut net = scalar_net(0.0);
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.002), net.params());
        adam.step(&mut net, &grad(1.0)).unwrap();
        let d1 = net.params().layers[0].trainable[0].data()[0];
        assert!((d1 - -0.002 / (1.0 + 1e-8)).abs() < 1e-15);
        adam.step(&mut net, &grad(1.0)).unwrap();
        let d2 = net.params().layers[0].trainable[0].data()[0] - d1;
        assert!(d2.abs() <= d1.abs() + 1e-9);
    }

    #[test]
    fn zero_betas_give_sign_normalized_steps() {
        let mut net = scalar_net(1.0);
        let config = AdamConfig { learning_rate: 0.1, beta1: 0.0, beta2: 0.0, epsilon: 1e-8 };
        let mut adam = Adam::new(config, net.params());
        adam.step(&mut net, &grad(-4.0)).unwrap();
        let want = 1.0 + 0.1 * 4.0 / (4.0 + 1e-8);
        assert!((net.params().layers[0].trainable[0].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1), net.params());
        assert!(matches!(adam.step(&mut net, &grad(f64::NAN)), Err(Error::Numeric { layer: 0, .. })));
        assert_eq!(adam.steps_taken(), 0);
    }
}
