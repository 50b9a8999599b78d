//! The alternating adversarial training loop with the pi-weighted discriminator loss.
//!
//! Each outer iteration runs `k` discriminator steps on
//!
//! ```text
//! J_D = -(1 / 2m) (pi * sum log D(x_i) + (1 - pi) * sum log(1 - D(G(z_i))))
//! ```
//!
//! followed by one generator step on the non-saturating
//! `J_G = -(1 / m) sum log D(G(z_i))`. Only the discriminator parameters move
//! during the `k` inner steps.
//!
//! Randomness for outer iteration `t` comes from its own ChaCha stream, so a run
//! resumed from a checkpoint continues bit-for-bit like an uninterrupted one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasets::DataSource;
use crate::divergence::PiWeight;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Checkpoint, Gradients, Mode, NamedNetwork, Network, NetworkSpec, Tape, Tensor};

/// Discriminator outputs are clamped to `[D_CLAMP, 1 - D_CLAMP]` before logs.
pub const D_CLAMP: f64 = 1e-7;

pub const DEFAULT_CHECKPOINT_EVERY: u64 = 500;

const INIT_STREAM: u64 = u64::MAX;

/// Latent prior. The only supported law is `U[0, 1)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    #[default]
    Uniform01,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub pi: PiWeight,
    /// Discriminator steps per generator step; see [`GanConfig::k`] for the default.
    #[serde(default)]
    pub k: Option<usize>,
    pub batch_size: usize,
    pub latent_dim: usize,
    /// Outer (generator) iterations.
    pub iterations: u64,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub prior: Prior,
    /// Checkpoint cadence in outer iterations; 0 disables periodic checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_checkpoint_every() -> u64 {
    DEFAULT_CHECKPOINT_EVERY
}

impl GanConfig {
    pub fn new(pi: PiWeight, batch_size: usize, latent_dim: usize, iterations: u64, learning_rate: f64, seed: u64) -> Self {
        Self {
            pi,
            k: None,
            batch_size,
            latent_dim,
            iterations,
            learning_rate,
            seed,
            prior: Prior::Uniform01,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }

    /// Explicit `k`, else 3 for `pi <= 0.5` and 1 above.
    pub fn k(&self) -> usize {
        self.k.unwrap_or(if self.pi.value() <= 0.5 { 3 } else { 1 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Argument("latent dimension must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    /// Mean of the `k` discriminator losses of this iteration.
    pub j_d: f64,
    pub j_g: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,j_d,j_g";

    /// `iteration,j_d,j_g` with shortest round-trip float formatting.
    pub fn csv_row(&self) -> String {
        format!("{},{:?},{:?}", self.iteration, self.j_d, self.j_g)
    }
}

/// Entries i.i.d. uniform on `[0, 1)`, shape `(m, n)`.
pub fn sample_prior<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Tensor {
    let data = (0..n * m).map(|_| rng.random::<f64>()).collect();
    Tensor::new(vec![m, n], data).expect("finite uniform draws")
}

fn check_open_unit(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Argument(format!("{what} is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("{what} value {v} outside (0, 1)")));
    }
    Ok(())
}

/// `-(1 / 2m) (pi * sum log d_real + (1 - pi) * sum log(1 - d_fake))`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64], w: PiWeight) -> Result<f64> {
    check_open_unit(d_real, "d_real")?;
    check_open_unit(d_fake, "d_fake")?;
    if d_real.len() != d_fake.len() {
        return Err(Error::Dimension(format!("{} real outputs vs {} fake", d_real.len(), d_fake.len())));
    }
    let pi = w.value();
    let m = d_real.len() as f64;
    let real: f64 = d_real.iter().map(|d| d.ln()).sum();
    let fake: f64 = d_fake.iter().map(|d| (1.0 - d).ln()).sum();
    Ok(-(pi * real + (1.0 - pi) * fake) / (2.0 * m))
}

/// The unweighted loss `-(1 / 2m) (sum log d_real + sum log(1 - d_fake))`.
pub fn discriminator_loss_unweighted(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_open_unit(d_real, "d_real")?;
    check_open_unit(d_fake, "d_fake")?;
    if d_real.len() != d_fake.len() {
        return Err(Error::Dimension(format!("{} real outputs vs {} fake", d_real.len(), d_fake.len())));
    }
    let m = d_real.len() as f64;
    let real: f64 = d_real.iter().map(|d| d.ln()).sum();
    let fake: f64 = d_fake.iter().map(|d| (1.0 - d).ln()).sum();
    Ok(-(real + fake) / (2.0 * m))
}

/// `-(1 / m) sum log d_fake`. Not pi-weighted.
pub fn generator_loss(d_fake: &[f64]) -> Result<f64> {
    check_open_unit(d_fake, "d_fake")?;
    Ok(-d_fake.iter().map(|d| d.ln()).sum::<f64>() / d_fake.len() as f64)
}

fn clamped(y: &Tensor) -> Vec<f64> {
    y.data().iter().map(|d| d.clamp(D_CLAMP, 1.0 - D_CLAMP)).collect()
}

fn single_output(net: &Network, what: &str) -> Result<()> {
    if net.spec().output_shape()? != [1] {
        return Err(Error::Dimension(format!("{what} must output one value per sample, got {:?}", net.spec().output_shape()?)));
    }
    Ok(())
}

/// `J_D` on fixed batches with its discriminator gradient. Gradients are taken
/// at the clamped outputs. Also returns the real-batch tape.
pub fn discriminator_loss_and_gradients(d: &Network, real: &Tensor, fake: &Tensor, w: PiWeight) -> Result<(f64, Gradients, Tape)> {
    single_output(d, "discriminator")?;
    if real.batch() != fake.batch() {
        return Err(Error::Dimension(format!("{} real samples vs {} fake", real.batch(), fake.batch())));
    }
    let (y_real, tape_real) = d.forward(real, Mode::Train)?;
    let (y_fake, tape_fake) = d.forward(fake, Mode::Train)?;
    let (dr, df) = (clamped(&y_real), clamped(&y_fake));
    let loss = discriminator_loss(&dr, &df, w)?;
    let pi = w.value();
    let two_m = 2.0 * dr.len() as f64;
    let g_real = Tensor::new(y_real.shape().to_vec(), dr.iter().map(|v| -pi / (two_m * v)).collect())?;
    let g_fake = Tensor::new(y_fake.shape().to_vec(), df.iter().map(|v| (1.0 - pi) / (two_m * (1.0 - v))).collect())?;
    let (mut grads, _) = d.backward(&tape_real, &g_real)?;
    grads.accumulate(&d.backward(&tape_fake, &g_fake)?.0)?;
    Ok((loss, grads, tape_real))
}

/// `J_G` for latents `z` with the generator gradient (discriminator frozen).
/// Also returns the generator tape.
pub fn generator_loss_and_gradients(g: &Network, d: &Network, z: &Tensor) -> Result<(f64, Gradients, Tape)> {
    single_output(d, "discriminator")?;
    let (fake, tape_g) = g.forward(z, Mode::Train)?;
    let (y, tape_d) = d.forward(&fake, Mode::Train)?;
    let df = clamped(&y);
    let loss = generator_loss(&df)?;
    let m = df.len() as f64;
    let grad_y = Tensor::new(y.shape().to_vec(), df.iter().map(|v| -1.0 / (m * v)).collect())?;
    let (_, grad_x) = d.backward(&tape_d, &grad_y)?;
    let (grads, _) = g.backward(&tape_g, &grad_x)?;
    Ok((loss, grads, tape_g))
}

/// Networks, optimizers and the number of completed outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub generator: Network,
    pub discriminator: Network,
    pub generator_optimizer: Adam,
    pub discriminator_optimizer: Adam,
    pub iteration: u64,
}

/// Receives progress from [`GanState::run`]. Both hooks default to no-ops.
pub trait TrainingSink {
    /// Called after every iteration with the updated state.
    fn record(&mut self, _record: &LossRecord, _state: &GanState) -> Result<()> {
        Ok(())
    }

    /// Called after every `checkpoint_every`-th iteration.
    fn checkpoint(&mut self, _state: &GanState) -> Result<()> {
        Ok(())
    }
}

impl TrainingSink for () {}

fn iteration_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn diverged(iteration: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { layer, detail } => Error::Diverged { iteration, detail: format!("layer {layer}: {detail}") },
        Error::Domain(detail) => Error::Diverged { iteration, detail },
        other => other,
    }
}

impl GanState {
    /// Fresh networks initialized from the configured seed.
    pub fn new(g: NetworkSpec, d: NetworkSpec, cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        if g.input_shape != [cfg.latent_dim] {
            return Err(Error::Dimension(format!("generator input {:?} vs latent dimension {}", g.input_shape, cfg.latent_dim)));
        }
        if g.output_shape()? != d.input_shape {
            return Err(Error::Dimension(format!(
                "generator output {:?} does not match discriminator input {:?}",
                g.output_shape()?,
                d.input_shape
            )));
        }
        let mut rng = iteration_rng(cfg.seed, INIT_STREAM);
        let generator = Network::new(g, &mut rng)?;
        let discriminator = Network::new(d, &mut rng)?;
        single_output(&discriminator, "discriminator")?;
        let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
        Ok(Self {
            generator_optimizer: Adam::new(adam, generator.params()),
            discriminator_optimizer: Adam::new(adam, discriminator.params()),
            generator,
            discriminator,
            iteration: 0,
        })
    }

    /// One outer iteration: `k` discriminator steps, then one generator step.
    pub fn step(&mut self, data: &dyn DataSource, cfg: &GanConfig) -> Result<LossRecord> {
        let t = self.iteration + 1;
        let fail = diverged(t);
        let mut rng = iteration_rng(cfg.seed, self.iteration);
        let (m, n, k) = (cfg.batch_size, cfg.latent_dim, cfg.k());
        let mut j_d = 0.0;
        for _ in 0..k {
            let z = sample_prior(n, m, &mut rng);
            let (fake, _) = self.generator.forward(&z, Mode::Train).map_err(&fail)?;
            let real = data.sample_batch(m, &mut rng)?;
            let (loss, grads, tape_real) =
                discriminator_loss_and_gradients(&self.discriminator, &real, &fake, cfg.pi).map_err(&fail)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: t, detail: format!("j_d = {loss}") });
            }
            // Running statistics track real data, which is what feature extraction sees.
            self.discriminator.commit_batch_statistics(&tape_real)?;
            self.discriminator_optimizer.step(&mut self.discriminator, &grads).map_err(&fail)?;
            j_d += loss;
        }
        let z = sample_prior(n, m, &mut rng);
        let (j_g, grads, tape_g) = generator_loss_and_gradients(&self.generator, &self.discriminator, &z).map_err(&fail)?;
        if !j_g.is_finite() {
            return Err(Error::Diverged { iteration: t, detail: format!("j_g = {j_g}") });
        }
        self.generator.commit_batch_statistics(&tape_g)?;
        self.generator_optimizer.step(&mut self.generator, &grads).map_err(&fail)?;
        self.iteration = t;
        Ok(LossRecord { iteration: t, j_d: j_d / k as f64, j_g })
    }

    /// Runs outer iterations until `cfg.iterations` have completed.
    pub fn run(&mut self, data: &dyn DataSource, cfg: &GanConfig, sink: &mut dyn TrainingSink) -> Result<Vec<LossRecord>> {
        cfg.validate()?;
        let want = self.generator.spec().output_shape()?;
        if data.sample_shape() != want {
            return Err(Error::Dimension(format!("data samples {:?} vs generator output {want:?}", data.sample_shape())));
        }
        if let Some(stored) = data.stored() {
            if stored < cfg.batch_size {
                log::info!("dataset holds {stored} samples, fewer than the batch size {}; batches repeat samples", cfg.batch_size);
            }
        }
        let mut log = Vec::new();
        while self.iteration < cfg.iterations {
            let record = self.step(data, cfg)?;
            sink.record(&record, self)?;
            log.push(record);
            if cfg.checkpoint_every > 0 && self.iteration % cfg.checkpoint_every == 0 {
                sink.checkpoint(self)?;
            }
        }
        Ok(log)
    }

    /// Generator output in inference mode (running batch-norm statistics).
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.generator.forward(z, Mode::Infer)?.0)
    }

    /// Checkpoint holding both networks with their optimizers. `metadata` gains
    /// an `iteration` field.
    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut meta = match metadata {
            serde_json::Value::Object(map) => map,
            serde_json::Value::Null => serde_json::Map::new(),
            other => {
                let mut map = serde_json::Map::new();
                map.insert("extra".into(), other);
                map
            }
        };
        meta.insert("iteration".into(), json!(self.iteration));
        Checkpoint {
            metadata: serde_json::Value::Object(meta),
            networks: vec![
                NamedNetwork {
                    name: "generator".into(),
                    network: self.generator.clone(),
                    optimizer: Some(self.generator_optimizer.clone()),
                },
                NamedNetwork {
                    name: "discriminator".into(),
                    network: self.discriminator.clone(),
                    optimizer: Some(self.discriminator_optimizer.clone()),
                },
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ckpt.network(name).ok_or_else(|| Error::Consistency(format!("checkpoint has no {name} network")))
        };
        let (g, d) = (get("generator")?, get("discriminator")?);
        let optimizer = |n: &NamedNetwork| {
            n.optimizer.clone().ok_or_else(|| Error::Consistency(format!("checkpoint has no optimizer for {}", n.name)))
        };
        let iteration = ckpt
            .metadata
            .get("iteration")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Consistency("checkpoint metadata lacks an iteration count".into()))?;
        Ok(Self {
            generator_optimizer: optimizer(g)?,
            discriminator_optimizer: optimizer(d)?,
            generator: g.network.clone(),
            discriminator: d.network.clone(),
            iteration,
        })
    }
}

/// Initializes from `cfg.seed` and trains for `cfg.iterations` outer iterations.
pub fn train(
    g: NetworkSpec,
    d: NetworkSpec,
    data: &dyn DataSource,
    cfg: &GanConfig,
    sink: &mut dyn TrainingSink,
) -> Result<(GanState, Vec<LossRecord>)> {
    let mut state = GanState::new(g, d, cfg)?;
    let log = state.run(data, cfg, sink)?;
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(pi: f64) -> PiWeight {
        PiWeight::new(pi).unwrap()
    }

    #[test]
    fn discriminator_loss_examples() {
        let half = discriminator_loss(&[0.5], &[0.5], w(0.5)).unwrap();
        assert!((half - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        let v = discriminator_loss(&[0.8], &[0.3], w(0.9)).unwrap();
        // Direct evaluation of -(0.9 ln 0.8 + 0.1 ln 0.7) / 2.
        assert!((v - 0.118248345288331).abs() < 1e-12, "{v}");
        assert!(discriminator_loss(&[1.0 - 1e-12], &[1e-12], w(0.3)).unwrap() < 1e-11);
    }

    #[test]
    fn boundary_values_are_domain_errors() {
        assert!(matches!(discriminator_loss(&[1.0], &[0.5], w(0.5)), Err(Error::Domain(_))));
        assert!(matches!(discriminator_loss(&[0.5], &[0.0], w(0.5)), Err(Error::Domain(_))));
        assert!(matches!(generator_loss(&[0.0]), Err(Error::Domain(_))));
        assert!(discriminator_loss(&[0.5, 0.5], &[0.5], w(0.5)).is_err());
    }

    #[test]
    fn generator_loss_examples() {
        assert!(generator_loss(&[1.0 - 1e-12; 4]).unwrap() < 1e-11);
        assert!((generator_loss(&[0.5; 3]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let v = generator_loss(&[(-1.0f64).exp(), (-3.0f64).exp()]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn default_k_schedule() {
        let mut cfg = GanConfig::new(w(0.5), 8, 2, 1, 1e-3, 0);
        assert_eq!(cfg.k(), 3);
        cfg.pi = w(0.9);
        assert_eq!(cfg.k(), 1);
        cfg.k = Some(5);
        assert_eq!(cfg.k(), 5);
        cfg.k = Some(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok = r#"{"pi":0.1,"batch_size":4,"latent_dim":2,"iterations":3,"learning_rate":0.002,"seed":1}"#;
        let cfg: GanConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.checkpoint_every, DEFAULT_CHECKPOINT_EVERY);
        assert_eq!(cfg.prior, Prior::Uniform01);
        let bad = r#"{"pi":0.1,"batch_size":4,"latent_dim":2,"iterations":3,"learning_rate":0.002,"seed":1,"beta":2}"#;
        assert!(serde_json::from_str::<GanConfig>(bad).is_err());
        let bad_pi = r#"{"pi":1.0,"batch_size":4,"latent_dim":2,"iterations":3,"learning_rate":0.002,"seed":1}"#;
        assert!(serde_json::from_str::<GanConfig>(bad_pi).is_err());
    }

    #[test]
    fn csv_rows_round_trip_floats() {
        let r = LossRecord { iteration: 7, j_d: 0.1 + 0.2, j_g: 1.0 };
        assert_eq!(r.csv_row(), "7,0.30000000000000004,1.0");
    }
}
