//! Run configuration for `pigan train`.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "gan": { "pi": 0.1, "batch_size": 128, "latent_dim": 16, "iterations": 2000,
//!            "learning_rate": 0.0002, "seed": 0 },
//!   "model": { "mlp": { "latent_dim": 16, "hidden": 128 } },
//!   "data": { "ring": { "count": 8, "radius": 5.0, "sigma": 0.25 } },
//!   "output": "runs/ring",
//!   "sample_every": 500
//! }
//! ```
//!
//! `gan` optionally takes `k`, `prior` and `checkpoint_every`. `model` is
//! `{"mlp": {latent_dim, hidden, data_dim?}}` or
//! `{"conv": {latent_dim, width, image_size?, kernel?}}`. `data` is one of
//! `{"ring": {...}}`, `{"mixture": {"components": [...]}}`,
//! `{"glyphs": {...}}` (background split of the synthetic glyph corpus) or
//! `{"dataset": "path/to/file.pigands"}`. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pigan_core::datasets::{generate_glyph_dataset, load_dataset, DataSource, MixtureSpec};
use pigan_core::nn::ModelPreset;
use pigan_core::{GanConfig, GlyphSpec, Split};
use serde::{Deserialize, Serialize};

/// Bumped together with incompatible changes to this document or the checkpoint layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_SAMPLE_EVERY: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub gan: GanConfig,
    pub model: ModelPreset,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Sample grids every this many iterations; 0 writes only the final grid.
    #[serde(default = "default_sample_every")]
    pub sample_every: u64,
}

fn default_sample_every() -> u64 {
    DEFAULT_SAMPLE_EVERY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingConfig {
    pub count: usize,
    pub radius: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    Ring(RingConfig),
    Mixture(MixtureSpec),
    Glyphs(GlyphSpec),
    Dataset(PathBuf),
}

/// Training data materialized from a [`DataConfig`].
pub enum LoadedData {
    Mixture(MixtureSpec),
    Stored(pigan_core::LabeledDataset),
}

impl LoadedData {
    pub fn source(&self) -> &dyn DataSource {
        match self {
            LoadedData::Mixture(m) => m,
            LoadedData::Stored(d) => d,
        }
    }

    pub fn mixture(&self) -> Option<&MixtureSpec> {
        match self {
            LoadedData::Mixture(m) => Some(m),
            LoadedData::Stored(_) => None,
        }
    }
}

impl DataConfig {
    /// `base` resolves relative dataset paths (the config file's directory).
    pub fn load(&self, base: &Path) -> Result<LoadedData> {
        Ok(match self {
            DataConfig::Ring(r) => LoadedData::Mixture(MixtureSpec::ring(r.count, r.radius, r.sigma)?),
            DataConfig::Mixture(m) => LoadedData::Mixture(m.clone()),
            DataConfig::Glyphs(g) => LoadedData::Stored(generate_glyph_dataset(g, Split::Background)?),
            DataConfig::Dataset(p) => {
                let path = base.join(p);
                LoadedData::Stored(load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))?)
            }
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("run configuration does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        self.gan.validate()?;
        if self.model.latent_dim() != self.gan.latent_dim {
            bail!("model latent_dim {} differs from gan.latent_dim {}", self.model.latent_dim(), self.gan.latent_dim);
        }
        let (g, _) = self.model.build()?;
        let out = g.output_shape()?;
        let expect = match &self.data {
            DataConfig::Ring(r) => {
                MixtureSpec::ring(r.count, r.radius, r.sigma)?;
                Some(vec![2])
            }
            DataConfig::Mixture(_) => Some(vec![2]),
            DataConfig::Glyphs(s) => {
                s.validate()?;
                Some(vec![1, s.image_size, s.image_size])
            }
            DataConfig::Dataset(_) => None,
        };
        if let Some(shape) = expect {
            if shape != out {
                bail!("generator output {out:?} does not match data samples {shape:?}");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RING: &str = r#"{
        "schema_version": 1,
        "gan": {"pi": 0.1, "batch_size": 16, "latent_dim": 4, "iterations": 3, "learning_rate": 0.001, "seed": 0},
        "model": {"mlp": {"latent_dim": 4, "hidden": 8}},
        "data": {"ring": {"count": 8, "radius": 5.0, "sigma": 0.25}}
    }"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::from_json(RING).unwrap();
        assert_eq!(cfg.sample_every, DEFAULT_SAMPLE_EVERY);
        assert_eq!(cfg.gan.k(), 3);
        assert!(cfg.output.is_none());
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let extra = RING.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"colour\": 3,");
        assert!(RunConfig::from_json(&extra).is_err());
        let nested = RING.replace("\"hidden\": 8", "\"hidden\": 8, \"depth\": 2");
        assert!(RunConfig::from_json(&nested).is_err());
        assert!(RunConfig::from_json(&RING.replace("\"pi\": 0.1", "\"pi\": 1.5")).is_err());
        assert!(RunConfig::from_json(&RING.replace("\"schema_version\": 1", "\"schema_version\": 2")).is_err());
        assert!(RunConfig::from_json(&RING.replace("\"latent_dim\": 4, \"hidden\"", "\"latent_dim\": 5, \"hidden\"")).is_err());
    }

    #[test]
    fn conv_model_on_ring_data_is_a_shape_error() {
        let bad = RING.replace(r#"{"mlp": {"latent_dim": 4, "hidden": 8}}"#, r#"{"conv": {"latent_dim": 4, "width": 2}}"#);
        let err = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");
    }
}
