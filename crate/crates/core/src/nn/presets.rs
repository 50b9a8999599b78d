//! Generator / discriminator layouts.
//!
//! The convolutional pair follows the FC -> up-conv -> up-conv -> conv generator
//! and conv -> conv -> FC discriminator pattern at desk scale:
//!
//! | network | layers (16x16 images, width `w`, kernel `k`, padding `k/2`) |
//! |---------|--------------------------------------------------------------|
//! | G | dense(n -> 4w*4*4) · reshape(4w,4,4) · BN · leaky(0.2) · conv1+up(4w->2w) 8x8 · BN · leaky · conv1+up(2w->w) 16x16 · BN · leaky · conv1(w->1) · sigmoid |
//! | D | conv2(1->w) 8x8 · BN · ReLU · conv2(w->2w) 4x4 · BN · ReLU · reshape(2w*4*4) · dense(->1) · sigmoid |
//!
//! `w = 32` gives the 128*4*4 generator input block. Layers directly followed
//! by batch norm carry no bias.

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::NetworkSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvPreset {
    #[serde(default = "ConvPreset::default_image_size")]
    pub image_size: usize,
    pub latent_dim: usize,
    pub width: usize,
    #[serde(default = "ConvPreset::default_kernel")]
    pub kernel: usize,
}

impl ConvPreset {
    fn default_image_size() -> usize {
        16
    }

    fn default_kernel() -> usize {
        3
    }

    pub fn desk(latent_dim: usize) -> Self {
        Self { image_size: 16, latent_dim, width: 32, kernel: 3 }
    }

    fn quarter(&self) -> Result<usize> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Argument(format!("image size {} must be a positive multiple of 4", self.image_size)));
        }
        Ok(self.image_size / 4)
    }

    pub fn generator(&self) -> Result<NetworkSpec> {
        let q = self.quarter()?;
        let (w, k) = (self.width, self.kernel);
        NetworkSpec::new(
            vec![self.latent_dim],
            vec![
                LayerSpec::Dense { inputs: self.latent_dim, outputs: 4 * w * q * q, bias: false },
                LayerSpec::Reshape { shape: vec![4 * w, q, q] },
                LayerSpec::BatchNorm { channels: 4 * w },
                LayerSpec::leaky_relu(),
                LayerSpec::ConvStride1Upsample2 { in_channels: 4 * w, out_channels: 2 * w, kernel: k, bias: false },
                LayerSpec::BatchNorm { channels: 2 * w },
                LayerSpec::leaky_relu(),
                LayerSpec::ConvStride1Upsample2 { in_channels: 2 * w, out_channels: w, kernel: k, bias: false },
                LayerSpec::BatchNorm { channels: w },
                LayerSpec::leaky_relu(),
                LayerSpec::ConvStride1 { in_channels: w, out_channels: 1, kernel: k, bias: true },
                LayerSpec::Sigmoid,
            ],
        )
    }

    pub fn discriminator(&self) -> Result<NetworkSpec> {
        let q = self.quarter()?;
        let (w, k) = (self.width, self.kernel);
        NetworkSpec::new(
            vec![1, self.image_size, self.image_size],
            vec![
                LayerSpec::ConvStride2 { in_channels: 1, out_channels: w, kernel: k, bias: false },
                LayerSpec::BatchNorm { channels: w },
                LayerSpec::Relu,
                LayerSpec::ConvStride2 { in_channels: w, out_channels: 2 * w, kernel: k, bias: false },
                LayerSpec::BatchNorm { channels: 2 * w },
                LayerSpec::Relu,
                LayerSpec::Reshape { shape: vec![2 * w * q * q] },
                LayerSpec::dense(2 * w * q * q, 1),
                LayerSpec::Sigmoid,
            ],
        )
    }

    /// Width of the penultimate-layer encoding.
    pub fn feature_dim(&self) -> usize {
        let q = self.image_size / 4;
        2 * self.width * q * q
    }
}

/// Fully connected pair for low-dimensional data such as 2-D mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpPreset {
    pub latent_dim: usize,
    pub hidden: usize,
    #[serde(default = "MlpPreset::default_data_dim")]
    pub data_dim: usize,
}

impl MlpPreset {
    fn default_data_dim() -> usize {
        2
    }

    pub fn generator(&self) -> Result<NetworkSpec> {
        let h = self.hidden;
        NetworkSpec::new(
            vec![self.latent_dim],
            vec![
                LayerSpec::dense(self.latent_dim, h),
                LayerSpec::leaky_relu(),
                LayerSpec::dense(h, h),
                LayerSpec::leaky_relu(),
                LayerSpec::dense(h, self.data_dim),
            ],
        )
    }

    pub fn discriminator(&self) -> Result<NetworkSpec> {
        let h = self.hidden;
        NetworkSpec::new(
            vec![self.data_dim],
            vec![
                LayerSpec::dense(self.data_dim, h),
                LayerSpec::Relu,
                LayerSpec::dense(h, h),
                LayerSpec::Relu,
                LayerSpec::dense(h, 1),
                LayerSpec::Sigmoid,
            ],
        )
    }
}

/// Either preset family, as it appears in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Mlp(MlpPreset),
    Conv(ConvPreset),
}

impl ModelPreset {
    /// `(generator, discriminator)` specs.
    pub fn build(&self) -> Result<(NetworkSpec, NetworkSpec)> {
        match self {
            ModelPreset::Mlp(p) => Ok((p.generator()?, p.discriminator()?)),
            ModelPreset::Conv(p) => Ok((p.generator()?, p.discriminator()?)),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            ModelPreset::Mlp(p) => p.latent_dim,
            ModelPreset::Conv(p) => p.latent_dim,
        }
    }
}
