//! # pigan-core
//!
//! A pi-weighted adversarial cost function, end to end.
//!
//! The discriminator objective
//!
//! ```text
//! V(G, D) = pi * E_{x~P}[log D(x)] + (1 - pi) * E_{x~Q}[log(1 - D(x))]
//! ```
//!
//! has optimum `D*(x) = pi P(x) / (pi P(x) + (1 - pi) Q(x))`, and at that optimum
//! `V(G, D*) = pi log pi + (1 - pi) log(1 - pi) + JS_pi[P || Q]`. Small `pi` pulls
//! training toward `KL[P || Q]` (mode covering), large `pi` toward `KL[Q || P]`
//! (mode seeking).
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`divergence`] | exact KL / JS_pi / D* / C(G) on discrete distributions |
//! | [`nn`] | tensors, sequential layers, reverse-mode backprop, Adam, checkpoints |
//! | [`training`] | the alternating k-step discriminator / generator loop |
//! | [`datasets`] | Gaussian mixtures, synthetic glyphs, the dataset file format, PGM ingestion |
//! | [`evaluation`] | features, retrieval, one-shot, interpolation, mode coverage, empirical KL |
//! | [`image`] | PGM (P5) reading, writing and mosaics |

mod binio;
pub mod datasets;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod nn;
pub mod training;

pub use datasets::{GlyphSpec, LabeledDataset, MixtureSpec, Split};
pub use divergence::{DiscreteDistribution, DiscriminatorProfile, PiWeight};
pub use error::{Error, Result};
pub use nn::{LayerSpec, Mode, Network, NetworkSpec, Tensor};
pub use training::{GanConfig, GanState, LossRecord};
