//! A small reverse-mode network engine: sequential layers, an activation tape,
//! Adam, finite-difference gradient checks and binary checkpoints.
//!
//! Only the layer kinds the adversarial presets need are provided; see
//! [`LayerSpec`].

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod linalg;
pub mod network;
pub mod optim;
pub mod presets;
mod tensor;

pub use checkpoint::{Checkpoint, NamedNetwork};
pub use gradcheck::{
    check_spec, finite_difference_gradcheck, standard_suite, GradcheckOptions, GradcheckReport, ScalarLoss, SuiteCase,
    SUITE_TOLERANCE,
};
pub use layers::{bilinear_upsample, bilinear_upsample_backward, LayerSpec, BATCH_NORM_EPSILON, BATCH_NORM_MOMENTUM, DEFAULT_LEAKY_SLOPE};
pub use network::{Gradients, LayerParams, Mode, Network, NetworkSpec, ParameterSet, Tape};
pub use optim::{Adam, AdamConfig};
pub use presets::{ConvPreset, MlpPreset, ModelPreset};
pub use tensor::Tensor;

pub(crate) use layers::resample_planes;
