//! Semi-supervised, class-conditional GAN for binary histopathology patch
//! classification.
//!
//! A generator `G(z|y)` conditioned on a one-hot class label is trained
//! against a discriminator with two single-layer heads: one separating real
//! from synthetic patches, one classifying patches as IDC or healthy. After
//! training the generator is discarded and the class head is the classifier.
//!
//! The crate is built from scratch on its own reverse-mode autodiff
//! ([`tensor`]), with layers ([`nn`]), the two networks ([`models`]), losses,
//! optimizer and the training loop ([`train`]), patch data handling
//! ([`data`]) and evaluation ([`metrics`]). [`verify`] bundles the numerical
//! oracle checks used by the `verify` command.

pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use data::{SplitSpec, SplitUnit};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, Evaluation, Metrics};
pub use models::{Conditioning, Discriminator, DiscriminatorOutput, Generator, ModelConfig};
pub use tensor::{Activation, Mode, Scalar, Tensor};
pub use train::{AdvForm, Checkpoint, LossConfig, StepRecord, TrainPlan, Trainer};
