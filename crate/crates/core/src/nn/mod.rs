//! Parameterized layers: dense, convolution, transposed convolution, batch
//! norm, and spectral normalization by power iteration.

mod init;
mod layer;
mod spectral;

pub use init::{normal_vec, seeded_rng, InitSpec, SeededRng};
pub use layer::{BatchNorm, Layer, LayerKind, StateMap};
pub use spectral::{
    power_iteration, spectral_power_iteration, PowerIterationResult, SpectralNorm, WeightLayout,
};
