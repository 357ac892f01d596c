//! Minimal dense/convolutional network engine: forward, exact reverse-mode
//! gradients, and Adam — just enough for the stacked 1D-CNN encoder, its
//! masked-reconstruction pretext head, and the MLP classifier.
//!
//! No GPU and no general autodiff graph; `backward` differentiates exactly
//! the layer set `ArchSpec` can express, and a finite-difference suite
//! (`tests/acceptance.rs`) checks every layer type in isolation and
//! composed.

pub mod adam;
pub mod arch;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod net;
pub mod params;

pub use adam::adam_step;
pub use arch::{ArchSpec, DecayMode, LayerDims, OptimizerSpec};
pub use io::{read_fogm1, read_fogm1_params, write_fogm1};
pub use loss::{bce, masked_mse, sigmoid};
pub use net::{
    backward, encode, forward, forward_pretext, ForwardCache, LossGrad, PretextSample,
};
pub use params::{AdamState, ArrayId, LossKind, ParamArrays, ParamSet, TrainScope};
