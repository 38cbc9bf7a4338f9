//! One-step generative policies trained with the MeanFlow identity and
//! Q-learning, with everything needed to run them on CPU: tensors, MLPs with
//! reverse- and forward-mode differentiation, Adam, the residual reformulation
//! variants, an offline actor-critic loop, toy densities, a point-reaching
//! environment, Wasserstein metrics and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod embed;
pub mod env;
pub mod error;
pub mod meanflow;
pub mod metrics;
pub mod mlp;
pub mod nets;
pub mod optim;
pub mod qlearning;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use meanflow::{TimeSampler, Variant};
pub use tensor::{DualTensor, Tensor};
