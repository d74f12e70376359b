//! Block-normalized stochastic gradient methods.
//!
//! The parameter vector of a model is split into contiguous blocks (one per
//! network layer). Each block of a stochastic gradient can be normalized,
//! clipped or rescaled independently before a step-size rule turns it into
//! an update. The crate contains:
//!
//! - [`numerics`]: dense `f64` vector/matrix primitives.
//! - [`blocked`]: the blocked parameter/gradient vector.
//! - [`data`]: MNIST IDX ingestion, synthetic datasets and seeded mini-batching.
//! - [`mlp`] and [`convex`]: differentiable models with blocked gradients.
//! - [`transforms`]: per-block direction transforms (normalize, clip, adaptive ratio).
//! - [`optim`]: SGD with momentum, AdaGrad, Adam and block-normalized AdaGrad.
//! - [`regret`]: runtime verification of the AdaGrad block-normalized regret bound.

pub mod blocked;
pub mod convex;
pub mod data;
mod error;
pub mod mlp;
pub mod numerics;
pub mod optim;
pub mod regret;
pub mod rng;
pub mod transforms;

pub use blocked::{BlockLayout, BlockedVector, Direction};
pub use error::{Error, Result};
