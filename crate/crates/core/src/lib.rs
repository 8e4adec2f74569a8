//! Numerical core for training small networks with softmax or
//! one-vs-rest squared/linear hinge objectives.
//!
//! Everything is `f64`, row-major, and deterministic given a seeded
//! [`RunRng`].

pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod layers;
pub mod optim;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use heads::{Head, HeadKind, HeadOutput, HeadSpec, HeadWeights, SignTargets};
pub use layers::{Layer, LayerGradients, Mode};
pub use optim::{sgd_momentum_step, Schedule, SgdState};
pub use tensor::Tensor;

/// The single generator type used for every stochastic choice in a run.
pub type RunRng = rand_chacha::ChaCha8Rng;
