//! Numerical laboratory for normalizer-free residual training.
//!
//! The crate provides a small dense-tensor engine with reverse-mode
//! autodiff, reference BN/LN/IN layers, residual blocks whose
//! normalization is replaced by trainable scalars plus a zero-centered
//! training-time noise injector (NoMorelization), a variance-propagation
//! probe, a batch-noise simulator with closed-form laws, and the
//! statistics (Hotelling's T², F CDF, PCA) used to test them.

pub mod block;
pub mod conv;
pub mod grad_check;
pub mod io;
pub mod noise;
pub mod norm;
pub mod rng;
pub mod sgd;
pub mod stats;
pub mod tensor;
pub mod variance;

pub use norm::{Mode, NormKind, NormalizerSpec};
pub use rng::Rng;
pub use sgd::{SgdConfig, SgdOptimizer};
pub use tensor::{kaiming_init, Tape, Tensor, TensorError, TensorId, TensorResult};
