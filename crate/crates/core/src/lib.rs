//! Lightweight convolutional transformer (OnDev-LCT family) built on a
//! tape-based reverse-mode autodiff core, with centralized training and a
//! deterministic single-process FedAvg simulator.
//!
//! Heavy kernels are data-parallel via rayon behind the `parallel` feature
//! (on by default); results are bit-identical with the feature off or the
//! runtime switch disabled, because parallel blocks never share reductions.

pub mod error;
pub mod model;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod shapes;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Mode, NodeId};
pub use model::{BudgetReport, LctConfig, LctModel};
pub use ops::attention::AttentionNodes;
pub use rng::Rng;
pub use scalar::{Dtype, Scalar};
pub use shapes::Padding;
pub use tensor::Tensor;
