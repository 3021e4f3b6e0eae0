//! Linear backpropagation (LinBP) next to ordinary backpropagation for dense
//! ReLU networks.
//!
//! LinBP runs the usual forward pass and drops ReLU derivative factors from the
//! backward pass. This crate provides both gradients in closed form for a
//! two-layer attack model, a one-layer teacher–student training model and
//! general MLPs. It also provides their expectations over Gaussian weights,
//! Monte Carlo estimators to check those expectations, and the attack and
//! training simulations that compare the two rules.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! simulations run in `f64`, and the aliases below name the `f64`
//! instantiations.

pub mod attack;
pub mod closedform;
pub mod data;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod mlp;
pub mod model;
pub mod montecarlo;
pub mod scalar;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use grad::{GradientMode, LossKind, NormalizeMode};
pub use linalg::{DenseMatrix, DenseVector, Norms, RngStream};
pub use model::{ActivationTrace, MlpModel, ReluMask, TwoLayerModel};
pub use scalar::Scalar;

pub type Vector = DenseVector<f64>;
pub type Matrix = DenseMatrix<f64>;
pub type TwoLayer = TwoLayerModel<f64>;
pub type Mlp = MlpModel<f64>;
pub type Trace = ActivationTrace<f64>;
pub type Trajectory = trajectory::Trajectory<f64>;
pub type StepRecord = trajectory::StepRecord<f64>;
pub type SimulationResult = trajectory::SimulationResult<f64>;
