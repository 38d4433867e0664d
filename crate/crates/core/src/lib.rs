//! Dual-encoder segmentation network with Kolmogorov-Arnold (B-spline) bottleneck blocks.
//!
//! Everything is generic over the scalar type; training runs in `f32` and the
//! gradient checks in `f64`.

pub mod decoder;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod kan;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use loss::{combined_loss, combined_loss_with_grad, LossValue};
pub use metrics::{compute_metrics, confusion_counts, ConfusionCounts, Metrics};
pub use model::{threshold_logits, Dekan, ModelConfig};
pub use nn::{Layer, Mode, Parameterized, StateKind};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};

pub type Tensor4f = Tensor4<f32>;
pub type Tensor4d = Tensor4<f64>;
/// Single-precision model used for training and inference.
pub type DekanF32 = Dekan<f32>;
/// Double-precision model used for gradient verification.
pub type DekanF64 = Dekan<f64>;
