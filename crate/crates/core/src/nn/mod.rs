//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; the
//! gradient of each parameter accumulates into the parameter's own
//! [`Tensor4`] gradient slot.

mod activation;
mod conv;
mod norm;
mod resample;

pub(crate) use activation::silu_grad;
pub use activation::{relu, sigmoid, silu, Relu, Silu};
pub use conv::{conv2d, conv2d_backward, conv_output_size, Conv2d, ConvGrads};
pub use norm::{BatchNorm2d, LayerNorm, BN_MOMENTUM, NORM_EPSILON};
pub use resample::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, bilinear_upsample2x,
    bilinear_upsample2x_backward, pool_bin, AdaptiveAvgPool2d, MaxPool2d, Upsample2x,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Deterministic generator used for parameter initialization.
pub type InitRng = rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Whether a named state tensor is trained or merely tracked (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Param,
    Buffer,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Enumerates named parameters and buffers in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind));

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    );

    fn zero_grad(&mut self) {
        self.visit_state_mut("", &mut |_, t, _| t.zero_grad());
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_state("", &mut |_, t, kind| {
            if kind == StateKind::Param {
                n += t.len();
            }
        });
        n
    }
}

pub trait Layer<T: Scalar>: Parameterized<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>>;

    /// Propagates `grad_out` back through the last `forward`, returning the input gradient.
    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>>;
}

/// Forward activations kept for the backward pass. Cloning a layer drops them.
#[derive(Debug)]
pub struct Cache<X>(Option<X>);

impl<X> Default for Cache<X> {
    fn default() -> Self {
        Cache(None)
    }
}

impl<X> Clone for Cache<X> {
    fn clone(&self) -> Self {
        Cache(None)
    }
}

impl<X> Cache<X> {
    pub fn put(&mut self, x: X) {
        self.0 = Some(x);
    }

    pub fn take(&mut self, op: &'static str) -> Result<X> {
        self.0.take().ok_or(Error::MissingForward(op))
    }
}

/// Zero-mean normal tensor with the given standard deviation, carrying a gradient slot.
pub fn normal_param<T: Scalar>(rng: &mut InitRng, shape: Shape4, std: f64) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z * std)
    })
    .with_grad()
}

/// He (fan-in) normal initialization.
pub fn he_normal<T: Scalar>(rng: &mut InitRng, shape: Shape4, fan_in: usize) -> Tensor4<T> {
    normal_param(rng, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

pub fn constant_param<T: Scalar>(shape: Shape4, value: f64) -> Tensor4<T> {
    Tensor4::full(shape, T::lit(value)).with_grad()
}
