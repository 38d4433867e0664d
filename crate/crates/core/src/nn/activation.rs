use super::{Cache, Layer, Mode, Parameterized, StateKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Branching keeps exp() from overflowing for large |x|.
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

fn check_grad<T: Scalar>(op: &'static str, x: &Tensor4<T>, g: &Tensor4<T>) -> Result<()> {
    if x.shape() != g.shape() {
        return Err(Error::shape(op, x.shape(), g.shape()));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Cache<Tensor4<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self {
            cache: Cache::default(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Relu<T> {
    fn visit_state(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {}
    fn visit_state_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind)) {}
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = x.map(relu);
        self.cache.put(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.cache.take("relu")?;
        check_grad("relu backward", &y, grad_out)?;
        y.zip_map(grad_out, "relu backward", |y, g| {
            if y > T::zero() {
                g
            } else {
                T::zero()
            }
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Silu<T> {
    cache: Cache<Tensor4<T>>,
}

impl<T: Scalar> Silu<T> {
    pub fn new() -> Self {
        Self {
            cache: Cache::default(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Silu<T> {
    fn visit_state(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {}
    fn visit_state_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind)) {}
}

impl<T: Scalar> Layer<T> for Silu<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        self.cache.put(x.clone());
        Ok(x.map(silu))
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.cache.take("silu")?;
        check_grad("silu backward", &x, grad_out)?;
        x.zip_map(grad_out, "silu backward", |x, g| silu_grad(x) * g)
    }
}
