use super::{he_normal, join, Cache, InitRng, Layer, Mode, Parameterized, StateKind};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::{Shape4, Tensor4};

/// `floor((input + 2 * padding - kernel) / stride) + 1`, rejecting empty outputs.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Config(format!(
            "kernel {kernel} does not fit input extent {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: Shape4, kernel: Shape4, stride: usize, pad: usize) -> Result<Self> {
        if input[1] != kernel[1] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        Ok(Self {
            c: input[1],
            h: input[2],
            w: input[3],
            kh: kernel[2],
            kw: kernel[3],
            stride,
            pad,
            ho: conv_output_size(input[2], kernel[2], stride, pad)?,
            wo: conv_output_size(input[3], kernel[3], stride, pad)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, unit stride, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn src_index(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let l = self.out_len();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * l..(row + 1) * l];
                    for oy in 0..self.ho {
                        let seg = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.src_index(oy, ki, self.h) {
                            None => seg.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in seg.iter_mut().enumerate() {
                                    *v = match self.src_index(ox, kj, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let l = self.out_len();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * l..(row + 1) * l];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src_index(oy, ki, self.h) else {
                            continue;
                        };
                        let seg = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &g) in seg.iter().enumerate() {
                            if let Some(ix) = self.src_index(ox, kj, self.w) {
                                dst[ix] = dst[ix] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with bias. `kernel` is `(out, in, kh, kw)`, `bias` holds `out` values.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = Geometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let cout = kernel.shape()[0];
    if bias.len() != cout {
        return Err(Error::shape("conv2d bias", kernel.shape(), [bias.len()]));
    }
    let batch = input.shape()[0];
    let (k, l) = (g.patch_len(), g.out_len());
    let mut out = Tensor4::zeros([batch, cout, g.ho, g.wo]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * l]
    };
    for b in 0..batch {
        let y = out.item_mut(b);
        for (o, row) in y.chunks_mut(l).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[o]);
        }
        let x = input.item(b);
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        matmul(
            false,
            false,
            cout,
            k,
            l,
            kernel.data(),
            cols_ref,
            T::one(),
            y,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d`] with respect to its input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let cout = kernel.shape()[0];
    let batch = input.shape()[0];
    let expect = [batch, cout, g.ho, g.wo];
    if grad_out.shape() != expect {
        return Err(Error::shape("conv2d backward", expect, grad_out.shape()));
    }
    let (k, l) = (g.patch_len(), g.out_len());
    let mut dx = Tensor4::zeros(input.shape());
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); cout];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * l }];
    let mut dcols = vec![T::zero(); k * l];
    for b in 0..batch {
        let dy = grad_out.item(b);
        for (o, row) in dy.chunks(l).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        let x = input.item(b);
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        matmul(false, true, cout, l, k, dy, cols_ref, T::one(), &mut dk);
        if g.is_pointwise() {
            matmul(
                true,
                false,
                k,
                cout,
                l,
                kernel.data(),
                dy,
                T::zero(),
                dx.item_mut(b),
            );
        } else {
            matmul(
                true,
                false,
                k,
                cout,
                l,
                kernel.data(),
                dy,
                T::zero(),
                &mut dcols,
            );
            g.col2im(&dcols, dx.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

/// Convolution layer: kernel `(out, in, kh, kw)`, bias `(out, 1, 1, 1)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub stride: usize,
    pub padding: usize,
    cache: Cache<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Square kernel, He-initialized weights and zero bias.
    pub fn new(
        rng: &mut InitRng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            kernel: he_normal(
                rng,
                [out_ch, in_ch, kernel, kernel],
                in_ch * kernel * kernel,
            ),
            bias: Tensor4::zeros([out_ch, 1, 1, 1]).with_grad(),
            stride,
            padding,
            cache: Cache::default(),
        }
    }

    pub fn from_parts(
        kernel: Tensor4<T>,
        bias: Vec<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if bias.len() != kernel.shape()[0] {
            return Err(Error::shape("conv2d bias", kernel.shape(), [bias.len()]));
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        let n = bias.len();
        Ok(Self {
            kernel: kernel.with_grad(),
            bias: Tensor4::from_vec([n, 1, 1, 1], bias)?.with_grad(),
            stride,
            padding,
            cache: Cache::default(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let g = Geometry::new(input, self.kernel.shape(), self.stride, self.padding)?;
        Ok([input[0], self.out_channels(), g.ho, g.wo])
    }

    pub fn zero_weights(&mut self) {
        self.kernel
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
        self.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d(x, &self.kernel, self.bias.data(), self.stride, self.padding)
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        f(&join(prefix, "kernel"), &self.kernel, StateKind::Param);
        f(&join(prefix, "bias"), &self.bias, StateKind::Param);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        f(&join(prefix, "kernel"), &mut self.kernel, StateKind::Param);
        f(&join(prefix, "bias"), &mut self.bias, StateKind::Param);
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = self.apply(x)?;
        self.cache.put(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.cache.take("conv2d")?;
        let g = conv2d_backward(&x, &self.kernel, grad_out, self.stride, self.padding)?;
        self.kernel.accumulate_grad(&g.kernel);
        self.bias.accumulate_grad(&g.bias);
        Ok(g.input)
    }
}
