use super::{Cache, Layer, Mode, Parameterized, StateKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Source taps `(lo, hi, weight_of_hi)` along one axis for half-pixel (align-corners off) 2x upsampling.
fn upsample_taps(extent: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample2x<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [b, c, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::Input(
            "bilinear_upsample2x needs a non-empty plane".into(),
        ));
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = Tensor4::zeros([b, c, 2 * h, 2 * w]);
    let plane_out = 4 * h * w;
    for (p, dst) in out.data_mut().chunks_mut(plane_out).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::lit(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * 2 * w + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_upsample2x`]: maps a `(b, c, 2h, 2w)` gradient to `(b, c, h, w)`.
pub fn bilinear_upsample2x_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    let [b, c, h, w] = input_shape;
    if grad_out.shape() != [b, c, 2 * h, 2 * w] {
        return Err(Error::shape(
            "bilinear_upsample2x backward",
            input_shape,
            grad_out.shape(),
        ));
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut dx = Tensor4::zeros(input_shape);
    for (p, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let src = &grad_out.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::lit(lx);
                let g = src[oy * 2 * w + ox];
                let (gt, gb) = (g * (T::one() - ly), g * ly);
                dst[y0 * w + x0] = dst[y0 * w + x0] + gt * (T::one() - lx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + gt * lx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + gb * (T::one() - lx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + gb * lx;
            }
        }
    }
    Ok(dx)
}

/// Half-open bin `[floor(i*n/out), ceil((i+1)*n/out))` of output cell `i`.
pub fn pool_bin(i: usize, n: usize, out: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

pub fn adaptive_avg_pool2d<T: Scalar>(
    x: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    let [b, c, h, w] = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(
            "adaptive_avg_pool2d output size must be positive".into(),
        ));
    }
    let mut out = Tensor4::zeros([b, c, out_h, out_w]);
    for (p, dst) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..out_h {
            let (y0, y1) = pool_bin(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1) = pool_bin(j, w, out_w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    acc = acc + src[y * w + x0..y * w + x1].iter().copied().sum::<T>();
                }
                dst[i * out_w + j] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool2d_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    let [b, c, h, w] = input_shape;
    let [gb, gc, out_h, out_w] = grad_out.shape();
    if gb != b || gc != c {
        return Err(Error::shape(
            "adaptive_avg_pool2d backward",
            input_shape,
            grad_out.shape(),
        ));
    }
    let mut dx = Tensor4::zeros(input_shape);
    for (p, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let src = &grad_out.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for i in 0..out_h {
            let (y0, y1) = pool_bin(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1) = pool_bin(j, w, out_w);
                let g = src[i * out_w + j] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for v in &mut dst[y * w + x0..y * w + x1] {
                        *v = *v + g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

macro_rules! stateless {
    ($ty:ident) => {
        impl<T: Scalar> Parameterized<T> for $ty<T> {
            fn visit_state(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {}
            fn visit_state_mut(
                &mut self,
                _: &str,
                _: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
            ) {
            }
        }
    };
}

#[derive(Debug, Clone, Default)]
pub struct Upsample2x<T> {
    cache: Cache<Shape4>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Upsample2x<T> {
    pub fn new() -> Self {
        Self {
            cache: Cache::default(),
            _t: std::marker::PhantomData,
        }
    }
}

stateless!(Upsample2x);

impl<T: Scalar> Layer<T> for Upsample2x<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = bilinear_upsample2x(x)?;
        self.cache.put(x.shape());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let shape = self.cache.take("bilinear_upsample2x")?;
        bilinear_upsample2x_backward(grad_out, shape)
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveAvgPool2d<T> {
    pub out_h: usize,
    pub out_w: usize,
    cache: Cache<Shape4>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> AdaptiveAvgPool2d<T> {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            cache: Cache::default(),
            _t: std::marker::PhantomData,
        }
    }
}

stateless!(AdaptiveAvgPool2d);

impl<T: Scalar> Layer<T> for AdaptiveAvgPool2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = adaptive_avg_pool2d(x, self.out_h, self.out_w)?;
        self.cache.put(x.shape());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let shape = self.cache.take("adaptive_avg_pool2d")?;
        adaptive_avg_pool2d_backward(grad_out, shape)
    }
}

/// Square-window max pooling; padded cells never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Cache<(Shape4, Vec<usize>)>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2d<T> {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: Cache::default(),
            _t: std::marker::PhantomData,
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if self.padding * 2 > self.kernel {
            return Err(Error::Config(
                "max pool padding exceeds half the window".into(),
            ));
        }
        let ho = super::conv_output_size(input[2], self.kernel, self.stride, self.padding)?;
        let wo = super::conv_output_size(input[3], self.kernel, self.stride, self.padding)?;
        Ok([input[0], input[1], ho, wo])
    }

    /// Output plus the flat input index selected for each output cell.
    fn run(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
        let shape = self.output_shape(x.shape())?;
        let [_, _, h, w] = x.shape();
        let [_, _, ho, wo] = shape;
        let mut out = Tensor4::zeros(shape);
        let mut argmax = vec![0; out.len()];
        for (p, (dst, idx)) in out
            .data_mut()
            .chunks_mut(ho * wo)
            .zip(argmax.chunks_mut(ho * wo))
            .enumerate()
        {
            let base = p * h * w;
            let src = &x.data()[base..base + h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(T, usize)> = None;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            if best.is_none_or(|(v, _)| src[at] > v) {
                                best = Some((src[at], at));
                            }
                        }
                    }
                    let (v, at) = best.expect("window overlaps the input");
                    dst[oy * wo + ox] = v;
                    idx[oy * wo + ox] = base + at;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(x)?.0)
    }
}

stateless!(MaxPool2d);

impl<T: Scalar> Layer<T> for MaxPool2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let (y, argmax) = self.run(x)?;
        self.cache.put((x.shape(), argmax));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (shape, argmax) = self.cache.take("max_pool2d")?;
        if grad_out.len() != argmax.len() {
            return Err(Error::shape("max_pool2d backward", shape, grad_out.shape()));
        }
        let mut dx = Tensor4::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            d[i] = d[i] + g;
        }
        Ok(dx)
    }
}
