//! Bilinear-upsampling decoder stages and the 1x1 segmentation head.

use crate::encoders::ConvBnRelu;
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, InitRng, Layer, Mode, Parameterized, StateKind, Upsample2x};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// 2x bilinear upsample followed by two 3x3 conv/BN/ReLU refinements.
#[derive(Debug, Clone)]
pub struct DecoderStage<T> {
    up: Upsample2x<T>,
    pub convs: [ConvBnRelu<T>; 2],
}

impl<T: Scalar> DecoderStage<T> {
    pub fn new(rng: &mut InitRng, in_ch: usize, out_ch: usize) -> Self {
        let first = ConvBnRelu::new(rng, in_ch, out_ch, 3, 1, 1);
        let second = ConvBnRelu::new(rng, out_ch, out_ch, 3, 1, 1);
        Self {
            up: Upsample2x::new(),
            convs: [first, second],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.convs[1].conv.out_channels()
    }

    pub fn zero_weights(&mut self) {
        for c in &mut self.convs {
            c.conv.zero_weights();
        }
    }

    fn check(&self, input: Shape4) -> Result<()> {
        if input[1] != self.in_channels() {
            return Err(Error::Config(format!(
                "decoder stage expects {} channels, got input of shape {input:?}",
                self.in_channels()
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check(input)?;
        let [b, _, h, w] = input;
        let s = self.convs[0].output_shape([b, input[1], 2 * h, 2 * w])?;
        self.convs[1].output_shape(s)
    }
}

impl<T: Scalar> Parameterized<T> for DecoderStage<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_state(&join(prefix, &format!("conv{i}")), f);
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_state_mut(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

impl<T: Scalar> Layer<T> for DecoderStage<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x.shape())?;
        let h = self.up.forward(x, mode)?;
        let h = self.convs[0].forward(&h, mode)?;
        self.convs[1].forward(&h, mode)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.convs[1].backward(grad_out)?;
        let g = self.convs[0].backward(&g)?;
        self.up.backward(&g)
    }
}

/// Pointwise projection to per-pixel class logits; no activation.
#[derive(Debug, Clone)]
pub struct SegHead<T> {
    pub conv: Conv2d<T>,
    pub image_height: usize,
    pub image_width: usize,
}

impl<T: Scalar> SegHead<T> {
    pub fn new(
        rng: &mut InitRng,
        in_ch: usize,
        classes: usize,
        image_height: usize,
        image_width: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, classes, 1, 1, 0),
            image_height,
            image_width,
        }
    }

    fn check(&self, input: Shape4) -> Result<()> {
        if (input[2], input[3]) != (self.image_height, self.image_width) {
            return Err(Error::Config(format!(
                "segmentation head received a {}x{} map but the configured image size is {}x{}",
                input[2], input[3], self.image_height, self.image_width
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check(input)?;
        self.conv.output_shape(input)
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x.shape())?;
        self.conv.apply(x)
    }
}

impl<T: Scalar> Parameterized<T> for SegHead<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        self.conv.visit_state(prefix, f);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        self.conv.visit_state_mut(prefix, f);
    }
}

impl<T: Scalar> Layer<T> for SegHead<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x.shape())?;
        self.conv.forward(x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.conv.backward(grad_out)
    }
}
