//! The two feature-extraction streams and their additive fusion.

use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, join, BatchNorm2d, Conv2d, InitRng, Layer,
    MaxPool2d, Mode, Parameterized, Relu, StateKind,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Channel widths of the four encoder stages at multiplier 1.
pub const ENCODER_WIDTHS: [usize; 4] = [64, 128, 256, 512];
/// Spatial reduction of the residual encoder.
pub const RESNET_DOWNSAMPLE: usize = 32;

/// `ENCODER_WIDTHS` scaled by `multiplier`, never below one channel.
pub fn scaled_widths(multiplier: f64) -> [usize; 4] {
    ENCODER_WIDTHS.map(|c| ((c as f64 * multiplier).round() as usize).max(1))
}

/// Convolution, batch norm and ReLU in sequence.
#[derive(Debug, Clone)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub norm: BatchNorm2d<T>,
    relu: Relu<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        rng: &mut InitRng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, out_ch, kernel, stride, padding),
            norm: BatchNorm2d::new(out_ch),
            relu: Relu::new(),
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.conv.output_shape(input)
    }
}

impl<T: Scalar> Parameterized<T> for ConvBnRelu<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        self.conv.visit_state(&join(prefix, "conv"), f);
        self.norm.visit_state(&join(prefix, "norm"), f);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        self.conv.visit_state_mut(&join(prefix, "conv"), f);
        self.norm.visit_state_mut(&join(prefix, "norm"), f);
    }
}

impl<T: Scalar> Layer<T> for ConvBnRelu<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.norm.forward(&y, mode)?;
        self.relu.forward(&y, mode)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.relu.backward(grad_out)?;
        let g = self.norm.backward(&g)?;
        self.conv.backward(&g)
    }
}

/// Full-resolution stream for the original image: four 3x3 stride-1 conv/BN/ReLU stages.
#[derive(Debug, Clone)]
pub struct CnnEncoder<T> {
    pub stages: Vec<ConvBnRelu<T>>,
}

impl<T: Scalar> CnnEncoder<T> {
    pub fn new(rng: &mut InitRng, in_channels: usize, widths: [usize; 4]) -> Self {
        let mut prev = in_channels;
        let stages = widths
            .iter()
            .map(|&w| {
                let s = ConvBnRelu::new(rng, prev, w, 3, 1, 1);
                prev = w;
                s
            })
            .collect();
        Self { stages }
    }

    pub fn in_channels(&self) -> usize {
        self.stages[0].conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.stages[self.stages.len() - 1].conv.out_channels()
    }

    fn check(&self, input: Shape4) -> Result<()> {
        if input[1] != self.in_channels() {
            return Err(Error::Config(format!(
                "cnn encoder expects {} input channels, got input of shape {input:?}",
                self.in_channels()
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check(input)?;
        self.stages
            .iter()
            .try_fold(input, |s, st| st.output_shape(s))
    }
}

impl<T: Scalar> Parameterized<T> for CnnEncoder<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_state(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_state_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}

impl<T: Scalar> Layer<T> for CnnEncoder<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x.shape())?;
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_out.clone();
        for s in self.stages.iter_mut().rev() {
            g = s.backward(&g)?;
        }
        Ok(g)
    }
}

/// Two 3x3 convolutions with a residual shortcut; a 1x1 projection is used when shape changes.
#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    pub conv1: ConvBnRelu<T>,
    pub conv2: Conv2d<T>,
    pub norm2: BatchNorm2d<T>,
    pub projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu<T>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(rng: &mut InitRng, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let projection = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(rng, in_ch, out_ch, 1, stride, 0),
                BatchNorm2d::new(out_ch),
            )
        });
        Self {
            conv1: ConvBnRelu::new(rng, in_ch, out_ch, 3, stride, 1),
            conv2: Conv2d::new(rng, out_ch, out_ch, 3, 1, 1),
            norm2: BatchNorm2d::new(out_ch),
            projection,
            relu_out: Relu::new(),
        }
    }

    /// Zeroes both 3x3 convolutions, leaving only the shortcut.
    pub fn zero_conv_path(&mut self) {
        self.conv1.conv.zero_weights();
        self.conv2.zero_weights();
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let s = self.conv1.output_shape(input)?;
        self.conv2.output_shape(s)
    }
}

impl<T: Scalar> Parameterized<T> for BasicBlock<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        self.conv1.visit_state(&join(prefix, "conv1"), f);
        self.conv2.visit_state(&join(prefix, "conv2"), f);
        self.norm2.visit_state(&join(prefix, "norm2"), f);
        if let Some((c, n)) = &self.projection {
            c.visit_state(&join(prefix, "proj.conv"), f);
            n.visit_state(&join(prefix, "proj.norm"), f);
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        self.conv1.visit_state_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_state_mut(&join(prefix, "conv2"), f);
        self.norm2.visit_state_mut(&join(prefix, "norm2"), f);
        if let Some((c, n)) = &mut self.projection {
            c.visit_state_mut(&join(prefix, "proj.conv"), f);
            n.visit_state_mut(&join(prefix, "proj.norm"), f);
        }
    }
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let a = self.conv1.forward(x, mode)?;
        let b = self.norm2.forward(&self.conv2.forward(&a, mode)?, mode)?;
        let shortcut = match &mut self.projection {
            Some((c, n)) => n.forward(&c.forward(x, mode)?, mode)?,
            None => x.clone(),
        };
        self.relu_out.forward(&b.add(&shortcut)?, mode)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.relu_out.backward(grad_out)?;
        let ga = self.conv2.backward(&self.norm2.backward(&g)?)?;
        let mut dx = self.conv1.backward(&ga)?;
        let ds = match &mut self.projection {
            Some((c, n)) => c.backward(&n.backward(&g)?)?,
            None => g,
        };
        dx.add_assign(&ds)?;
        Ok(dx)
    }
}

/// ResNet-18 layout: 7x7/2 stem, 3x3/2 max pool, four stages of two basic blocks.
#[derive(Debug, Clone)]
pub struct ResNetEncoder<T> {
    pub stem: ConvBnRelu<T>,
    pool: MaxPool2d<T>,
    pub stages: Vec<[BasicBlock<T>; 2]>,
}

impl<T: Scalar> ResNetEncoder<T> {
    pub fn new(rng: &mut InitRng, in_channels: usize, widths: [usize; 4]) -> Self {
        let stem = ConvBnRelu::new(rng, in_channels, widths[0], 7, 2, 3);
        let mut prev = widths[0];
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let stride = if i == 0 { 1 } else { 2 };
                let first = BasicBlock::new(rng, prev, w, stride);
                let second = BasicBlock::new(rng, w, w, 1);
                prev = w;
                [first, second]
            })
            .collect();
        Self {
            stem,
            pool: MaxPool2d::new(3, 2, 1),
            stages,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stem.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.stages[3][1].conv2.out_channels()
    }

    fn check(&self, input: Shape4) -> Result<()> {
        if input[1] != self.in_channels() {
            return Err(Error::Config(format!(
                "residual encoder expects {} input channels, got input of shape {input:?}",
                self.in_channels()
            )));
        }
        if input[2] % RESNET_DOWNSAMPLE != 0
            || input[3] % RESNET_DOWNSAMPLE != 0
            || input[2] == 0
            || input[3] == 0
        {
            return Err(Error::Config(format!(
                "residual encoder input {}x{} is not divisible by {RESNET_DOWNSAMPLE}",
                input[2], input[3]
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check(input)?;
        let mut s = self.pool.output_shape(self.stem.output_shape(input)?)?;
        for stage in &self.stages {
            for blk in stage {
                s = blk.output_shape(s)?;
            }
        }
        Ok(s)
    }
}

impl<T: Scalar> Parameterized<T> for ResNetEncoder<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        self.stem.visit_state(&join(prefix, "stem"), f);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, blk) in stage.iter().enumerate() {
                blk.visit_state(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        self.stem.visit_state_mut(&join(prefix, "stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, blk) in stage.iter_mut().enumerate() {
                blk.visit_state_mut(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }
}

impl<T: Scalar> Layer<T> for ResNetEncoder<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x.shape())?;
        let mut h = self.pool.forward(&self.stem.forward(x, mode)?, mode)?;
        for stage in &mut self.stages {
            for blk in stage.iter_mut() {
                h = blk.forward(&h, mode)?;
            }
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_out.clone();
        for stage in self.stages.iter_mut().rev() {
            for blk in stage.iter_mut().rev() {
                g = blk.backward(&g)?;
            }
        }
        self.stem.backward(&self.pool.backward(&g)?)
    }
}

/// `f_res + adaptive_avg_pool(f_cnn)` resized to the spatial extent of `f_res`.
pub fn fuse_features<T: Scalar>(f_res: &Tensor4<T>, f_cnn: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [b, c, h, w] = f_res.shape();
    if f_cnn.shape()[0] != b || f_cnn.shape()[1] != c {
        return Err(Error::Config(format!(
            "cannot fuse residual features {:?} with cnn features {:?}: batch/channel mismatch",
            f_res.shape(),
            f_cnn.shape()
        )));
    }
    f_res.add(&adaptive_avg_pool2d(f_cnn, h, w)?)
}

/// Gradients of [`fuse_features`]: `(d f_res, d f_cnn)`.
pub fn fuse_features_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    cnn_shape: Shape4,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    Ok((
        grad_out.clone(),
        adaptive_avg_pool2d_backward(grad_out, cnn_shape)?,
    ))
}
