use super::linear::KanComposition;
use super::patch::{map_to_tokens, tokens_to_map};
use super::spline::SplineGrid;
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, InitRng, Layer, Mode, Parameterized, Relu, StateKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Number of KAN-then-convolution stages in a block.
pub const KAN_BLOCK_STAGES: usize = 3;
/// KAN layers chained inside each stage's learnable-activation map.
pub const KAN_DEPTH: usize = 3;

#[derive(Debug, Clone)]
struct Stage<T> {
    kan: KanComposition<T>,
    conv: Conv2d<T>,
    norm: BatchNorm2d<T>,
    relu: Relu<T>,
}

/// Hybrid token block: three stages of token-wise KAN map followed by
/// 3x3 convolution, batch norm and ReLU on the spatial view, plus an identity residual.
///
/// Input and output are `(B, 1, N, D)` tokens laid out on a fixed `grid_h x grid_w` grid.
#[derive(Debug, Clone)]
pub struct KanBlock<T> {
    stages: Vec<Stage<T>>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl<T: Scalar> KanBlock<T> {
    pub fn new(
        rng: &mut InitRng,
        dim: usize,
        grid_h: usize,
        grid_w: usize,
        spline: &SplineGrid<T>,
    ) -> Self {
        let stages = (0..KAN_BLOCK_STAGES)
            .map(|_| Stage {
                kan: KanComposition::uniform(rng, dim, KAN_DEPTH, spline),
                conv: Conv2d::new(rng, dim, dim, 3, 1, 1),
                norm: BatchNorm2d::new(dim),
                relu: Relu::new(),
            })
            .collect();
        Self {
            stages,
            grid_h,
            grid_w,
        }
    }

    pub fn dim(&self) -> usize {
        self.stages[0].conv.out_channels()
    }

    /// Zeroes every convolution of the inner path so the block reduces to its shortcut.
    pub fn zero_inner_path(&mut self) {
        for s in &mut self.stages {
            s.conv.zero_weights();
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        let [_, one, n, d] = x.shape();
        if one != 1 || d != self.dim() {
            return Err(Error::Config(format!(
                "kan block of width {} cannot take tokens of shape {:?}",
                self.dim(),
                x.shape()
            )));
        }
        if n != self.grid_h * self.grid_w {
            return Err(Error::Config(format!(
                "{n} tokens do not form the {}x{} spatial grid of this kan block",
                self.grid_h, self.grid_w
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for KanBlock<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.kan.visit_state(&join(&p, "kan"), f);
            s.conv.visit_state(&join(&p, "conv"), f);
            s.norm.visit_state(&join(&p, "norm"), f);
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.kan.visit_state_mut(&join(&p, "kan"), f);
            s.conv.visit_state_mut(&join(&p, "conv"), f);
            s.norm.visit_state_mut(&join(&p, "norm"), f);
        }
    }
}

impl<T: Scalar> Layer<T> for KanBlock<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x)?;
        let (gh, gw) = (self.grid_h, self.grid_w);
        let mut h = x.clone();
        for s in &mut self.stages {
            let t = s.kan.forward(&h, mode)?;
            let m = s.conv.forward(&tokens_to_map(&t, gh, gw)?, mode)?;
            let m = s.norm.forward(&m, mode)?;
            let m = s.relu.forward(&m, mode)?;
            h = map_to_tokens(&m);
        }
        h.add(x)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (gh, gw) = (self.grid_h, self.grid_w);
        let mut g = grad_out.clone();
        for s in self.stages.iter_mut().rev() {
            let m = s.relu.backward(&tokens_to_map(&g, gh, gw)?)?;
            let m = s.norm.backward(&m)?;
            let m = s.conv.backward(&m)?;
            g = s.kan.backward(&map_to_tokens(&m))?;
        }
        g.add(grad_out)
    }
}
