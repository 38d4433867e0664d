use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, InitRng, Layer, Mode, Parameterized, StateKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// `(B, D, h, w)` feature map to `(B, 1, h*w, D)` tokens in row-major patch order.
pub fn map_to_tokens<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [b, d, h, w] = x.shape();
    Tensor4::from_fn([b, 1, h * w, d], |[bi, _, n, k]| x.at(bi, k, n / w, n % w))
}

/// Inverse of [`map_to_tokens`] for a `grid_h x grid_w` patch grid.
pub fn tokens_to_map<T: Scalar>(
    t: &Tensor4<T>,
    grid_h: usize,
    grid_w: usize,
) -> Result<Tensor4<T>> {
    let [b, one, n, d] = t.shape();
    if one != 1 {
        return Err(Error::Config(format!(
            "token tensor must have shape (B, 1, N, D), got {:?}",
            t.shape()
        )));
    }
    if n != grid_h * grid_w {
        return Err(Error::Config(format!(
            "{n} tokens do not form a {grid_h}x{grid_w} spatial grid"
        )));
    }
    Ok(Tensor4::from_fn([b, d, grid_h, grid_w], |[bi, k, i, j]| {
        t.at(bi, 0, i * grid_w + j, k)
    }))
}

/// Repeats every cell over a `factor x factor` block (nearest-neighbour expansion).
pub fn expand_patches<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    if factor == 1 {
        return x.clone();
    }
    let [b, c, h, w] = x.shape();
    Tensor4::from_fn([b, c, h * factor, w * factor], |[bi, ci, i, j]| {
        x.at(bi, ci, i / factor, j / factor)
    })
}

/// Adjoint of [`expand_patches`]: sums each block back into its source cell.
pub fn expand_patches_backward<T: Scalar>(g: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    if factor == 1 {
        return Ok(g.clone());
    }
    let [b, c, h, w] = g.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "expand_patches backward",
            g.shape(),
            [factor, factor],
        ));
    }
    let mut out = Tensor4::zeros([b, c, h / factor, w / factor]);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = out.at(bi, ci, i / factor, j / factor) + g.at(bi, ci, i, j);
                    out.set(bi, ci, i / factor, j / factor, v);
                }
            }
        }
    }
    Ok(out)
}

/// Non-overlapping `P x P` stride-`P` convolutional projection followed by flattening into tokens.
#[derive(Debug, Clone)]
pub struct PatchEmbed<T> {
    pub patch_size: usize,
    pub proj: Conv2d<T>,
    grid: Option<(usize, usize)>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(rng: &mut InitRng, in_ch: usize, embed_dim: usize, patch_size: usize) -> Self {
        Self {
            patch_size,
            proj: Conv2d::new(rng, in_ch, embed_dim, patch_size, patch_size, 0),
            grid: None,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.out_channels()
    }

    /// Patch grid `(H / P, W / P)` for an input plane, rejecting indivisible sizes.
    pub fn grid_for(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "patch embedding: height {h} and width {w} must be divisible by patch size {p}"
            )));
        }
        Ok((h / p, w / p))
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.grid_for(x.shape()[2], x.shape()[3])?;
        Ok(map_to_tokens(&self.proj.apply(x)?))
    }
}

impl<T: Scalar> Parameterized<T> for PatchEmbed<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        self.proj.visit_state(&join(prefix, "proj"), f);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        self.proj.visit_state_mut(&join(prefix, "proj"), f);
    }
}

impl<T: Scalar> Layer<T> for PatchEmbed<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let grid = self.grid_for(x.shape()[2], x.shape()[3])?;
        let y = self.proj.forward(x, mode)?;
        self.grid = Some(grid);
        Ok(map_to_tokens(&y))
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (gh, gw) = self
            .grid
            .take()
            .ok_or(Error::MissingForward("patch_embed"))?;
        self.proj.backward(&tokens_to_map(grad_out, gh, gw)?)
    }
}
