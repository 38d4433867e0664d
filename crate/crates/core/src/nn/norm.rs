use super::{constant_param, join, Cache, Layer, Mode, Parameterized, StateKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const NORM_EPSILON: f64 = 1e-5;
/// Weight of the newest batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, height, width)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub scale: Tensor4<T>,
    pub shift: Tensor4<T>,
    pub running_mean: Tensor4<T>,
    pub running_var: Tensor4<T>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Cache<BnCache<T>>,
}

#[derive(Debug)]
struct BnCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: constant_param([channels, 1, 1, 1], 1.0),
            shift: constant_param([channels, 1, 1, 1], 0.0),
            running_mean: Tensor4::zeros([channels, 1, 1, 1]),
            running_var: Tensor4::full([channels, 1, 1, 1], T::one()),
            epsilon: NORM_EPSILON,
            momentum: BN_MOMENTUM,
            cache: Cache::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.shape()[1] != self.channels() {
            return Err(Error::shape("batch_norm2d", x.shape(), [self.channels()]));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance over `(batch, height, width)`.
    fn batch_stats(x: &Tensor4<T>) -> (Vec<T>, Vec<T>) {
        let [b, c, h, w] = x.shape();
        let n = T::lit((b * h * w) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s = s + x.plane(bi, ch).iter().copied().sum::<T>();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                v = v + x
                    .plane(bi, ch)
                    .iter()
                    .map(|&e| (e - m) * (e - m))
                    .sum::<T>();
            }
            mean[ch] = m;
            var[ch] = v / n;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Tensor4<T>, mean: &[T], inv_std: &[T]) -> (Tensor4<T>, Tensor4<T>) {
        let [_, c, _, _] = x.shape();
        let normalized = Tensor4::from_fn(x.shape(), |[b, ch, i, j]| {
            (x.at(b, ch, i, j) - mean[ch]) * inv_std[ch]
        });
        let (g, s) = (self.scale.data(), self.shift.data());
        let mut y = normalized.clone();
        let hw = x.shape()[2] * x.shape()[3];
        for (idx, chunk) in y.data_mut().chunks_mut(hw).enumerate() {
            let ch = idx % c;
            chunk.iter_mut().for_each(|v| *v = *v * g[ch] + s[ch]);
        }
        (normalized, y)
    }

    /// Eval-mode transform using the running statistics; keeps no state.
    pub fn apply_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let eps = T::lit(self.epsilon);
        let inv: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| (v + eps).sqrt().recip())
            .collect();
        Ok(self.normalize(x, self.running_mean.data(), &inv).1)
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm2d<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        f(&join(prefix, "scale"), &self.scale, StateKind::Param);
        f(&join(prefix, "shift"), &self.shift, StateKind::Param);
        f(
            &join(prefix, "running_mean"),
            &self.running_mean,
            StateKind::Buffer,
        );
        f(
            &join(prefix, "running_var"),
            &self.running_var,
            StateKind::Buffer,
        );
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        f(&join(prefix, "scale"), &mut self.scale, StateKind::Param);
        f(&join(prefix, "shift"), &mut self.shift, StateKind::Param);
        f(
            &join(prefix, "running_mean"),
            &mut self.running_mean,
            StateKind::Buffer,
        );
        f(
            &join(prefix, "running_var"),
            &mut self.running_var,
            StateKind::Buffer,
        );
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check(x)?;
        let eps = T::lit(self.epsilon);
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let [b, _, h, w] = x.shape();
                let n = b * h * w;
                if n < 2 {
                    return Err(Error::DegenerateStatistics {
                        op: "batch_norm2d",
                        detail: format!("batch*height*width = {n} < 2 in training mode"),
                    });
                }
                let (mean, var) = Self::batch_stats(x);
                let m = T::lit(self.momentum);
                let unbias = T::lit(n as f64 / (n - 1) as f64);
                for (ch, (rm, rv)) in self
                    .running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(self.running_var.data_mut().iter_mut())
                    .enumerate()
                {
                    *rm = (T::one() - m) * *rm + m * mean[ch];
                    *rv = (T::one() - m) * *rv + m * var[ch] * unbias;
                }
                let inv = var
                    .iter()
                    .map(|&v| (v + eps).sqrt().recip())
                    .collect::<Vec<T>>();
                (mean, inv)
            }
            Mode::Eval => {
                let inv = self
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| (v + eps).sqrt().recip())
                    .collect::<Vec<T>>();
                (self.running_mean.data().to_vec(), inv)
            }
        };
        let (normalized, y) = self.normalize(x, &mean, &inv_std);
        self.cache.put(BnCache {
            normalized,
            inv_std,
            mode,
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take("batch_norm2d")?;
        let xh = &cache.normalized;
        if grad_out.shape() != xh.shape() {
            return Err(Error::shape(
                "batch_norm2d backward",
                xh.shape(),
                grad_out.shape(),
            ));
        }
        let [b, c, h, w] = xh.shape();
        let n = T::lit((b * h * w) as f64);
        let mut dscale = vec![T::zero(); c];
        let mut dshift = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                for (&g, &xn) in grad_out.plane(bi, ch).iter().zip(xh.plane(bi, ch)) {
                    dshift[ch] = dshift[ch] + g;
                    dscale[ch] = dscale[ch] + g * xn;
                }
            }
        }
        let gamma = self.scale.data();
        let dx = Tensor4::from_fn(xh.shape(), |[bi, ch, i, j]| {
            let g = grad_out.at(bi, ch, i, j);
            let k = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => k * g,
                Mode::Train => k * (g - dshift[ch] / n - xh.at(bi, ch, i, j) * dscale[ch] / n),
            }
        });
        self.scale.accumulate_grad(&dscale);
        self.shift.accumulate_grad(&dshift);
        Ok(dx)
    }
}

/// Normalization over the innermost (feature) axis of each row.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub scale: Tensor4<T>,
    pub shift: Tensor4<T>,
    pub epsilon: f64,
    cache: Cache<(Tensor4<T>, Vec<T>)>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(features: usize) -> Self {
        Self {
            scale: constant_param([features, 1, 1, 1], 1.0),
            shift: constant_param([features, 1, 1, 1], 0.0),
            epsilon: NORM_EPSILON,
            cache: Cache::default(),
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }

    /// Returns `(normalized, output, inverse std per row)`.
    fn run(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>)> {
        let d = x.shape()[3];
        if d != self.features() {
            return Err(Error::shape("layer_norm", x.shape(), [self.features()]));
        }
        if d < 2 {
            return Err(Error::DegenerateStatistics {
                op: "layer_norm",
                detail: format!("feature dimension {d} < 2"),
            });
        }
        let nd = T::lit(d as f64);
        let eps = T::lit(self.epsilon);
        let mut normalized = x.clone();
        let mut inv = Vec::with_capacity(x.len() / d);
        for row in normalized.data_mut().chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / nd;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
            let is = (var + eps).sqrt().recip();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv.push(is);
        }
        let mut y = normalized.clone();
        let (g, s) = (self.scale.data(), self.shift.data());
        for row in y.data_mut().chunks_mut(d) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * g[k] + s[k];
            }
        }
        Ok((normalized, y, inv))
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(x)?.1)
    }
}

impl<T: Scalar> Parameterized<T> for LayerNorm<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        f(&join(prefix, "scale"), &self.scale, StateKind::Param);
        f(&join(prefix, "shift"), &self.shift, StateKind::Param);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        f(&join(prefix, "scale"), &mut self.scale, StateKind::Param);
        f(&join(prefix, "shift"), &mut self.shift, StateKind::Param);
    }
}

impl<T: Scalar> Layer<T> for LayerNorm<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let (normalized, y, inv) = self.run(x)?;
        self.cache.put((normalized, inv));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (xh, inv) = self.cache.take("layer_norm")?;
        if grad_out.shape() != xh.shape() {
            return Err(Error::shape(
                "layer_norm backward",
                xh.shape(),
                grad_out.shape(),
            ));
        }
        let d = self.features();
        let nd = T::lit(d as f64);
        let gamma = self.scale.data().to_vec();
        let mut dscale = vec![T::zero(); d];
        let mut dshift = vec![T::zero(); d];
        let mut dx = Tensor4::zeros(xh.shape());
        for (r, ((dy, xn), out)) in grad_out
            .data()
            .chunks(d)
            .zip(xh.data().chunks(d))
            .zip(dx.data_mut().chunks_mut(d))
            .enumerate()
        {
            let mut mean_g = T::zero();
            let mut mean_gx = T::zero();
            for k in 0..d {
                dshift[k] = dshift[k] + dy[k];
                dscale[k] = dscale[k] + dy[k] * xn[k];
                let g = dy[k] * gamma[k];
                mean_g = mean_g + g;
                mean_gx = mean_gx + g * xn[k];
            }
            mean_g = mean_g / nd;
            mean_gx = mean_gx / nd;
            for k in 0..d {
                out[k] = inv[r] * (dy[k] * gamma[k] - mean_g - xn[k] * mean_gx);
            }
        }
        self.scale.accumulate_grad(&dscale);
        self.shift.accumulate_grad(&dshift);
        Ok(dx)
    }
}
