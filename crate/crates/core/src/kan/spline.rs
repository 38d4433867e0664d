use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Range, resolution and degree of the spline grid shared by a layer's edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 1.0,
            intervals: 5,
            order: 3,
        }
    }
}

/// Uniform knot vector over `[lo, hi]` extended by `order` knots on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid<T> {
    lo: T,
    hi: T,
    intervals: usize,
    order: usize,
    knots: Vec<T>,
}

impl<T: Scalar> SplineGrid<T> {
    pub fn new(config: SplineConfig) -> Result<Self> {
        let SplineConfig {
            lo,
            hi,
            intervals,
            order,
        } = config;
        if intervals < 1 {
            return Err(Error::Config(
                "spline grid needs at least one interval".into(),
            ));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("spline range [{lo}, {hi}] is empty")));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|i| T::lit(lo + (i as f64 - order as f64) * h))
            .collect();
        Ok(Self {
            lo: T::lit(lo),
            hi: T::lit(hi),
            intervals,
            order,
            knots,
        })
    }

    pub fn config(&self) -> SplineConfig {
        SplineConfig {
            lo: self.lo.as_f64(),
            hi: self.hi.as_f64(),
            intervals: self.intervals,
            order: self.order,
        }
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn range(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    /// Index of the knot interval holding `x`, which must lie in `[lo, hi]`.
    fn interval(&self, x: T) -> usize {
        let h = (self.hi - self.lo) / T::lit(self.intervals as f64);
        let m = ((x - self.knots[0]) / h).floor().to_usize().unwrap_or(0);
        m.clamp(self.order, self.order + self.intervals - 1)
    }

    /// Cox-de Boor recursion up to degree `order`; `work` ends with the degree-`order` values.
    /// When `lower` is given it receives the degree `order - 1` values.
    fn recurse(&self, x: T, work: &mut Vec<T>, lower: Option<&mut Vec<T>>) {
        let t = &self.knots;
        let n0 = t.len() - 1;
        work.clear();
        work.resize(n0, T::zero());
        work[self.interval(x)] = T::one();
        let mut lower = lower;
        for p in 1..=self.order {
            if p == self.order {
                if let Some(l) = lower.as_deref_mut() {
                    l.clear();
                    l.extend_from_slice(&work[..n0 - p + 1]);
                }
            }
            for i in 0..n0 - p {
                let left = (x - t[i]) / (t[i + p] - t[i]);
                let right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]);
                work[i] = left * work[i] + right * work[i + 1];
            }
        }
        work.truncate(self.num_basis());
    }

    /// Degree-`order` basis values at `x` (clamped to `[lo, hi]`), written to `out`.
    pub fn basis_into(&self, x: T, out: &mut [T]) {
        let mut work = Vec::with_capacity(self.knots.len());
        self.recurse(x.max(self.lo).min(self.hi), &mut work, None);
        out.copy_from_slice(&work);
    }

    /// Basis values and their derivatives with respect to `x`.
    ///
    /// Outside `[lo, hi]` the input is clamped, so the derivatives vanish there.
    pub fn basis_and_derivative_into(&self, x: T, values: &mut [T], derivs: &mut [T]) {
        let inside = x >= self.lo && x <= self.hi;
        let xc = x.max(self.lo).min(self.hi);
        let mut work = Vec::with_capacity(self.knots.len());
        let k = self.order;
        if k == 0 || !inside {
            self.recurse(xc, &mut work, None);
            values.copy_from_slice(&work);
            derivs.iter_mut().for_each(|d| *d = T::zero());
            return;
        }
        let mut lower = Vec::with_capacity(self.knots.len());
        self.recurse(xc, &mut work, Some(&mut lower));
        values.copy_from_slice(&work);
        let t = &self.knots;
        let kf = T::lit(k as f64);
        for (j, d) in derivs.iter_mut().enumerate() {
            *d = kf * lower[j] / (t[j + k] - t[j]) - kf * lower[j + 1] / (t[j + k + 1] - t[j + 1]);
        }
    }
}

/// Evaluates the basis for a batch of scalars: row `i` of the result holds `num_basis` values for `xs[i]`.
pub fn bspline_basis<T: Scalar>(xs: &[T], grid: &SplineGrid<T>) -> Vec<T> {
    let nb = grid.num_basis();
    let mut out = vec![T::zero(); xs.len() * nb];
    for (&x, row) in xs.iter().zip(out.chunks_mut(nb)) {
        grid.basis_into(x, row);
    }
    out
}
