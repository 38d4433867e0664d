use super::spline::SplineGrid;
use crate::error::{Error, Result};
use crate::nn::{
    constant_param, he_normal, join, normal_param, silu, silu_grad, Cache, InitRng, Layer, Mode,
};
use crate::nn::{Parameterized, StateKind};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor4;

/// Dense KAN layer: every edge `(o, i)` carries
/// `base_weight * silu(x) + spline_scale * sum_j coeffs_j * B_j(x)`.
///
/// Operates on the innermost axis, so `(B, 1, N, in)` token tensors map to `(B, 1, N, out)`.
#[derive(Debug, Clone)]
pub struct KanLinear<T> {
    pub grid: SplineGrid<T>,
    /// `(out, in, num_basis, 1)`
    pub coeffs: Tensor4<T>,
    /// `(out, in, 1, 1)`
    pub base_weight: Tensor4<T>,
    /// `(out, in, 1, 1)`
    pub spline_scale: Tensor4<T>,
    cache: Cache<KanCache<T>>,
}

#[derive(Debug)]
struct KanCache<T> {
    x: Tensor4<T>,
    basis: Vec<T>,
    derivs: Vec<T>,
}

impl<T: Scalar> KanLinear<T> {
    pub fn new(
        rng: &mut InitRng,
        in_features: usize,
        out_features: usize,
        grid: SplineGrid<T>,
    ) -> Self {
        let nb = grid.num_basis();
        let coeff_std = 0.1 / (in_features.max(1) as f64).sqrt();
        Self {
            coeffs: normal_param(rng, [out_features, in_features, nb, 1], coeff_std),
            base_weight: he_normal(rng, [out_features, in_features, 1, 1], in_features),
            spline_scale: constant_param([out_features, in_features, 1, 1], 1.0),
            grid,
            cache: Cache::default(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.coeffs.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.coeffs.shape()[0]
    }

    fn rows(&self, x: &Tensor4<T>) -> Result<usize> {
        if x.shape()[3] != self.in_features() {
            return Err(Error::Config(format!(
                "kan_linear expects {} input features, got input of shape {:?}",
                self.in_features(),
                x.shape()
            )));
        }
        Ok(x.len() / self.in_features())
    }

    /// Spline weights folded with their per-edge scale: `(out, in * num_basis)`.
    fn scaled_coeffs(&self) -> Vec<T> {
        let nb = self.grid.num_basis();
        let scale = self.spline_scale.data();
        self.coeffs
            .data()
            .chunks(nb)
            .zip(scale)
            .flat_map(|(c, &s)| c.iter().map(move |&v| v * s))
            .collect()
    }

    fn output_shape(&self, x: &Tensor4<T>) -> [usize; 4] {
        let [b, c, n, _] = x.shape();
        [b, c, n, self.out_features()]
    }

    fn run(&self, x: &Tensor4<T>, basis: &[T]) -> Result<Tensor4<T>> {
        let rows = self.rows(x)?;
        let (i, o) = (self.in_features(), self.out_features());
        let nb = self.grid.num_basis();
        let act: Vec<T> = x.data().iter().map(|&v| silu(v)).collect();
        let mut y = Tensor4::zeros(self.output_shape(x));
        matmul(
            false,
            true,
            rows,
            i,
            o,
            &act,
            self.base_weight.data(),
            T::zero(),
            y.data_mut(),
        );
        matmul(
            false,
            true,
            rows,
            i * nb,
            o,
            basis,
            &self.scaled_coeffs(),
            T::one(),
            y.data_mut(),
        );
        Ok(y)
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let nb = self.grid.num_basis();
        let mut basis = vec![T::zero(); x.len() * nb];
        for (&v, row) in x.data().iter().zip(basis.chunks_mut(nb)) {
            self.grid.basis_into(v, row);
        }
        self.run(x, &basis)
    }
}

impl<T: Scalar> Parameterized<T> for KanLinear<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        f(&join(prefix, "coeffs"), &self.coeffs, StateKind::Param);
        f(
            &join(prefix, "base_weight"),
            &self.base_weight,
            StateKind::Param,
        );
        f(
            &join(prefix, "spline_scale"),
            &self.spline_scale,
            StateKind::Param,
        );
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        f(&join(prefix, "coeffs"), &mut self.coeffs, StateKind::Param);
        f(
            &join(prefix, "base_weight"),
            &mut self.base_weight,
            StateKind::Param,
        );
        f(
            &join(prefix, "spline_scale"),
            &mut self.spline_scale,
            StateKind::Param,
        );
    }
}

impl<T: Scalar> Layer<T> for KanLinear<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        self.rows(x)?;
        let nb = self.grid.num_basis();
        let mut basis = vec![T::zero(); x.len() * nb];
        let mut derivs = vec![T::zero(); x.len() * nb];
        for ((&v, b), d) in x
            .data()
            .iter()
            .zip(basis.chunks_mut(nb))
            .zip(derivs.chunks_mut(nb))
        {
            self.grid.basis_and_derivative_into(v, b, d);
        }
        let y = self.run(x, &basis)?;
        self.cache.put(KanCache {
            x: x.clone(),
            basis,
            derivs,
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let KanCache { x, basis, derivs } = self.cache.take("kan_linear")?;
        if grad_out.shape() != self.output_shape(&x) {
            return Err(Error::shape(
                "kan_linear backward",
                self.output_shape(&x),
                grad_out.shape(),
            ));
        }
        let rows = x.len() / self.in_features();
        let (i, o) = (self.in_features(), self.out_features());
        let nb = self.grid.num_basis();
        let dy = grad_out.data();
        let act: Vec<T> = x.data().iter().map(|&v| silu(v)).collect();
        let scaled = self.scaled_coeffs();

        let mut d_base = vec![T::zero(); o * i];
        matmul(true, false, o, rows, i, dy, &act, T::zero(), &mut d_base);
        let mut d_scaled = vec![T::zero(); o * i * nb];
        matmul(
            true,
            false,
            o,
            rows,
            i * nb,
            dy,
            &basis,
            T::zero(),
            &mut d_scaled,
        );

        let mut d_coeffs = vec![T::zero(); o * i * nb];
        let mut d_scale = vec![T::zero(); o * i];
        for (edge, ((dc, ds), c)) in d_coeffs
            .chunks_mut(nb)
            .zip(d_scaled.chunks(nb))
            .zip(self.coeffs.data().chunks(nb))
            .enumerate()
        {
            let s = self.spline_scale.data()[edge];
            for j in 0..nb {
                dc[j] = ds[j] * s;
                d_scale[edge] = d_scale[edge] + ds[j] * c[j];
            }
        }

        let mut d_act = vec![T::zero(); rows * i];
        matmul(
            false,
            false,
            rows,
            o,
            i,
            dy,
            self.base_weight.data(),
            T::zero(),
            &mut d_act,
        );
        let mut d_basis = vec![T::zero(); rows * i * nb];
        matmul(
            false,
            false,
            rows,
            o,
            i * nb,
            dy,
            &scaled,
            T::zero(),
            &mut d_basis,
        );

        let mut dx = Tensor4::zeros(x.shape());
        for (k, v) in dx.data_mut().iter_mut().enumerate() {
            let spline: T = d_basis[k * nb..(k + 1) * nb]
                .iter()
                .zip(&derivs[k * nb..(k + 1) * nb])
                .map(|(&a, &b)| a * b)
                .sum();
            *v = d_act[k] * silu_grad(x.data()[k]) + spline;
        }

        self.coeffs.accumulate_grad(&d_coeffs);
        self.base_weight.accumulate_grad(&d_base);
        self.spline_scale.accumulate_grad(&d_scale);
        Ok(dx)
    }
}

/// Chain of KAN layers applied in order (`layers[0]` first).
#[derive(Debug, Clone)]
pub struct KanComposition<T> {
    pub layers: Vec<KanLinear<T>>,
}

impl<T: Scalar> KanComposition<T> {
    pub fn new(layers: Vec<KanLinear<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config(
                "kan composition needs at least one layer".into(),
            ));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(Error::Config(format!(
                    "kan layer {k} emits {} features but layer {} expects {}",
                    pair[0].out_features(),
                    k + 1,
                    pair[1].in_features()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `depth` square `dim -> dim` layers sharing one grid layout.
    pub fn uniform(rng: &mut InitRng, dim: usize, depth: usize, grid: &SplineGrid<T>) -> Self {
        Self {
            layers: (0..depth)
                .map(|_| KanLinear::new(rng, dim, dim, grid.clone()))
                .collect(),
        }
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.apply(&h)?;
        }
        Ok(h)
    }
}

impl<T: Scalar> Parameterized<T> for KanComposition<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit_state(&join(prefix, &k.to_string()), f);
        }
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_state_mut(&join(prefix, &k.to_string()), f);
        }
    }
}

impl<T: Scalar> Layer<T> for KanComposition<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }
}
