use dekan_core::kan::SplineConfig;
use dekan_core::kan::*;
use dekan_core::nn::*;
use dekan_core::*;
use rand::{Rng, SeedableRng};

fn grid() -> SplineGrid<f64> {
    SplineGrid::new(SplineConfig::default()).unwrap()
}

fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
    }
    (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x)
        + (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x)
}

/// Per-edge scalar loop over the layer formula.
fn oracle(layer: &KanLinear<f64>, x: &[f64]) -> Vec<f64> {
    let (i_n, o_n) = (layer.in_features(), layer.out_features());
    let nb = layer.grid.num_basis();
    let t = layer.grid.knots();
    let k = layer.grid.order();
    let mut y = vec![0.0; o_n];
    for (o, yo) in y.iter_mut().enumerate() {
        for (i, &xi) in x.iter().enumerate() {
            let edge = o * i_n + i;
            let mut spline = 0.0;
            for j in 0..nb {
                spline += layer.coeffs.data()[edge * nb + j] * cox_de_boor(t, j, k, xi);
            }
            *yo += layer.base_weight.data()[edge] * xi / (1.0 + (-xi).exp())
                + layer.spline_scale.data()[edge] * spline;
        }
    }
    y
}

#[test]
fn zero_coeffs_leave_silu_path() {
    let mut rng = InitRng::seed_from_u64(1);
    let mut l = KanLinear::new(&mut rng, 3, 3, grid());
    l.coeffs.data_mut().iter_mut().for_each(|v| *v = 0.0);
    l.spline_scale.data_mut().iter_mut().for_each(|v| *v = 7.5);
    for o in 0..3 {
        for i in 0..3 {
            l.base_weight.data_mut()[o * 3 + i] = if o == i { 1.0 } else { 0.0 };
        }
    }
    let x = Tensor4::from_vec([1, 1, 2, 3], vec![-2.0, -0.3, 0.0, 0.4, 1.0, 3.0]).unwrap();
    let y = l.apply(&x).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - silu(*b)).abs() < 1e-15);
    }
}

#[test]
fn unit_coeffs_give_constant_one() {
    let mut rng = InitRng::seed_from_u64(2);
    let mut l = KanLinear::new(&mut rng, 1, 1, grid());
    l.coeffs.data_mut().iter_mut().for_each(|v| *v = 1.0);
    l.base_weight.data_mut()[0] = 0.0;
    l.spline_scale.data_mut()[0] = 1.0;
    let xs: Vec<f64> = (0..=20).map(|k| -1.0 + 0.1 * k as f64).collect();
    let y = l
        .apply(&Tensor4::from_vec([1, 1, 21, 1], xs).unwrap())
        .unwrap();
    assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn matches_per_edge_oracle() {
    let mut rng = InitRng::seed_from_u64(11);
    let mut l = KanLinear::new(&mut rng, 3, 2, grid());
    l.spline_scale
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.5..1.5));
    let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-0.99..0.99)).collect();
    let y = l
        .apply(&Tensor4::from_vec([2, 1, 1, 3], xs.clone()).unwrap())
        .unwrap();
    for r in 0..2 {
        let expect = oracle(&l, &xs[r * 3..r * 3 + 3]);
        for o in 0..2 {
            assert!((y.data()[r * 2 + o] - expect[o]).abs() < 1e-12);
        }
    }
}

#[test]
fn locality_of_coefficients() {
    let mut rng = InitRng::seed_from_u64(4);
    let mut l = KanLinear::new(&mut rng, 1, 1, grid());
    let xs: Vec<f64> = (0..=200).map(|k| -1.0 + 0.01 * k as f64).collect();
    let x = Tensor4::from_vec([1, 1, xs.len(), 1], xs.clone()).unwrap();
    let before = l.apply(&x).unwrap();
    let j = 4;
    l.coeffs.data_mut()[j] += 0.5;
    let after = l.apply(&x).unwrap();
    let t = l.grid.knots().to_vec();
    for (k, &xv) in xs.iter().enumerate() {
        let changed = (after.data()[k] - before.data()[k]).abs() > 0.0;
        let in_support = xv > t[j] && xv < t[j + 4];
        if changed {
            assert!(xv >= t[j] && xv <= t[j + 4], "x {xv} outside support");
        }
        if in_support {
            assert!(changed, "x {xv} inside support but unchanged");
        }
    }
}

#[test]
fn feature_mismatch_is_config_error() {
    let mut rng = InitRng::seed_from_u64(1);
    let l = KanLinear::new(&mut rng, 4, 2, grid());
    assert!(matches!(
        l.apply(&Tensor4::zeros([1, 1, 2, 3])),
        Err(Error::Config(_))
    ));
}

#[test]
fn composition_checks_chain() {
    let mut rng = InitRng::seed_from_u64(1);
    let a = KanLinear::new(&mut rng, 4, 3, grid());
    let b = KanLinear::new(&mut rng, 2, 4, grid());
    assert!(matches!(
        KanComposition::new(vec![a, b]),
        Err(Error::Config(_))
    ));
}
