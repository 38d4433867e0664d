use dekan_core::nn::*;
use dekan_core::*;

/// Per-pixel bilinear sample with half-pixel centres and edge clamping.
fn bilinear_oracle(src: &[[f64; 2]; 2], oy: usize, ox: usize) -> f64 {
    let coord = |o: usize| ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    let (sy, sx) = (coord(oy), coord(ox));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
    let (ly, lx) = (sy - y0 as f64, sx - x0 as f64);
    (1.0 - ly) * ((1.0 - lx) * src[y0][x0] + lx * src[y0][x1])
        + ly * ((1.0 - lx) * src[y1][x0] + lx * src[y1][x1])
}

#[test]
fn upsample_matches_per_pixel_formula() {
    let src = [[0.0, 1.0], [2.0, 3.0]];
    let x = Tensor4::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = bilinear_upsample2x(&x).unwrap();
    assert_eq!(y.shape(), [1, 1, 4, 4]);
    for oy in 0..4 {
        for ox in 0..4 {
            assert!((y.at(0, 0, oy, ox) - bilinear_oracle(&src, oy, ox)).abs() < 1e-15);
        }
    }
    // First row: 0, 0.25, 0.75, 1.
    assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn upsample_of_constants_is_constant() {
    let y = bilinear_upsample2x(&Tensor4::<f64>::full([2, 3, 3, 5], 1.7)).unwrap();
    assert!(y.data().iter().all(|&v| v == 1.7));
    let y = bilinear_upsample2x(&Tensor4::<f64>::full([1, 1, 1, 1], 5.0)).unwrap();
    assert_eq!(y.data(), &[5.0; 4]);
}

#[test]
fn upsample_backward_is_transpose() {
    let x = Tensor4::<f64>::from_fn([1, 2, 3, 4], |[_, c, h, w]| {
        ((c * 12 + h * 4 + w) as f64).cos()
    });
    let y = bilinear_upsample2x(&x).unwrap();
    let g = Tensor4::<f64>::from_fn(y.shape(), |[_, c, h, w]| ((c + h * 3 + w * 7) as f64).sin());
    let dx = bilinear_upsample2x_backward(&g, x.shape()).unwrap();
    let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn pool_identity_and_bins() {
    let x = Tensor4::<f64>::from_vec([1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
    assert_eq!(adaptive_avg_pool2d(&x, 4, 4).unwrap(), x);
    let y = adaptive_avg_pool2d(&x, 2, 2).unwrap();
    assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    let ones = adaptive_avg_pool2d(&Tensor4::<f64>::full([1, 1, 4, 4], 1.0), 2, 2).unwrap();
    assert_eq!(ones.data(), &[1.0; 4]);
    let g = adaptive_avg_pool2d(&x, 1, 1).unwrap();
    assert_eq!(g.data()[0], x.mean());
}

#[test]
fn pool_bins_overlap_for_uneven_sizes() {
    assert_eq!(pool_bin(0, 5, 3), (0, 2));
    assert_eq!(pool_bin(1, 5, 3), (1, 4));
    assert_eq!(pool_bin(2, 5, 3), (3, 5));
}

#[test]
fn max_pool_picks_window_max() {
    let x = Tensor4::<f64>::from_vec([1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
    let mut mp = MaxPool2d::new(3, 2, 1);
    let y = mp.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.data(), &[6.0, 8.0, 14.0, 16.0]);
    let dx = mp.backward(&Tensor4::full([1, 1, 2, 2], 1.0)).unwrap();
    assert_eq!(dx.sum(), 4.0);
    assert_eq!(dx.at(0, 0, 1, 1), 1.0);
}
