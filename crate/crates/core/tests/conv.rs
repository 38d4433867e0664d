use dekan_core::nn::*;
use dekan_core::*;
use rand::SeedableRng;

/// Direct nested-loop cross-correlation.
fn oracle(
    x: &Tensor4<f64>,
    k: &Tensor4<f64>,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor4<f64> {
    let [b, _, h, w] = x.shape();
    let [co, ci, kh, kw] = k.shape();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Tensor4::from_fn([b, co, ho, wo], |[n, o, oy, ox]| {
        let mut acc = bias[o];
        for c in 0..ci {
            for i in 0..kh {
                for j in 0..kw {
                    let iy = (oy * stride + i) as isize - pad as isize;
                    let ix = (ox * stride + j) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += x.at(n, c, iy as usize, ix as usize) * k.at(o, c, i, j);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn scalar_kernel_scales_input() {
    let x = Tensor4::<f64>::full([1, 1, 3, 3], 1.0);
    let k = Tensor4::full([1, 1, 1, 1], 2.0);
    let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
    assert_eq!(y.shape(), [1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn box_kernel_center_sums_neighbourhood() {
    let x = Tensor4::<f64>::from_fn([1, 1, 4, 4], |[_, _, h, w]| (h * 4 + w) as f64 + 1.0);
    let k = Tensor4::full([1, 1, 3, 3], 1.0);
    let y = conv2d(&x, &k, &[0.0], 1, 1).unwrap();
    let mut expect = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            expect += x.at(0, 0, i, j);
        }
    }
    assert_eq!(y.at(0, 0, 1, 1), expect);
    assert_eq!(y.max_abs_diff(&oracle(&x, &k, &[0.0], 1, 1)), 0.0);
}

#[test]
fn output_shape_arithmetic() {
    let mut rng = InitRng::seed_from_u64(0);
    let conv = Conv2d::<f32>::new(&mut rng, 64, 128, 3, 1, 1);
    assert_eq!(
        conv.output_shape([1, 64, 80, 80]).unwrap(),
        [1, 128, 80, 80]
    );
    let conv = Conv2d::<f32>::new(&mut rng, 3, 8, 7, 2, 3);
    assert_eq!(conv.output_shape([1, 3, 64, 64]).unwrap(), [1, 8, 32, 32]);
}

#[test]
fn matches_oracle_for_strides_and_padding() {
    let mut rng = InitRng::seed_from_u64(3);
    for &(stride, pad, k) in &[
        (1, 0, 3),
        (2, 1, 3),
        (2, 3, 7),
        (1, 0, 1),
        (2, 0, 1),
        (4, 0, 4),
    ] {
        let x = normal_tensor(&mut rng, [2, 3, 9, 8]);
        let kern = normal_tensor(&mut rng, [4, 3, k, k]);
        let bias = [0.1, -0.2, 0.3, 0.0];
        let y = conv2d(&x, &kern, &bias, stride, pad).unwrap();
        let o = oracle(&x, &kern, &bias, stride, pad);
        assert_eq!(y.shape(), o.shape());
        assert!(
            y.max_abs_diff(&o) < 1e-12,
            "stride {stride} pad {pad} k {k}"
        );
    }
}

#[test]
fn identity_pointwise_kernel_is_identity() {
    let mut rng = InitRng::seed_from_u64(5);
    let x = normal_tensor(&mut rng, [2, 3, 5, 5]);
    let k = Tensor4::from_fn([3, 3, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
    let y = conv2d(&x, &k, &[0.0; 3], 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn channel_mismatch_names_both_shapes() {
    let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
    let k = Tensor4::zeros([1, 3, 3, 3]);
    let err = conv2d(&x, &k, &[0.0], 1, 1).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"),
        "{msg}"
    );
}

#[test]
fn backward_matches_adjoint_identity() {
    // <conv(x), g> == <x, conv^T(g)> for the bias-free map.
    let mut rng = InitRng::seed_from_u64(9);
    let x = normal_tensor(&mut rng, [2, 2, 7, 6]);
    let k = normal_tensor(&mut rng, [3, 2, 3, 3]);
    let y = conv2d(&x, &k, &[0.0; 3], 2, 1).unwrap();
    let g = normal_tensor(&mut rng, y.shape());
    let grads = conv2d_backward(&x, &k, &g, 2, 1).unwrap();
    let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x
        .data()
        .iter()
        .zip(grads.input.data())
        .map(|(a, b)| a * b)
        .sum();
    assert!((lhs - rhs).abs() < 1e-10);
    let rhs_k: f64 = k.data().iter().zip(&grads.kernel).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs_k).abs() < 1e-10);
}

fn normal_tensor(rng: &mut InitRng, shape: Shape4) -> Tensor4<f64> {
    let mut t = dekan_core::nn::normal_param(rng, shape, 1.0);
    t.zero_grad();
    t
}
