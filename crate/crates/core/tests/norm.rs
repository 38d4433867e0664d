use dekan_core::nn::*;
use dekan_core::*;

fn ramp(shape: [usize; 4]) -> Tensor4<f64> {
    let mut i = 0.0;
    Tensor4::from_fn(shape, |_| {
        i += 1.0;
        (i * 0.37f64).sin() * 3.0 + 1.0
    })
}

#[test]
fn training_output_is_standardized() {
    let mut bn = BatchNorm2d::<f64>::new(3);
    let x = ramp([2, 3, 4, 5]);
    let y = bn.forward(&x, Mode::Train).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..2).flat_map(|b| y.plane(b, c).to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn standardized_input_passes_through() {
    let mut bn = BatchNorm2d::<f64>::new(1);
    bn.epsilon = 1e-12;
    let x = Tensor4::from_vec([1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
    let y = bn.forward(&x, Mode::Train).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-9);
}

#[test]
fn eval_uses_running_statistics() {
    let x = Tensor4::from_vec([2, 1, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
    // Oracle: unbiased variance of 1..8 around 4.5.
    let var = (1..=8).map(|v| (v as f64 - 4.5).powi(2)).sum::<f64>() / 7.0;
    let mut bn = BatchNorm2d::<f64>::new(1);
    bn.running_mean.data_mut()[0] = 4.5;
    bn.running_var.data_mut()[0] = var;
    let y = bn.forward(&x, Mode::Eval).unwrap();
    for (i, v) in y.data().iter().enumerate() {
        let expect = ((i + 1) as f64 - 4.5) / (var + 1e-5).sqrt();
        assert!((v - expect).abs() < 1e-12);
    }
    assert_eq!(y, bn.apply_eval(&x).unwrap());
}

#[test]
fn running_statistics_follow_momentum() {
    let mut bn = BatchNorm2d::<f64>::new(1);
    let x = Tensor4::from_vec([2, 1, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
    bn.forward(&x, Mode::Train).unwrap();
    assert!((bn.running_mean.data()[0] - 0.45).abs() < 1e-12);
    assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 6.0)).abs() < 1e-12);
    assert!(bn.running_var.data()[0] >= 0.0);
}

#[test]
fn single_value_batch_is_degenerate() {
    let mut bn = BatchNorm2d::<f32>::new(2);
    let err = bn
        .forward(&Tensor4::zeros([1, 2, 1, 1]), Mode::Train)
        .unwrap_err();
    assert!(matches!(err, Error::DegenerateStatistics { .. }));
    assert!(bn
        .forward(&Tensor4::zeros([1, 2, 1, 1]), Mode::Eval)
        .is_ok());
}

#[test]
fn channel_mismatch_is_rejected() {
    let mut bn = BatchNorm2d::<f32>::new(2);
    assert!(matches!(
        bn.forward(&Tensor4::zeros([1, 3, 2, 2]), Mode::Train),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn layer_norm_rows_are_standardized() {
    let ln = LayerNorm::<f64>::new(6);
    let y = ln.apply(&ramp([2, 1, 3, 6])).unwrap();
    for row in y.data().chunks(6) {
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn constant_row_maps_to_shift() {
    let mut ln = LayerNorm::<f64>::new(4);
    ln.shift.data_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.0]);
    let y = ln.apply(&Tensor4::full([1, 1, 1, 4], 1.0)).unwrap();
    assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.0]);
}

#[test]
fn layer_norm_matches_scalar_oracle() {
    let ln = LayerNorm::<f64>::new(4);
    let y = ln
        .apply(&Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let std = (1.25f64 + 1e-5).sqrt();
    for (k, v) in y.data().iter().enumerate() {
        assert!((v - ((k + 1) as f64 - 2.5) / std).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_needs_two_features() {
    let ln = LayerNorm::<f64>::new(1);
    assert!(matches!(
        ln.apply(&Tensor4::zeros([1, 1, 2, 1])),
        Err(Error::DegenerateStatistics { .. })
    ));
}
