use dekan_core::*;

fn tiny() -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 64,
        embed_dim: 4,
        width_multiplier: 1.0 / 32.0,
        decoder_channels: vec![4, 3, 2, 2, 2],
        ..ModelConfig::desk()
    }
}

#[test]
fn presets_validate() {
    ModelConfig::full().validate().unwrap();
    ModelConfig::desk().validate().unwrap();
}

#[test]
fn rejects_bad_sizes() {
    let c = ModelConfig {
        image_height: 100,
        image_width: 100,
        ..ModelConfig::desk()
    };
    assert!(matches!(Dekan::<f32>::new(c), Err(Error::Config(_))));
    let c = ModelConfig {
        patch_size: 4,
        ..ModelConfig::desk()
    };
    assert!(Dekan::<f32>::new(c).is_err());
    let c = ModelConfig {
        decoder_channels: vec![32, 64, 16, 8, 8],
        ..ModelConfig::desk()
    };
    let err = Dekan::<f32>::new(c).unwrap_err().to_string();
    assert!(
        err.contains("decoder stage 1") && err.contains("decoder stage 0"),
        "{err}"
    );
}

#[test]
fn same_seed_same_parameters() {
    let a = Dekan::<f32>::new(tiny()).unwrap();
    let b = Dekan::<f32>::new(tiny()).unwrap();
    let mut va = Vec::new();
    a.visit_state("", &mut |n, t, _| va.push((n.to_string(), t.clone())));
    let mut i = 0;
    b.visit_state("", &mut |n, t, _| {
        assert_eq!((n, t), (va[i].0.as_str(), &va[i].1));
        i += 1;
    });
    assert_eq!(i, va.len());
}

#[test]
fn forward_and_backward_shapes() {
    let mut m = Dekan::<f32>::new(tiny()).unwrap();
    let x = Tensor4::from_fn([2, 3, 32, 64], |[b, c, h, w]| {
        ((b + c + h * w) as f32 * 0.01).sin()
    });
    let y = m.forward(&x, &x.map(|v| v * 0.5), Mode::Train).unwrap();
    assert_eq!(y.shape(), [2, 1, 32, 64]);
    let (ga, go) = m.backward(&Tensor4::full(y.shape(), 1e-3)).unwrap();
    assert_eq!(ga.shape(), x.shape());
    assert_eq!(go.shape(), x.shape());
    assert!(ga.is_finite() && go.is_finite());
}

#[test]
fn mismatched_streams_are_input_errors() {
    let mut m = Dekan::<f32>::new(tiny()).unwrap();
    let a = Tensor4::zeros([1, 3, 32, 64]);
    let b = Tensor4::zeros([2, 3, 32, 64]);
    assert!(matches!(
        m.forward(&a, &b, Mode::Eval),
        Err(Error::Input(_))
    ));
}

#[test]
fn threshold_boundary_is_inclusive() {
    let l = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![0.0, -30.0, 1e-3]).unwrap();
    assert_eq!(threshold_logits(&l, 0.5), vec![1, 0, 1]);
}
