use dekan_core::encoders::{fuse_features, CnnEncoder, ResNetEncoder};
use dekan_core::kan::{bspline_basis, map_to_tokens, tokens_to_map, SplineConfig, SplineGrid};
use dekan_core::loss::{bce_loss, dice_coefficient, dice_loss, DICE_EPSILON};
use dekan_core::nn::{adaptive_avg_pool2d, bilinear_upsample2x, Conv2d, InitRng};
use dekan_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn tensor(shape: Shape4, seed: u64) -> Tensor4<f64> {
    let mut rng = InitRng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| rng.random_range(-2.0..2.0))
}

#[test]
fn partition_of_unity_on_ten_thousand_uniform_points() {
    let grid = SplineGrid::<f64>::new(SplineConfig::default()).unwrap();
    let mut rng = InitRng::seed_from_u64(99);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let basis = bspline_basis(&xs, &grid);
    for (x, row) in xs.iter().zip(basis.chunks(grid.num_basis())) {
        assert!(row.iter().all(|&b| b >= 0.0));
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() <= 1e-6, "x {x}: sum {s}");
    }
}

proptest! {
    #[test]
    fn partition_of_unity_for_any_grid(
        lo in -5.0f64..0.0, width in 0.5f64..10.0, intervals in 1usize..12, order in 0usize..5, t in 0.0f64..=1.0
    ) {
        let hi = lo + width;
        let grid = SplineGrid::<f64>::new(SplineConfig { lo, hi, intervals, order }).unwrap();
        let row = bspline_basis(&[lo + t * width], &grid);
        prop_assert!(row.iter().all(|&b| b >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn identity_pointwise_conv(c in 1usize..5, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let mut conv = Conv2d::<f64>::new(&mut InitRng::seed_from_u64(0), c, c, 1, 1, 0);
        conv.kernel = Tensor4::from_fn([c, c, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        conv.bias = Tensor4::zeros([1, 1, 1, c]).reshape(conv.bias.shape()).unwrap();
        let x = tensor([2, c, h, w], seed);
        prop_assert_eq!(conv.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn upsampling_a_constant_keeps_its_mean(v in -100.0f64..100.0, h in 1usize..6, w in 1usize..6) {
        let x = Tensor4::full([1, 2, h, w], v);
        let y = bilinear_upsample2x(&x).unwrap();
        prop_assert_eq!(y.shape(), [1, 2, 2 * h, 2 * w]);
        prop_assert!(y.data().iter().all(|&u| u == v));
    }

    #[test]
    fn global_pool_keeps_the_mean(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let x = tensor([1, 3, h, w], seed);
        let y = adaptive_avg_pool2d(&x, 1, 1).unwrap();
        for c in 0..3 {
            let mean = x.plane(0, c).iter().sum::<f64>() / (h * w) as f64;
            prop_assert!((y.at(0, c, 0, 0) - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn token_round_trip(c in 1usize..6, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let x = tensor([2, c, h, w], seed);
        let t = map_to_tokens(&x);
        prop_assert_eq!(t.shape(), [2, 1, h * w, c]);
        prop_assert_eq!(tokens_to_map(&t, h, w).unwrap(), x);
    }

    #[test]
    fn fusion_is_commutative_at_equal_shapes(seed in any::<u64>()) {
        let a = tensor([1, 3, 4, 4], seed);
        let b = tensor([1, 3, 4, 4], seed.wrapping_add(1));
        prop_assert_eq!(fuse_features(&a, &b).unwrap(), fuse_features(&b, &a).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_shape_contracts(h32 in 1usize..4, w32 in 1usize..4) {
        let mut rng = InitRng::seed_from_u64(1);
        let shape = [1, 3, 32 * h32, 32 * w32];
        let x = Tensor4::<f32>::zeros(shape).map(|_| 0.25);
        let mut cnn = CnnEncoder::<f32>::new(&mut rng, 3, [4, 4, 4, 4]);
        prop_assert_eq!(cnn.forward(&x, Mode::Eval).unwrap().shape(), [1, 4, shape[2], shape[3]]);
        let mut res = ResNetEncoder::<f32>::new(&mut rng, 3, [2, 2, 4, 4]);
        prop_assert_eq!(res.forward(&x, Mode::Eval).unwrap().shape(), [1, 4, h32, w32]);
    }
}

fn small_config(h: usize, w: usize, patch: usize) -> ModelConfig {
    ModelConfig {
        image_height: h,
        image_width: w,
        patch_size: patch,
        embed_dim: 4,
        width_multiplier: 1.0 / 32.0,
        decoder_channels: vec![4, 4, 3, 2, 2],
        ..ModelConfig::desk()
    }
}

#[test]
fn output_resolution_matches_input_for_several_configs() {
    for (h, w, p) in [
        (32, 32, 1),
        (64, 32, 1),
        (64, 64, 2),
        (96, 64, 1),
        (128, 128, 4),
    ] {
        let cfg = small_config(h, w, p);
        let model = Dekan::<f32>::new(cfg).unwrap();
        let x = Tensor4::from_fn([2, 3, h, w], |[b, c, y, x]| {
            ((b + c + y * x) as f32 * 0.01).cos()
        });
        assert_eq!(
            model.logits(&x).unwrap().shape(),
            [2, 1, h, w],
            "{h}x{w} P={p}"
        );
        assert_eq!(model.output_shape([2, 3, h, w]).unwrap(), [2, 1, h, w]);
    }
}

#[test]
fn eval_forward_is_pure() {
    let model = Dekan::<f32>::new(small_config(64, 64, 1)).unwrap();
    let x = Tensor4::from_fn([1, 3, 64, 64], |[_, c, y, x]| {
        ((c * 7 + y * 3 + x) % 13) as f32 / 13.0
    });
    assert_eq!(model.logits(&x).unwrap(), model.logits(&x).unwrap());
    let again = Dekan::<f32>::new(small_config(64, 64, 1)).unwrap();
    assert_eq!(model.parameter_count(), again.parameter_count());
    assert_eq!(model.logits(&x).unwrap(), again.logits(&x).unwrap());
}

/// Per-pixel metric oracle that never forms a confusion matrix.
fn oracle(pred: &[u8], target: &[u8]) -> (f64, f64, f64, f64) {
    let mut iou_sum = 0.0;
    for class in 0..2u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (&p, &t) in pred.iter().zip(target) {
            inter += u64::from(p == class && t == class);
            union += u64::from(p == class || t == class);
        }
        iou_sum += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    let correct = pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64;
    let (mut tp, mut pos_pred, mut pos_true) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target) {
        tp += f64::from(p & t);
        pos_pred += f64::from(p);
        pos_true += f64::from(t);
    }
    let dice = (2.0 * tp + DICE_EPSILON) / (pos_pred + pos_true + DICE_EPSILON);
    let recall = if pos_true == 0.0 {
        if pos_pred == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / pos_true
    };
    (iou_sum / 2.0, dice, correct / pred.len() as f64, recall)
}

fn mask_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (
        1usize..=16,
        1usize..=16,
        0.0f64..=1.0,
        0.0f64..=1.0,
        any::<u64>(),
    )
        .prop_map(|(h, w, fp, ft, seed)| {
            let mut rng = InitRng::seed_from_u64(seed);
            let pred = (0..h * w).map(|_| u8::from(rng.random_bool(fp))).collect();
            let target = (0..h * w).map(|_| u8::from(rng.random_bool(ft))).collect();
            (pred, target)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_equal_per_pixel_oracle((pred, target) in mask_pair()) {
        let m = compute_metrics(&confusion_counts(&pred, &target, 2).unwrap());
        let (miou, dice, acc, recall) = oracle(&pred, &target);
        prop_assert!((m.miou - miou).abs() <= 1e-12);
        prop_assert!((m.dice - dice).abs() <= 1e-12);
        prop_assert!((m.accuracy - acc).abs() <= 1e-12);
        prop_assert!((m.recall - recall).abs() <= 1e-12);
        for v in [m.miou, m.dice, m.accuracy, m.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn hard_mask_dice_is_the_loss_dual((pred, target) in mask_pair()) {
        let n = pred.len();
        let probs: Vec<f64> = pred.iter().map(|&p| f64::from(p)).collect();
        let truth: Vec<f64> = target.iter().map(|&t| f64::from(t)).collect();
        let metric = compute_metrics(&confusion_counts(&pred, &target, 2).unwrap()).dice;
        prop_assert!((dice_coefficient(&probs, &truth) - metric).abs() <= 1e-12);

        let logits = Tensor4::from_vec([1, 1, 1, n], probs.iter().map(|&p| if p > 0.5 { 60.0 } else { -60.0 }).collect()).unwrap();
        let t = Tensor4::from_vec([1, 1, 1, n], truth).unwrap();
        prop_assert!((metric + dice_loss(&logits, &t).unwrap() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn combined_loss_identity_and_sign(b in 1usize..4, n in 1usize..20, seed in any::<u64>()) {
        let mut rng = InitRng::seed_from_u64(seed);
        let logits = Tensor4::from_fn([b, 1, 1, n], |_| rng.random_range(-30.0..30.0));
        let target = Tensor4::from_fn([b, 1, 1, n], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        let v = combined_loss(&logits, &target).unwrap();
        prop_assert!((v.total - (0.5 * v.bce + v.dice)).abs() <= 1e-12);
        prop_assert!(v.total >= 0.0 && v.bce >= 0.0 && v.dice >= 0.0);

        // Reversing the batch order leaves the mean unchanged.
        let rev = |t: &Tensor4<f64>| Tensor4::from_fn(t.shape(), |[i, c, y, x]| t.at(b - 1 - i, c, y, x));
        let a = bce_loss(&logits, &target).unwrap();
        let r = bce_loss(&rev(&logits), &rev(&target)).unwrap();
        prop_assert!((a - r).abs() <= 1e-12);
    }
}

#[test]
fn loss_identities() {
    let t = Tensor4::from_fn([2, 1, 3, 3], |[b, _, y, x]| {
        f64::from(((b + y + x) % 2) as u8)
    });
    assert!(
        (bce_loss(&Tensor4::zeros(t.shape()), &t).unwrap() - std::f64::consts::LN_2).abs() <= 1e-9
    );
    let empty = vec![0.0f64; 16];
    assert_eq!(dice_coefficient(&empty, &empty), 1.0);
}
