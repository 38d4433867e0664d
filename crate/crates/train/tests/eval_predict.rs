use dekan_core::{Dekan, ModelConfig};
use dekan_data::SamplePair;
use dekan_train::eval::{overlay, OVERLAY_ALPHA};
use dekan_train::{evaluate, predict_file, TrainError};
use image::{GrayImage, Luma, Rgb, RgbImage};

const EPS: f64 = 1e-5;

fn tiny() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        width_multiplier: 1.0 / 16.0,
        decoder_channels: vec![8, 8, 4, 4, 4],
        ..ModelConfig::desk()
    }
}

/// Model whose head ignores its input and emits `logit` everywhere.
fn constant_model(logit: f32) -> Dekan<f32> {
    let mut m: Dekan<f32> = Dekan::new(tiny()).unwrap();
    m.head.conv.kernel.data_mut().fill(0.0);
    m.head.conv.bias.data_mut().fill(logit);
    m
}

fn image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([(x * 3) as u8, (y * 5) as u8, ((x + y) % 256) as u8])
    })
}

/// Sample A has a 16x16 foreground square, sample B an empty mask.
fn two_samples() -> Vec<SamplePair> {
    let a = GrayImage::from_fn(64, 64, |x, y| {
        Luma([if x < 16 && y < 16 { 255 } else { 0 }])
    });
    let b = GrayImage::new(64, 64);
    vec![
        SamplePair::new("a", image(64, 64), a).unwrap(),
        SamplePair::new("b", image(64, 64), b).unwrap(),
    ]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn all_foreground_stub_matches_hand_counts() {
    let report = evaluate(&mut constant_model(2.0), &two_samples(), 0.5).unwrap();
    // Global: TP 256, FP 7936, FN 0, TN 0 over 8192 pixels.
    let m = report.metrics;
    assert!(close(m.miou, (1.0 / 32.0 + 0.0) / 2.0), "{m:?}");
    assert!(close(m.dice, (512.0 + EPS) / (512.0 + 7936.0 + EPS)));
    assert!(close(m.accuracy, 1.0 / 32.0));
    assert!(close(m.recall, 1.0));

    let (a, b) = (&report.samples[0], &report.samples[1]);
    assert_eq!((a.id.as_str(), b.id.as_str()), ("a", "b"));
    assert!(close(a.metrics.miou, 1.0 / 32.0));
    assert!(close(
        a.metrics.dice,
        (512.0 + EPS) / (512.0 + 3840.0 + EPS)
    ));
    assert!(close(b.metrics.miou, 0.0));
    assert!(close(b.metrics.recall, 0.0));
    assert!(close(b.metrics.dice, EPS / (4096.0 + EPS)));
}

#[test]
fn all_background_stub_on_empty_mask_scores_perfectly() {
    let report = evaluate(&mut constant_model(-2.0), &two_samples()[1..], 0.5).unwrap();
    let m = report.metrics;
    assert_eq!((m.miou, m.dice, m.accuracy, m.recall), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn report_formats() {
    let report = evaluate(&mut constant_model(2.0), &two_samples(), 0.5).unwrap();
    let csv = report.csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,miou,dice,accuracy,recall");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("a,0.031250,"));
    let text = report.text();
    assert!(
        text.contains("samples = 2") && text.contains("recall = 1.000000"),
        "{text}"
    );
}

#[test]
fn empty_dataset_is_an_error() {
    assert!(matches!(
        evaluate(&mut constant_model(1.0), &[], 0.5),
        Err(TrainError::EmptyDataset)
    ));
}

#[test]
fn size_mismatch_names_both_sizes() {
    let pair = SamplePair::new("odd", image(96, 64), GrayImage::new(96, 64)).unwrap();
    let err = evaluate(&mut constant_model(1.0), &[pair], 0.5).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("96x64") && msg.contains("64x64"), "{msg}");
}

#[test]
fn predict_writes_binary_mask_at_input_size_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("scan.png");
    image(50, 40).save(&img_path).unwrap();
    let mut model: Dekan<f32> = Dekan::new(tiny()).unwrap();

    let (mask_path, overlay_path) =
        predict_file(&mut model, &img_path, &dir.path().join("o1"), 0.5).unwrap();
    let mask = image::open(&mask_path).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (50, 40));
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    assert_eq!(
        image::open(&overlay_path).unwrap().to_rgb8().dimensions(),
        (50, 40)
    );

    let (again, _) = predict_file(&mut model, &img_path, &dir.path().join("o2"), 0.5).unwrap();
    assert_eq!(
        std::fs::read(&mask_path).unwrap(),
        std::fs::read(again).unwrap()
    );
}

#[test]
fn overlay_blends_only_foreground() {
    let img = image(4, 1);
    let mask = GrayImage::from_raw(4, 1, vec![0, 255, 0, 255]).unwrap();
    let out = overlay(&img, &mask);
    for x in 0..4 {
        let p = img.get_pixel(x, 0).0;
        let expect = if x % 2 == 0 {
            p
        } else {
            let red = [255.0, 0.0, 0.0];
            [0, 1, 2].map(|i| {
                ((1.0 - OVERLAY_ALPHA) * p[i] as f64 + OVERLAY_ALPHA * red[i]).round() as u8
            })
        };
        assert_eq!(out.get_pixel(x, 0).0, expect);
    }
}

#[test]
fn unreadable_image_is_an_io_class_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = predict_file(
        &mut constant_model(1.0),
        &dir.path().join("missing.png"),
        dir.path(),
        0.5,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
