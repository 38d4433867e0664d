//! Evaluation reports and single-image prediction.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dekan_core::{
    combined_loss, compute_metrics, confusion_counts, threshold_logits, ConfusionCounts, Dekan,
    Metrics, Mode, Tensor4,
};
use dekan_data::{
    image_to_tensor, load_image, mask_to_tensor, resize_image, resize_mask, SamplePair,
};
use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Result, TrainError};

/// Overlay colour and opacity for predicted foreground.
pub const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Samples pushed through the network per forward call during scoring.
const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleReport>,
    /// Counts accumulated over every pixel of every sample.
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Mean of the per-sample combined losses.
    pub mean_loss: f64,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "samples = {}", self.samples.len());
        let _ = writeln!(s, "loss = {:.6}", self.mean_loss);
        let _ = writeln!(s, "miou = {:.6}", m.miou);
        let _ = writeln!(s, "dice = {:.6}", m.dice);
        let _ = writeln!(s, "accuracy = {:.6}", m.accuracy);
        let _ = writeln!(s, "recall = {:.6}", m.recall);
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("id,miou,dice,accuracy,recall\n");
        for r in &self.samples {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.id, m.miou, m.dice, m.accuracy, m.recall
            );
        }
        s
    }
}

/// Runs eval-mode inference with `(x, x)` inputs, resizing samples to the model size.
///
/// Shared by validation during training and by [`evaluate`].
pub fn score_samples(
    model: &mut Dekan<f32>,
    pairs: &[&SamplePair],
    threshold: f64,
) -> Result<EvalReport> {
    let (h, w) = (model.config().image_height, model.config().image_width);
    let classes = 2;
    let mut counts = ConfusionCounts::new(classes);
    let mut samples = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let xs: Vec<Tensor4<f32>> = chunk
            .iter()
            .map(|p| image_to_tensor(&resize_image(&p.image, w as u32, h as u32)))
            .collect();
        let x = Tensor4::stack(&xs)?;
        let logits = model.forward(&x, &x, Mode::Eval)?;
        logits.ensure_finite("evaluation logits")?;
        let out_shape = logits.shape();
        for (b, p) in chunk.iter().enumerate() {
            let target = mask_to_tensor::<f32>(&resize_mask(&p.mask, w as u32, h as u32));
            let item = Tensor4::from_vec(
                [1, out_shape[1], out_shape[2], out_shape[3]],
                logits.item(b).to_vec(),
            )?;
            let loss = combined_loss(&item, &target)?.total;
            let pred = threshold_logits(&item, threshold);
            let truth: Vec<u8> = target.data().iter().map(|&v| u8::from(v > 0.5)).collect();
            let c = confusion_counts(&pred, &truth, classes)?;
            counts.merge(&c)?;
            samples.push(SampleReport {
                id: p.id.clone(),
                metrics: compute_metrics(&c),
                counts: c,
                loss,
            });
        }
    }
    let mean_loss = samples.iter().map(|s| s.loss).sum::<f64>() / samples.len().max(1) as f64;
    Ok(EvalReport {
        samples,
        metrics: compute_metrics(&counts),
        counts,
        mean_loss,
    })
}

/// Evaluates `model` on a dataset whose images must already match the model input size.
pub fn evaluate(
    model: &mut Dekan<f32>,
    pairs: &[SamplePair],
    threshold: f64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (h, w) = (model.config().image_height, model.config().image_width);
    for p in pairs {
        let (pw, ph) = p.image.dimensions();
        if (ph as usize, pw as usize) != (h, w) {
            return Err(TrainError::Config(format!(
                "sample `{}` is {pw}x{ph} but the model expects {w}x{h}",
                p.id
            )));
        }
    }
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    score_samples(model, &refs, threshold)
}

/// Mask (0/255) at the image's own resolution.
pub fn predict_mask(model: &mut Dekan<f32>, image: &RgbImage, threshold: f64) -> Result<GrayImage> {
    let (h, w) = (model.config().image_height, model.config().image_width);
    let x = image_to_tensor::<f32>(&resize_image(image, w as u32, h as u32));
    let logits = model.forward(&x, &x, Mode::Eval)?;
    logits.ensure_finite("prediction logits")?;
    let bits = threshold_logits(&logits, threshold);
    let small = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if bits[y as usize * w + x as usize] != 0 {
            255
        } else {
            0
        }])
    });
    Ok(resize_mask(&small, image.width(), image.height()))
}

pub fn overlay(image: &RgbImage, mask: &GrayImage) -> RgbImage {
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let p = image.get_pixel(x, y).0;
        if mask.get_pixel(x, y).0[0] == 0 {
            return Rgb(p);
        }
        let blend = |i: usize| {
            ((1.0 - OVERLAY_ALPHA) * p[i] as f64 + OVERLAY_ALPHA * OVERLAY_COLOR[i] as f64).round()
                as u8
        };
        Rgb([blend(0), blend(1), blend(2)])
    })
}

/// Writes `<stem>_mask.png` and `<stem>_overlay.png` into `out_dir`, returning both paths.
pub fn predict_file(
    model: &mut Dekan<f32>,
    image_path: &Path,
    out_dir: &Path,
    threshold: f64,
) -> Result<(PathBuf, PathBuf)> {
    let image = load_image(image_path)?.to_rgb8();
    let mask = predict_mask(model, &image, threshold)?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let mask_path = out_dir.join(format!("{stem}_mask.png"));
    let overlay_path = out_dir.join(format!("{stem}_overlay.png"));
    mask.save(&mask_path)
        .map_err(|e| TrainError::io(&mask_path, e))?;
    overlay(&image, &mask)
        .save(&overlay_path)
        .map_err(|e| TrainError::io(&overlay_path, e))?;
    Ok((mask_path, overlay_path))
}
