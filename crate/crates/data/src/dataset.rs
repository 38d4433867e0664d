use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};

/// Mask pixels at or above this grey level are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// One image with its binary mask (0 background, 255 foreground).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: RgbImage,
    pub mask: GrayImage,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: RgbImage, mask: GrayImage) -> Result<Self> {
        let id = id.into();
        if image.dimensions() != mask.dimensions() {
            return Err(DataError::DimensionMismatch {
                id,
                image: image.dimensions(),
                mask: mask.dimensions(),
            });
        }
        Ok(Self { id, image, mask })
    }

    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.mask.pixels().filter(|p| p.0[0] != 0).count();
        fg as f64 / self.mask.len().max(1) as f64
    }
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn binarize(mut mask: GrayImage) -> GrayImage {
    for p in mask.pixels_mut() {
        p.0[0] = if p.0[0] >= MASK_THRESHOLD { 255 } else { 0 };
    }
    mask
}

/// Loads `root/images/<id>.png` with `root/masks/<id>.png`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<SamplePair>> {
    let images = png_stems(&root.join("images"))?;
    let masks = png_stems(&root.join("masks"))?;
    let images_without_masks: Vec<String> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .cloned()
        .collect();
    let masks_without_images: Vec<String> = masks
        .keys()
        .filter(|k| !images.contains_key(*k))
        .cloned()
        .collect();
    if !images_without_masks.is_empty() || !masks_without_images.is_empty() {
        return Err(DataError::Orphans {
            images_without_masks,
            masks_without_images,
        });
    }
    images
        .iter()
        .map(|(id, path)| {
            let image = load_image(path)?.to_rgb8();
            let mask = binarize(load_image(&masks[id])?.to_luma8());
            SamplePair::new(id.clone(), image, mask)
        })
        .collect()
}

/// Writes pairs in the layout read by [`load_dataset`].
pub fn write_dataset(root: &Path, pairs: &[SamplePair]) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    for p in pairs {
        let ip = root.join("images").join(format!("{}.png", p.id));
        p.image
            .save_with_format(&ip, ImageFormat::Png)
            .map_err(|e| DataError::io(&ip, e))?;
        let mp = root.join("masks").join(format!("{}.png", p.id));
        p.mask
            .save_with_format(&mp, ImageFormat::Png)
            .map_err(|e| DataError::io(&mp, e))?;
    }
    Ok(())
}

/// Seeded shuffle followed by a prefix split; both halves are non-empty.
pub fn split_dataset(
    pairs: Vec<SamplePair>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    if pairs.len() < 2 {
        return Err(DataError::Split(format!(
            "need at least 2 samples, got {}",
            pairs.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "train fraction {train_fraction} is not in (0, 1)"
        )));
    }
    let mut pairs = pairs;
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = pairs.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let val = pairs.split_off(n_train);
    Ok((pairs, val))
}
