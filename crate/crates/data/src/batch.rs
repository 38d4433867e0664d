use dekan_core::{Scalar, Tensor4};
use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use rand::Rng;

use crate::augment::{augment, AugmentSpec};
use crate::dataset::SamplePair;

/// Per-channel normalisation constants applied after scaling to `[0, 1]`.
pub const NORM_MEAN: f64 = 0.5;
pub const NORM_STD: f64 = 0.5;

/// Bilinear resize; a no-op at the same size.
pub fn resize_image(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    if image.dimensions() == (width, height) {
        image.clone()
    } else {
        imageops::resize(image, width, height, FilterType::Triangle)
    }
}

/// Nearest-neighbour resize, so binary masks stay binary.
pub fn resize_mask(mask: &GrayImage, width: u32, height: u32) -> GrayImage {
    if mask.dimensions() == (width, height) {
        mask.clone()
    } else {
        imageops::resize(mask, width, height, FilterType::Nearest)
    }
}

/// `(1, 3, H, W)` tensor with values `(v / 255 - 0.5) / 0.5`.
pub fn image_to_tensor<T: Scalar>(image: &RgbImage) -> Tensor4<T> {
    let (w, h) = image.dimensions();
    Tensor4::from_fn([1, 3, h as usize, w as usize], |[_, c, y, x]| {
        let v = image.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0;
        T::lit((v - NORM_MEAN) / NORM_STD)
    })
}

/// `(1, 1, H, W)` tensor of 0/1 labels.
pub fn mask_to_tensor<T: Scalar>(mask: &GrayImage) -> Tensor4<T> {
    let (w, h) = mask.dimensions();
    Tensor4::from_fn([1, 1, h as usize, w as usize], |[_, _, y, x]| {
        if mask.get_pixel(x as u32, y as u32).0[0] != 0 {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Inputs for one optimisation step.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// Augmented images for the residual encoder.
    pub x_aug: Tensor4<T>,
    /// Unaltered images for the plain CNN encoder.
    pub x_orig: Tensor4<T>,
    pub target: Tensor4<T>,
}

/// Resizes every pair to `(height, width)`, augments a copy of each image, and stacks the results.
pub fn make_training_batch<T: Scalar>(
    pairs: &[&SamplePair],
    spec: &AugmentSpec,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> dekan_core::Result<Batch<T>> {
    let (mut aug, mut orig, mut target) = (Vec::new(), Vec::new(), Vec::new());
    for p in pairs {
        let image = resize_image(&p.image, width as u32, height as u32);
        aug.push(image_to_tensor(&augment(&image, spec, rng)));
        orig.push(image_to_tensor(&image));
        target.push(mask_to_tensor(&resize_mask(
            &p.mask,
            width as u32,
            height as u32,
        )));
    }
    Ok(Batch {
        x_aug: Tensor4::stack(&aug)?,
        x_orig: Tensor4::stack(&orig)?,
        target: Tensor4::stack(&target)?,
    })
}
