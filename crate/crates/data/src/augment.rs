use image::RgbImage;
use rand::Rng;

use crate::error::{DataError, Result};

/// Photometric augmentation applied to the residual-encoder input.
///
/// Limits are symmetric: a value `l` draws uniformly from `[-l, l]`.
/// Hue is in degrees, saturation and value shifts on the 8-bit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub brightness_limit: f64,
    pub contrast_limit: f64,
    /// Inclusive range of odd Gaussian kernel sizes; `(1, 1)` disables blurring.
    pub blur_kernel_range: (usize, usize),
    pub hue_shift_limit: f64,
    pub sat_shift_limit: f64,
    pub val_shift_limit: f64,
    /// Chance each transform fires.
    pub probability: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            brightness_limit: 0.2,
            contrast_limit: 0.2,
            blur_kernel_range: (3, 7),
            hue_shift_limit: 10.0,
            sat_shift_limit: 20.0,
            val_shift_limit: 20.0,
            probability: 1.0,
        }
    }
}

impl AugmentSpec {
    /// Leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            brightness_limit: 0.0,
            contrast_limit: 0.0,
            blur_kernel_range: (1, 1),
            hue_shift_limit: 0.0,
            sat_shift_limit: 0.0,
            val_shift_limit: 0.0,
            probability: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.blur_kernel_range;
        if lo % 2 == 0 || hi % 2 == 0 || lo > hi {
            return Err(DataError::Config(format!(
                "blur kernel range ({lo}, {hi}) must hold odd sizes in increasing order"
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(DataError::Config(format!(
                "probability {} is not in [0, 1]",
                self.probability
            )));
        }
        let limits = [
            self.brightness_limit,
            self.contrast_limit,
            self.hue_shift_limit,
            self.sat_shift_limit,
            self.val_shift_limit,
        ];
        if limits.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(DataError::Config(
                "augmentation limits must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn symmetric(rng: &mut impl Rng, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

/// Normalised 1-D Gaussian taps; sigma follows the usual `0.3 * ((k - 1) / 2 - 1) + 0.8` rule.
pub fn gaussian_kernel(size: usize) -> Vec<f64> {
    let sigma = 0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

pub fn reflect(i: isize, n: usize) -> usize {
    // Reflect without repeating the edge pixel: -1 -> 1, n -> n - 2.
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable blur of one `w x h` plane in place, reflect-101 borders.
pub fn blur(plane: &mut [f64], w: usize, h: usize, taps: &[f64]) {
    let half = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + reflect(x as isize + k as isize - half, w)])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(y as isize + k as isize - half, h) * w + x])
                .sum();
        }
    }
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Brightness/contrast jitter, Gaussian blur, then an HSV shift; geometry is never touched.
pub fn augment(image: &RgbImage, spec: &AugmentSpec, rng: &mut impl Rng) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut planes: [Vec<f64>; 3] =
        std::array::from_fn(|c| image.pixels().map(|p| p.0[c] as f64).collect());
    let fires = |rng: &mut dyn rand::RngCore| {
        spec.probability >= 1.0 || rng.random::<f64>() < spec.probability
    };

    if fires(rng) {
        let alpha = 1.0 + symmetric(rng, spec.contrast_limit);
        let beta = 255.0 * symmetric(rng, spec.brightness_limit);
        if alpha != 1.0 || beta != 0.0 {
            for v in planes.iter_mut().flatten() {
                *v = (*v * alpha + beta).clamp(0.0, 255.0);
            }
        }
    }

    if fires(rng) {
        let (lo, hi) = spec.blur_kernel_range;
        let k = lo + 2 * rng.random_range(0..=(hi - lo) / 2);
        if k > 1 {
            let taps = gaussian_kernel(k);
            for p in &mut planes {
                blur(p, w, h, &taps);
            }
        }
    }

    if fires(rng) {
        let dh = symmetric(rng, spec.hue_shift_limit);
        let ds = symmetric(rng, spec.sat_shift_limit) / 255.0;
        let dv = symmetric(rng, spec.val_shift_limit) / 255.0;
        if dh != 0.0 || ds != 0.0 || dv != 0.0 {
            for i in 0..w * h {
                let [hh, s, v] = rgb_to_hsv([
                    planes[0][i] / 255.0,
                    planes[1][i] / 255.0,
                    planes[2][i] / 255.0,
                ]);
                let rgb = hsv_to_rgb([hh + dh, (s + ds).clamp(0.0, 1.0), (v + dv).clamp(0.0, 1.0)]);
                for c in 0..3 {
                    planes[c][i] = rgb[c] * 255.0;
                }
            }
        }
    }

    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| {
            planes[c][i].round().clamp(0.0, 255.0) as u8
        }))
    })
}
