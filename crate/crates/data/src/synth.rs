use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::SamplePair;
use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    /// Semi-axes along the rotated x and y directions.
    a: f64,
    b: f64,
    angle: f64,
    brightness: f64,
}

impl Ellipse {
    /// Squared normalised radius; inside when `<= 1`.
    fn radius2(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

/// One jaw: a row of overlapping ellipses along a parabola `y = base + bend * t^2`, `t` in [-1, 1].
fn jaw(rng: &mut ChaCha8Rng, size: f64, base: f64, bend: f64) -> Vec<Ellipse> {
    let count = rng.random_range(6..=9);
    let span = size * rng.random_range(0.62..0.74);
    let spacing = span / count as f64;
    let x0 = size * 0.5 - span * 0.5 + spacing * 0.5;
    (0..count)
        .map(|i| {
            let cx = x0 + spacing * i as f64 + rng.random_range(-0.08..0.08) * spacing;
            let t = (cx - size * 0.5) / (span * 0.5);
            let cy = base + bend * t * t;
            Ellipse {
                cx,
                cy,
                a: spacing * rng.random_range(0.52..0.62),
                b: size * rng.random_range(0.09..0.13),
                // Teeth lean halfway toward the normal of the arch.
                angle: (2.0 * bend * t / (span * 0.5)).atan() * 0.5,
                brightness: rng.random_range(175.0..225.0),
            }
        })
        .collect()
}

fn sample(index: usize, size: usize, seed: u64) -> SamplePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let s = size as f64;
    let (upper, upper_bend) = (
        s * rng.random_range(0.30..0.36),
        s * rng.random_range(0.06..0.10),
    );
    let (lower, lower_bend) = (
        s * rng.random_range(0.64..0.70),
        -s * rng.random_range(0.06..0.10),
    );
    let mut teeth = jaw(&mut rng, s, upper, upper_bend);
    teeth.extend(jaw(&mut rng, s, lower, lower_bend));

    // Low-frequency texture for the background.
    let (fx, fy, phase) = (
        rng.random_range(1.0..3.0),
        rng.random_range(1.0..3.0),
        rng.random_range(0.0..6.3),
    );
    let background = rng.random_range(35.0..65.0);
    let noise = Normal::new(0.0, 6.0).expect("valid std");

    let mut image = RgbImage::new(size as u32, size as u32);
    let mut mask = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (px / s, py / s);
            let mut value =
                background + 12.0 * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
            let mut inside = false;
            for t in &teeth {
                let r2 = t.radius2(px, py);
                if r2 <= 1.0 {
                    inside = true;
                    // Brighter crown, darker toward the rim.
                    value = value.max(t.brightness - 35.0 * r2);
                }
            }
            value += noise.sample(&mut rng);
            let g = value.round().clamp(0.0, 255.0) as u8;
            image.put_pixel(x as u32, y as u32, Rgb([g, g, g]));
            mask.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
        }
    }
    SamplePair {
        id: format!("synth_{index:04}"),
        image,
        mask,
    }
}

/// Synthetic panoramic-like images: two arches of overlapping bright ellipses on a
/// textured dark background. Sample `i` depends only on `(seed, i)`.
pub fn synth_generate(count: usize, image_size: usize, seed: u64) -> Result<Vec<SamplePair>> {
    if image_size == 0 || image_size % 32 != 0 {
        return Err(DataError::Config(format!(
            "synthetic image size {image_size} must be a positive multiple of 32"
        )));
    }
    Ok((0..count).map(|i| sample(i, image_size, seed)).collect())
}
