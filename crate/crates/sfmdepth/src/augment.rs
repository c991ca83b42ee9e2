//! Photometric and noise augmentation. Pixel positions never move.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub brightness: bool,
    pub contrast: bool,
    pub gamma: bool,
    pub hsv: bool,
    pub gaussian_blur: bool,
    pub motion_blur: bool,
    pub jpeg: bool,
    pub noise: bool,
    /// Chance that each enabled transform is applied.
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: true,
            contrast: true,
            gamma: true,
            hsv: true,
            gaussian_blur: true,
            motion_blur: true,
            jpeg: true,
            noise: true,
            probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            brightness: false,
            contrast: false,
            gamma: false,
            hsv: false,
            gaussian_blur: false,
            motion_blur: false,
            jpeg: false,
            noise: false,
            probability: 0.0,
        }
    }
}

/// Applies a seeded random subset of the enabled transforms, in a fixed
/// order, and clips to [0, 1].
pub fn augment(image: &RgbImage, config: &AugmentConfig, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.clone();
    let p = config.probability;
    let pick = |on: bool, rng: &mut ChaCha8Rng| on && rng.random::<f64>() < p;
    if pick(config.brightness, &mut rng) {
        brightness(&mut img, rng.random_range(0.8..1.2));
    }
    if pick(config.contrast, &mut rng) {
        contrast(&mut img, rng.random_range(0.8..1.2));
    }
    if pick(config.gamma, &mut rng) {
        gamma(&mut img, rng.random_range(0.8..1.25));
    }
    if pick(config.hsv, &mut rng) {
        let dh = rng.random_range(-0.05..0.05);
        let ds = rng.random_range(0.9..1.1);
        let dv = rng.random_range(0.9..1.1);
        hsv_shift(&mut img, dh, ds, dv);
    }
    if pick(config.gaussian_blur, &mut rng) {
        img = gaussian_blur(&img, rng.random_range(0.2..1.0));
    }
    if pick(config.motion_blur, &mut rng) {
        let length = 2 * rng.random_range(1..=3) + 1;
        img = motion_blur(&img, length, rng.random_range(0.0..std::f32::consts::PI));
    }
    if pick(config.jpeg, &mut rng) {
        img = jpeg(&img, rng.random_range(40..=95));
    }
    if pick(config.noise, &mut rng) {
        let sigma = rng.random_range(0.0..0.02);
        gaussian_noise(&mut img, sigma, &mut rng);
    }
    clip(&mut img);
    img
}

pub fn clip(img: &mut RgbImage) {
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

pub fn brightness(img: &mut RgbImage, factor: f32) {
    img.data.iter_mut().for_each(|v| *v *= factor);
}

/// Scales deviations from the image mean.
pub fn contrast(img: &mut RgbImage, factor: f32) {
    let mean = (img.data.iter().map(|&v| v as f64).sum::<f64>() / img.data.len() as f64) as f32;
    img.data.iter_mut().for_each(|v| *v = (*v - mean) * factor + mean);
}

pub fn gamma(img: &mut RgbImage, g: f32) {
    img.data.iter_mut().for_each(|v| *v = v.max(0.0).powf(g));
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Rotates hue by `dh` turns and scales saturation and value.
pub fn hsv_shift(img: &mut RgbImage, dh: f32, s_scale: f32, v_scale: f32) {
    for px in img.data.chunks_exact_mut(3) {
        let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
        let rgb = hsv_to_rgb([h + dh, (s * s_scale).clamp(0.0, 1.0), v * v_scale]);
        px.copy_from_slice(&rgb);
    }
}

/// Convolves with normalized `taps` at the given pixel offsets, clamping at
/// the border.
fn filter(img: &RgbImage, taps: &[(isize, isize, f32)]) -> RgbImage {
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = RgbImage::filled(img.height, img.width, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for &(dy, dx, k) in taps {
                let sy = (y + dy).clamp(0, h - 1);
                let sx = (x + dx).clamp(0, w - 1);
                let i = ((sy * w + sx) * 3) as usize;
                for ch in 0..3 {
                    acc[ch] += k * img.data[i + ch];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            out.data[o..o + 3].copy_from_slice(&acc);
        }
    }
    out
}

pub fn gaussian_blur(img: &RgbImage, sigma: f32) -> RgbImage {
    let r = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f32 = weights.iter().sum();
    let horizontal: Vec<_> = (-r..=r).zip(&weights).map(|(i, &k)| (0, i, k / total)).collect();
    let vertical: Vec<_> = (-r..=r).zip(&weights).map(|(i, &k)| (i, 0, k / total)).collect();
    filter(&filter(img, &horizontal), &vertical)
}

/// Averages `length` samples along a line at `angle` radians from the
/// x axis.
pub fn motion_blur(img: &RgbImage, length: usize, angle: f32) -> RgbImage {
    let half = (length / 2) as isize;
    let (s, c) = angle.sin_cos();
    let k = 1.0 / (2 * half + 1) as f32;
    let taps: Vec<_> = (-half..=half)
        .map(|t| ((t as f32 * s).round() as isize, (t as f32 * c).round() as isize, k))
        .collect();
    filter(img, &taps)
}

/// Round trip through an in-memory JPEG at `quality`.
pub fn jpeg(img: &RgbImage, quality: u8) -> RgbImage {
    let bytes = img.to_bytes();
    let mut buf = Vec::new();
    let mut enc = JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality);
    if enc
        .encode(&bytes, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .is_err()
    {
        return img.clone();
    }
    match image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg) {
        Ok(d) => {
            let data = d.to_rgb8().as_raw().iter().map(|&b| b as f32 / 255.0).collect();
            RgbImage::new(img.height, img.width, data)
        }
        Err(_) => img.clone(),
    }
}

pub fn gaussian_noise<R: Rng>(img: &mut RgbImage, sigma: f32, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0f32, sigma).expect("positive sigma");
    img.data.iter_mut().for_each(|v| *v += n.sample(rng));
}
