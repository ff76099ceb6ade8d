//! Seeded training-time augmentation.
//!
//! Applied in order: horizontal flip, vertical flip, affine (rotation,
//! translation, scale about the center, bilinear sampling, zero fill),
//! brightness/contrast jitter, 3×3 Gaussian blur. Every random draw is
//! taken regardless of whether its transform fires, so the stream for one
//! stage never depends on the configuration of another.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::SpectroImage;
use super::CHANNELS;
use crate::{seed, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub rotate_deg: f64,
    pub translate_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub blur_prob: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.3,
            rotate_deg: 5.0,
            translate_frac: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            brightness: 0.2,
            contrast: 0.2,
            blur_prob: 1.0,
            blur_sigma_min: 0.1,
            blur_sigma_max: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotate_deg: 0.0,
            translate_frac: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            brightness: 0.0,
            contrast: 0.0,
            blur_prob: 0.0,
            blur_sigma_min: 0.1,
            blur_sigma_max: 0.5,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let probs = [self.hflip_prob, self.vflip_prob, self.blur_prob];
        let ok = probs.iter().all(|p| (0.0..=1.0).contains(p))
            && self.rotate_deg >= 0.0
            && (0.0..0.5).contains(&self.translate_frac)
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && (0.0..1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast)
            && self.blur_sigma_min > 0.0
            && self.blur_sigma_min <= self.blur_sigma_max;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::validation("augmentation parameters out of range"))
        }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

pub fn hflip<T: Real>(img: &SpectroImage<T>) -> SpectroImage<T> {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..CHANNELS {
                out.pixels[(y * img.width + x) * CHANNELS + c] = img.at(y, img.width - 1 - x, c);
            }
        }
    }
    out
}

fn vflip<T: Real>(img: &SpectroImage<T>) -> SpectroImage<T> {
    let mut out = img.clone();
    let row = img.width * CHANNELS;
    for y in 0..img.height {
        let src = (img.height - 1 - y) * row;
        out.pixels[y * row..(y + 1) * row].copy_from_slice(&img.pixels[src..src + row]);
    }
    out
}

fn sample_bilinear<T: Real>(img: &SpectroImage<T>, sy: f64, sx: f64, c: usize) -> T {
    let fetch = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= img.height as isize || x >= img.width as isize {
            T::zero()
        } else {
            img.at(y as usize, x as usize, c)
        }
    };
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (T::lit(sy - y0), T::lit(sx - x0));
    let (y0, x0) = (y0 as isize, x0 as isize);
    let top = fetch(y0, x0) + (fetch(y0, x0 + 1) - fetch(y0, x0)) * fx;
    let bottom = fetch(y0 + 1, x0) + (fetch(y0 + 1, x0 + 1) - fetch(y0 + 1, x0)) * fx;
    top + (bottom - top) * fy
}

fn affine<T: Real>(img: &SpectroImage<T>, angle_deg: f64, tx: f64, ty: f64, scale: f64) -> SpectroImage<T> {
    let (cy, cx) = ((img.height as f64 - 1.0) / 2.0, (img.width as f64 - 1.0) / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            // Inverse map: undo translation, then scale, then rotation.
            let dx = (x as f64 - cx - tx) / scale;
            let dy = (y as f64 - cy - ty) / scale;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            for c in 0..CHANNELS {
                out.pixels[(y * img.width + x) * CHANNELS + c] = sample_bilinear(img, sy, sx, c);
            }
        }
    }
    out
}

fn jitter<T: Real>(img: &mut SpectroImage<T>, brightness: f64, contrast: f64) {
    let b = T::lit(brightness);
    img.pixels.iter_mut().for_each(|p| *p = (*p * b).min(T::one()).max(T::zero()));
    let mean = img.pixels.iter().map(|p| p.as_f64()).sum::<f64>() / img.pixels.len() as f64;
    let (m, c) = (T::lit(mean), T::lit(contrast));
    img.pixels.iter_mut().for_each(|p| *p = ((*p - m) * c + m).min(T::one()).max(T::zero()));
}

fn blur<T: Real>(img: &SpectroImage<T>, sigma: f64) -> SpectroImage<T> {
    let w1 = (-1.0 / (2.0 * sigma * sigma)).exp();
    let k = [w1 / (1.0 + 2.0 * w1), 1.0 / (1.0 + 2.0 * w1), w1 / (1.0 + 2.0 * w1)].map(T::lit);
    // Reflect padding: index -1 -> 1, n -> n-2.
    let reflect = |i: isize, n: usize| -> usize {
        if n == 1 {
            0
        } else if i < 0 {
            1
        } else if i as usize >= n {
            n - 2
        } else {
            i as usize
        }
    };
    let (h, w) = (img.height, img.width);
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let v = (-1..=1)
                    .map(|d: isize| k[(d + 1) as usize] * img.at(y, reflect(x as isize + d, w), c))
                    .sum();
                tmp.pixels[(y * w + x) * CHANNELS + c] = v;
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let v = (-1..=1)
                    .map(|d: isize| k[(d + 1) as usize] * tmp.at(reflect(y as isize + d, h), x, c))
                    .sum();
                out.pixels[(y * w + x) * CHANNELS + c] = v;
            }
        }
    }
    out
}

pub fn augment<T: Real>(img: &SpectroImage<T>, cfg: &AugmentConfig, seed: u64) -> SpectroImage<T> {
    let mut rng = seed::rng(seed);
    let do_hflip = rng.random::<f64>() < cfg.hflip_prob;
    let do_vflip = rng.random::<f64>() < cfg.vflip_prob;
    let angle = uniform(&mut rng, -cfg.rotate_deg, cfg.rotate_deg);
    let tx = uniform(&mut rng, -cfg.translate_frac, cfg.translate_frac) * img.width as f64;
    let ty = uniform(&mut rng, -cfg.translate_frac, cfg.translate_frac) * img.height as f64;
    let scale = uniform(&mut rng, cfg.scale_min, cfg.scale_max);
    let brightness = uniform(&mut rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness).max(0.0);
    let contrast = uniform(&mut rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast).max(0.0);
    let do_blur = rng.random::<f64>() < cfg.blur_prob;
    let sigma = uniform(&mut rng, cfg.blur_sigma_min, cfg.blur_sigma_max);

    let mut out = img.clone();
    if do_hflip {
        out = hflip(&out);
    }
    if do_vflip {
        out = vflip(&out);
    }
    if angle != 0.0 || tx != 0.0 || ty != 0.0 || scale != 1.0 {
        out = affine(&out, angle, tx, ty, scale);
    }
    if brightness != 1.0 || contrast != 1.0 {
        jitter(&mut out, brightness, contrast);
    }
    if do_blur && sigma > 0.0 {
        out = blur(&out, sigma);
    }
    out.pixels.iter_mut().for_each(|p| *p = p.max(T::zero()).min(T::one()));
    out
}
