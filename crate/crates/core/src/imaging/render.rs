use serde::{Deserialize, Serialize};

use super::viridis::VIRIDIS;
use super::CHANNELS;
use crate::matrix::Matrix;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    /// Value replicated into all three channels.
    #[default]
    Grayscale3,
    ViridisLut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMethod {
    /// Bilinear with corner alignment: output corners sample input corners.
    #[default]
    Bilinear,
    Nearest,
}

/// `height × width × 3` image, channel-last, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroImage<T> {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<T>,
    pub device_id: usize,
    pub segment_index: usize,
}

impl<T: Real> SpectroImage<T> {
    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    pub fn channel(&self, c: usize) -> Matrix<T> {
        Matrix {
            rows: self.height,
            cols: self.width,
            data: self.pixels.iter().skip(c).step_by(CHANNELS).copied().collect(),
        }
    }

    /// 8-bit RGB with `round(255·v)` per channel.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn source_coord(i: usize, out_len: usize, in_len: usize) -> f64 {
    if out_len <= 1 || in_len <= 1 {
        0.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

pub fn resize<T: Real>(m: &Matrix<T>, out_h: usize, out_w: usize, method: ResizeMethod) -> Matrix<T> {
    let mut out = Matrix::filled(out_h, out_w, T::zero());
    for y in 0..out_h {
        let sy = source_coord(y, out_h, m.rows);
        for x in 0..out_w {
            let sx = source_coord(x, out_w, m.cols);
            let v = match method {
                ResizeMethod::Nearest => m.get(sy.round() as usize, sx.round() as usize),
                ResizeMethod::Bilinear => {
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(m.rows - 1), (x0 + 1).min(m.cols - 1));
                    let (fy, fx) = (T::lit(sy - y0 as f64), T::lit(sx - x0 as f64));
                    let top = m.get(y0, x0) + (m.get(y0, x1) - m.get(y0, x0)) * fx;
                    let bottom = m.get(y1, x0) + (m.get(y1, x1) - m.get(y1, x0)) * fx;
                    top + (bottom - top) * fy
                }
            };
            out.set(y, x, v);
        }
    }
    out
}

fn viridis<T: Real>(v: T) -> [T; 3] {
    let pos = v.as_f64().clamp(0.0, 1.0) * 255.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(255);
    let f = pos - lo as f64;
    let mut rgb = [T::zero(); 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = T::lit(VIRIDIS[lo][c] + (VIRIDIS[hi][c] - VIRIDIS[lo][c]) * f);
    }
    rgb
}

/// Resizes a normalized matrix to `image_size²` and maps it to RGB.
pub fn render_image<T: Real>(
    norm: &Matrix<T>,
    image_size: usize,
    colormap: Colormap,
    resize_method: ResizeMethod,
) -> Result<SpectroImage<T>> {
    if image_size == 0 || norm.rows == 0 || norm.cols == 0 {
        return Err(Error::validation("cannot render an empty image"));
    }
    if let Some(v) = norm.data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::validation(format!("normalized value {v} outside [0, 1]")));
    }
    let resized = resize(norm, image_size, image_size, resize_method);
    let mut pixels = Vec::with_capacity(image_size * image_size * CHANNELS);
    for &v in &resized.data {
        match colormap {
            Colormap::Grayscale3 => pixels.extend([v; 3]),
            Colormap::ViridisLut => pixels.extend(viridis(v)),
        }
    }
    Ok(SpectroImage {
        height: image_size,
        width: image_size,
        pixels,
        device_id: 0,
        segment_index: 0,
    })
}
