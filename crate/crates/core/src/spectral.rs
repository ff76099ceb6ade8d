//! Time-frequency transforms of centered packet-length segments.
//!
//! Both transforms sample on the packet index (1 cycle/packet). The STFT
//! uses a symmetric Hann window with FFT size equal to the window length and
//! keeps the non-negative bins. The CWT correlates the segment with a
//! complex Morlet wavelet at log-spaced pseudo-frequencies between
//! `1/(2R)` and Nyquist.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::segment::Segment;
use crate::{Error, Real, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;
pub const DEFAULT_CENTER_FREQ: f64 = 0.8125;
pub const DEFAULT_FRAME_STRIDE: f64 = 0.5;
/// Morlet support is cut at |t| <= 8, where the envelope is below e^-32.
pub const MORLET_SUPPORT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stft,
    Cwt,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Stft => "STFT",
            Method::Cwt => "CWT",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stft" => Ok(Method::Stft),
            "cwt" => Ok(Method::Cwt),
            other => Err(Error::validation(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftParams {
    pub resolution: usize,
    pub frame_stride_frac: f64,
    pub hop: usize,
    pub sample_rate: f64,
    pub epsilon: f64,
}

impl StftParams {
    pub fn new(resolution: usize, frame_stride_frac: f64) -> Result<Self> {
        if resolution < 2 || resolution % 2 != 0 {
            return Err(Error::validation(format!(
                "STFT resolution must be even and >= 2, got {resolution}"
            )));
        }
        if !(frame_stride_frac > 0.0 && frame_stride_frac <= 1.0) {
            return Err(Error::validation(format!(
                "frame stride fraction {frame_stride_frac} outside (0, 1]"
            )));
        }
        let hop = (resolution as f64 * frame_stride_frac).floor() as usize;
        if hop < 1 {
            return Err(Error::validation("STFT hop rounds to zero"));
        }
        Ok(Self {
            resolution,
            frame_stride_frac,
            hop,
            sample_rate: 1.0,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn bins(&self) -> usize {
        self.resolution / 2 + 1
    }

    pub fn frames(&self, seg_len: usize) -> usize {
        if seg_len < self.resolution {
            0
        } else {
            (seg_len - self.resolution) / self.hop + 1
        }
    }

    /// `f_k = k·f_s/R`.
    pub fn freq_axis<T: Real>(&self) -> Vec<T> {
        let r = T::from_usize_lossy(self.resolution);
        let fs = T::lit(self.sample_rate);
        (0..self.bins()).map(|k| T::from_usize_lossy(k) * fs / r).collect()
    }

    /// Frame centers in packets.
    pub fn time_axis<T: Real>(&self, seg_len: usize) -> Vec<T> {
        let half = T::lit((self.resolution as f64 - 1.0) / 2.0);
        (0..self.frames(seg_len))
            .map(|m| T::from_usize_lossy(m * self.hop) + half)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwtParams {
    pub resolution: usize,
    pub center_freq: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Descending; index 0 is the largest scale (lowest frequency).
    pub scales: Vec<f64>,
    /// Ascending, log-spaced.
    pub freqs: Vec<f64>,
    pub epsilon: f64,
}

impl CwtParams {
    pub fn new(resolution: usize) -> Result<Self> {
        Self::with_center_freq(resolution, DEFAULT_CENTER_FREQ)
    }

    pub fn with_center_freq(resolution: usize, center_freq: f64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::validation(format!(
                "CWT resolution must be >= 2, got {resolution}"
            )));
        }
        if !(center_freq > 0.0 && center_freq.is_finite()) {
            return Err(Error::validation("center frequency must be positive"));
        }
        let fs = 1.0;
        let f_min = fs / (2.0 * resolution as f64);
        let f_max = fs / 2.0;
        let ratio = f_max / f_min;
        let last = (resolution - 1) as f64;
        let (freqs, scales): (Vec<f64>, Vec<f64>) = (0..resolution)
            .map(|i| {
                let f = if i == resolution - 1 {
                    f_max
                } else {
                    f_min * ratio.powf(i as f64 / last)
                };
                exact_reciprocal_pair(center_freq * fs, f)
            })
            .unzip();
        Ok(Self {
            resolution,
            center_freq,
            f_min,
            f_max,
            scales,
            freqs,
            epsilon: DEFAULT_EPSILON,
        })
    }
}

/// Returns `(f', s')` with `s' * f' == c` exactly in floating point, found by
/// walking outward from `f` one ulp at a time. The walk stays within 2¹⁶ ulps
/// (about 1e-11 relative); in practice a few thousand at most.
fn exact_reciprocal_pair(c: f64, f: f64) -> (f64, f64) {
    let offsets = (0..=1i64 << 16).flat_map(|k| [k, -k]).skip(1);
    offsets
        .map(|k| f64::from_bits((f.to_bits() as i64 + k) as u64))
        .find_map(|g| {
            let s0 = c / g;
            (-2i64..=2)
                .map(|d| f64::from_bits((s0.to_bits() as i64 + d) as u64))
                .find(|&s| s * g == c)
                .map(|s| (g, s))
        })
        .unwrap_or((f, c / f))
}

/// Symmetric Hann window `w[n] = 0.5(1 − cos(2πn/(R−1)))`.
pub fn hann_window<T: Real>(r: usize) -> Result<Vec<T>> {
    if r < 2 {
        return Err(Error::validation(format!("Hann window length must be >= 2, got {r}")));
    }
    let denom = T::from_usize_lossy(r - 1);
    let half = T::lit(0.5);
    Ok((0..r)
        .map(|n| half * (T::one() - (T::TAU() * T::from_usize_lossy(n) / denom).cos()))
        .collect())
}

/// Complex Morlet `π^(−1/4) · e^{j2π f_c t} · e^{−t²/2}`.
#[inline]
pub fn morlet<T: Real>(t: T, center_freq: T) -> Complex<T> {
    let norm = T::PI().powf(T::lit(-0.25));
    let env = (-(t * t) / T::lit(2.0)).exp();
    Complex::from_polar(norm * env, T::TAU() * center_freq * t)
}

fn require_centered<T>(segment: &Segment<T>) -> Result<()> {
    if !segment.centered {
        return Err(Error::validation(format!(
            "segment {} of device {} must be mean-centered before transforming",
            segment.segment_index, segment.device_id
        )));
    }
    Ok(())
}

/// Windowed DFT frames, `T × (R/2+1)`.
pub fn stft<T: Real>(segment: &Segment<T>, params: &StftParams) -> Result<Matrix<Complex<T>>> {
    require_centered(segment)?;
    let r = params.resolution;
    let len = segment.values.len();
    if len < r {
        return Err(Error::validation(format!(
            "segment shorter than window: {len} < {r}"
        )));
    }
    let window = hann_window::<T>(r)?;
    // Twiddles indexed by (k·n) mod R.
    let twiddles: Vec<Complex<T>> = (0..r)
        .map(|i| Complex::from_polar(T::one(), -T::TAU() * T::from_usize_lossy(i) / T::from_usize_lossy(r)))
        .collect();
    let frames = params.frames(len);
    let bins = params.bins();
    let mut out = Matrix::filled(frames, bins, Complex::new(T::zero(), T::zero()));
    let mut windowed = vec![T::zero(); r];
    for m in 0..frames {
        let frame = &segment.values[m * params.hop..m * params.hop + r];
        for ((dst, &x), &w) in windowed.iter_mut().zip(frame).zip(&window) {
            *dst = x * w;
        }
        for k in 0..bins {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (n, &x) in windowed.iter().enumerate() {
                acc += twiddles[(k * n) % r] * x;
            }
            out.set(m, k, acc);
        }
    }
    Ok(out)
}

/// Morlet scalogram coefficients, `R × L_seg`, zero padding outside the segment.
pub fn cwt<T: Real>(segment: &Segment<T>, params: &CwtParams) -> Result<Matrix<Complex<T>>> {
    require_centered(segment)?;
    let len = segment.values.len();
    let fc = T::lit(params.center_freq);
    let mut out = Matrix::filled(params.scales.len(), len, Complex::new(T::zero(), T::zero()));
    for (j, &scale) in params.scales.iter().enumerate() {
        let s = T::lit(scale);
        let inv_sqrt = T::one() / s.sqrt();
        let reach = ((MORLET_SUPPORT * scale).floor() as usize).min(len.saturating_sub(1));
        // kernel[d + reach] = conj(ψ(d/s)) / √s for d in -reach..=reach
        let kernel: Vec<Complex<T>> = (0..=2 * reach)
            .map(|i| {
                let d = T::from_usize_lossy(i) - T::from_usize_lossy(reach);
                morlet(d / s, fc).conj() * inv_sqrt
            })
            .collect();
        for n in 0..len {
            let lo = n.saturating_sub(reach);
            let hi = (n + reach).min(len - 1);
            let mut acc = Complex::new(T::zero(), T::zero());
            for (np, &x) in segment.values[lo..=hi].iter().enumerate().map(|(i, x)| (lo + i, x)) {
                acc += kernel[np + reach - n] * x;
            }
            out.set(j, n, acc);
        }
    }
    Ok(out)
}

/// `10·log10(|c|² + ε)` elementwise.
pub fn power_db<T: Real>(coeffs: &Matrix<Complex<T>>, epsilon: f64) -> Result<Matrix<T>> {
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    let eps = T::lit(epsilon);
    let ten = T::lit(10.0);
    Ok(coeffs.map(|c| ten * (c.norm_sqr() + eps).log10()))
}

/// A dB-scale time-frequency power matrix with its axes.
///
/// `power_db` keeps each method's native layout: STFT is frames × bins,
/// CWT is scales × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub method: Method,
    pub power_db: Matrix<T>,
    pub time_axis: Vec<T>,
    pub freq_axis: Vec<T>,
    pub device_id: usize,
    pub segment_index: usize,
}

impl<T: Real> Spectrogram<T> {
    /// Frequency-by-time view with row 0 at the lowest frequency.
    pub fn image_matrix(&self) -> Matrix<T> {
        match self.method {
            Method::Stft => self.power_db.transpose(),
            Method::Cwt => self.power_db.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (row_axis, row_name, col_axis, col_name) = match self.method {
            Method::Stft => (&self.time_axis, "time", &self.freq_axis, "freq"),
            Method::Cwt => (&self.freq_axis, "freq", &self.time_axis, "time"),
        };
        write!(out, "{row_name}\\{col_name}")?;
        for v in col_axis {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
        for (r, label) in row_axis.iter().enumerate() {
            write!(out, "{label}")?;
            for v in self.power_db.row(r) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// A configured transform (method plus its parameters).
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Stft(StftParams),
    Cwt(CwtParams),
}

impl Transform {
    pub fn new(method: Method, resolution: usize, frame_stride_frac: f64) -> Result<Self> {
        Ok(match method {
            Method::Stft => Transform::Stft(StftParams::new(resolution, frame_stride_frac)?),
            Method::Cwt => Transform::Cwt(CwtParams::new(resolution)?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Transform::Stft(_) => Method::Stft,
            Transform::Cwt(_) => Method::Cwt,
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            Transform::Stft(p) => p.resolution,
            Transform::Cwt(p) => p.resolution,
        }
    }

    pub fn spectrogram<T: Real>(&self, segment: &Segment<T>) -> Result<Spectrogram<T>> {
        let (coeffs, eps, time_axis, freq_axis) = match self {
            Transform::Stft(p) => (
                stft(segment, p)?,
                p.epsilon,
                p.time_axis(segment.values.len()),
                p.freq_axis(),
            ),
            Transform::Cwt(p) => (
                cwt(segment, p)?,
                p.epsilon,
                (0..segment.values.len()).map(T::from_usize_lossy).collect(),
                p.freqs.iter().map(|&f| T::lit(f)).collect(),
            ),
        };
        Ok(Spectrogram {
            method: self.method(),
            power_db: power_db(&coeffs, eps)?,
            time_axis,
            freq_axis,
            device_id: segment.device_id,
            segment_index: segment.segment_index,
        })
    }
}
