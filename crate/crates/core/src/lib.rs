//! Packet-length spectrogram fingerprinting.
//!
//! Per-device packet-length traces are segmented, turned into STFT or CWT
//! spectrograms, rendered as images and classified with a small vision
//! transformer. The numeric core is generic over [`Real`] (`f32`/`f64`);
//! the aliases below name the common instantiations.

pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod matrix;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod segment;
pub mod sidecar;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod trace;
pub mod training;
pub mod vit;

pub use error::{Error, Result};
pub use scalar::{Precision, Real};

pub type VitModelF32 = vit::VitModel<f32>;
pub type VitModelF64 = vit::VitModel<f64>;
pub type SpectrogramF32 = spectral::Spectrogram<f32>;
pub type SpectrogramF64 = spectral::Spectrogram<f64>;
pub type SpectroImageF32 = imaging::SpectroImage<f32>;
pub type SpectroImageF64 = imaging::SpectroImage<f64>;
pub type SegmentF32 = segment::Segment<f32>;
pub type SegmentF64 = segment::Segment<f64>;
pub type DatasetsF32 = training::Datasets<f32>;
pub type DatasetsF64 = training::Datasets<f64>;
pub type PreparedF32 = pipeline::Prepared<f32>;
pub type PreparedF64 = pipeline::Prepared<f64>;
