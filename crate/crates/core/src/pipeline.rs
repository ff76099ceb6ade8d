//! Traces to model-ready datasets.
//!
//! Each trace is cut into an in-distribution prefix, which is segmented,
//! transformed, split and rendered, and an optional held-out suffix kept
//! aside for cross-configuration evaluation.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{
    fit_channel_stats, fit_global_bounds, fit_percentile_bounds, normalize_spectrogram, render_image, ChannelStats,
    Colormap, NormalizationMode, PercentileBounds, ResizeMethod, SpectroImage, DEFAULT_IMAGE_SIZE,
};
use crate::segment::{mean_center, segment_trace_from, SegmentationParams};
use crate::spectral::{Method, Spectrogram, Transform};
use crate::trace::{check_dense, PacketTrace};
use crate::training::{split_dataset, DatasetSplit, Datasets, LabeledImage, SplitKind, SplitSpec};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub seg_len: usize,
    pub overlap: f64,
    pub method: Method,
    pub resolution: usize,
    /// STFT hop as a fraction of the window.
    pub frame_stride: f64,
    pub image_size: usize,
    pub colormap: Colormap,
    pub resize: ResizeMethod,
    pub normalization: NormalizationMode,
    /// Cap on in-distribution segments per device; 0 keeps all.
    pub max_segments: usize,
    /// Packets at the end of every trace held out for cross-configuration
    /// evaluation.
    pub ood_packets: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            seg_len: 100,
            overlap: 0.5,
            method: Method::Stft,
            resolution: 16,
            frame_stride: 0.5,
            image_size: DEFAULT_IMAGE_SIZE,
            colormap: Colormap::default(),
            resize: ResizeMethod::default(),
            normalization: NormalizationMode::default(),
            max_segments: 0,
            ood_packets: 0,
        }
    }
}

impl FeatureConfig {
    pub fn segmentation(&self) -> Result<SegmentationParams> {
        SegmentationParams::new(self.seg_len, self.overlap)
    }

    pub fn transform(&self) -> Result<Transform> {
        Transform::new(self.method, self.resolution, self.frame_stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation()?;
        self.transform()?;
        if self.image_size == 0 {
            return Err(Error::validation("image_size must be positive"));
        }
        Ok(())
    }
}

/// Packet ranges of one device's trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRegions {
    pub in_dist: Range<usize>,
    pub ood: Range<usize>,
}

/// Spectrograms of every in-distribution segment, grouped by device.
#[derive(Debug, Clone)]
pub struct Features<T> {
    pub spectrograms: Vec<Vec<Spectrogram<T>>>,
    pub regions: Vec<DeviceRegions>,
}

/// Segments, centers and transforms `trace[range]`, recording absolute
/// segment starts. Spectrograms are computed in parallel, returned in order.
pub fn trace_spectrograms<T: Real>(
    trace: &PacketTrace,
    range: Range<usize>,
    params: &SegmentationParams,
    transform: &Transform,
    max_segments: usize,
) -> Result<Vec<Spectrogram<T>>> {
    let slice = trace.slice(range.start, range.end)?;
    let mut segments = segment_trace_from::<T>(&slice, params, range.start)?;
    if max_segments > 0 {
        segments.truncate(max_segments);
    }
    segments
        .par_iter()
        .map(|s| transform.spectrogram(&mean_center(s)?))
        .collect()
}

pub fn extract_features<T: Real>(traces: &[PacketTrace], cfg: &FeatureConfig) -> Result<Features<T>> {
    cfg.validate()?;
    check_dense(traces)?;
    let mut sorted: Vec<&PacketTrace> = traces.iter().collect();
    sorted.sort_by_key(|t| t.device_id);
    let params = cfg.segmentation()?;
    let transform = cfg.transform()?;
    let mut spectrograms = Vec::with_capacity(sorted.len());
    let mut regions = Vec::with_capacity(sorted.len());
    for t in sorted {
        let n = t.count();
        let split_at = n.saturating_sub(cfg.ood_packets);
        if split_at < cfg.seg_len {
            return Err(Error::InsufficientData(format!(
                "device {} ({}): {n} packets leave {split_at} after holding out {} for evaluation, fewer than one segment of {}",
                t.device_id, t.device_name, cfg.ood_packets, cfg.seg_len
            )));
        }
        let mut used = split_at;
        if cfg.max_segments > 0 {
            let count = params.segment_count(split_at).min(cfg.max_segments);
            used = params.packets_for(count);
        }
        spectrograms.push(trace_spectrograms(t, 0..used, &params, &transform, cfg.max_segments)?);
        regions.push(DeviceRegions {
            in_dist: 0..used,
            ood: split_at..n,
        });
    }
    Ok(Features { spectrograms, regions })
}

/// Normalization bounds per device plus training channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedStats<T> {
    /// Indexed by device id. In global mode every entry is the same pooled
    /// bounds with `device_id: None`.
    pub bounds: Vec<PercentileBounds<T>>,
    pub channel: ChannelStats<T>,
}

/// Normalizes with the bounds of the spectrogram's own device and renders.
pub fn render_spectrogram<T: Real>(
    spec: &Spectrogram<T>,
    bounds: &[PercentileBounds<T>],
    cfg: &FeatureConfig,
) -> Result<SpectroImage<T>> {
    let b = bounds
        .get(spec.device_id)
        .ok_or_else(|| Error::validation(format!("no normalization bounds for device {}", spec.device_id)))?;
    let norm = normalize_spectrogram(spec, b)?;
    let mut img = render_image(&norm, cfg.image_size, cfg.colormap, cfg.resize)?;
    img.device_id = spec.device_id;
    img.segment_index = spec.segment_index;
    Ok(img)
}

pub fn fit_bounds<T: Real>(
    features: &Features<T>,
    split: &DatasetSplit,
    mode: NormalizationMode,
) -> Result<Vec<PercentileBounds<T>>> {
    let train_of = |d: usize| -> Vec<&Spectrogram<T>> {
        split.devices[d]
            .train
            .iter()
            .map(|&i| &features.spectrograms[d][i])
            .collect()
    };
    let devices = features.spectrograms.len();
    match mode {
        NormalizationMode::PerDevice => (0..devices).map(|d| fit_percentile_bounds(&train_of(d))).collect(),
        NormalizationMode::Global => {
            let all: Vec<&Spectrogram<T>> = (0..devices).flat_map(train_of).collect();
            let g = fit_global_bounds(&all)?;
            Ok(vec![g; devices])
        }
    }
}

/// Everything a training run consumes.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub datasets: Datasets<T>,
    pub split: DatasetSplit,
    pub stats: FittedStats<T>,
    pub regions: Vec<DeviceRegions>,
    pub num_classes: usize,
}

/// Splits the features, fits bounds and channel statistics on the train
/// split only, and renders every image. Labels are device ids.
pub fn build_datasets<T: Real>(
    features: &Features<T>,
    split_spec: &SplitSpec,
    cfg: &FeatureConfig,
) -> Result<Prepared<T>> {
    let counts: Vec<usize> = features.spectrograms.iter().map(Vec::len).collect();
    let split = split_dataset(&counts, split_spec)?;
    let bounds = fit_bounds(features, &split, cfg.normalization)?;
    let render = |kind: SplitKind| -> Result<Vec<LabeledImage<T>>> {
        let jobs: Vec<&Spectrogram<T>> = split
            .devices
            .iter()
            .enumerate()
            .flat_map(|(d, s)| s.get(kind).iter().map(move |&i| &features.spectrograms[d][i]))
            .collect();
        jobs.par_iter()
            .map(|s| {
                Ok(LabeledImage {
                    image: render_spectrogram(s, &bounds, cfg)?,
                    label: s.device_id,
                })
            })
            .collect()
    };
    let train = render(SplitKind::Train)?;
    let val = render(SplitKind::Val)?;
    let test = render(SplitKind::Test)?;
    let refs: Vec<&SpectroImage<T>> = train.iter().map(|l| &l.image).collect();
    let channel = fit_channel_stats(&refs)?;
    Ok(Prepared {
        datasets: Datasets {
            train,
            val,
            test,
            channel_stats: channel,
        },
        split,
        stats: FittedStats { bounds, channel },
        regions: features.regions.clone(),
        num_classes: counts.len(),
    })
}

/// [`extract_features`] followed by [`build_datasets`].
pub fn prepare<T: Real>(traces: &[PacketTrace], split_spec: &SplitSpec, cfg: &FeatureConfig) -> Result<Prepared<T>> {
    let features = extract_features(traces, cfg)?;
    build_datasets(&features, split_spec, cfg)
}
