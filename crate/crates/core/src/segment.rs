//! Sliding-window segmentation and per-window mean centering.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::trace::PacketTrace;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub seg_len: usize,
    pub overlap: f64,
    stride: usize,
}

impl SegmentationParams {
    pub fn new(seg_len: usize, overlap: f64) -> Result<Self> {
        let stride = stride_for(seg_len, overlap)?;
        Ok(Self {
            seg_len,
            overlap,
            stride,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of full windows that fit into `n` samples.
    pub fn segment_count(&self, n: usize) -> usize {
        if n < self.seg_len {
            0
        } else {
            (n - self.seg_len) / self.stride + 1
        }
    }

    /// Packets needed to produce exactly `count` windows.
    pub fn packets_for(&self, count: usize) -> usize {
        if count == 0 {
            0
        } else {
            (count - 1) * self.stride + self.seg_len
        }
    }
}

pub fn stride_for(seg_len: usize, overlap: f64) -> Result<usize> {
    if seg_len < 1 {
        return Err(Error::validation("seg_len must be >= 1"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::validation(format!("overlap {overlap} outside [0, 1)")));
    }
    Ok(((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub device_id: usize,
    pub segment_index: usize,
    /// Offset of the first packet within the trace it was cut from.
    pub start: usize,
    pub values: Vec<T>,
    pub centered: bool,
    pub segment_mean: T,
}

pub fn segment_trace<T: Real>(trace: &PacketTrace, params: &SegmentationParams) -> Result<Vec<Segment<T>>> {
    segment_trace_from(trace, params, 0)
}

/// Like [`segment_trace`], recording `offset` added to every window start
/// (used when `trace` is itself a slice of a longer trace).
pub fn segment_trace_from<T: Real>(
    trace: &PacketTrace,
    params: &SegmentationParams,
    offset: usize,
) -> Result<Vec<Segment<T>>> {
    let n = trace.count();
    if n < params.seg_len {
        return Err(Error::InsufficientData(format!(
            "trace too short: device {} has {n} packets, segment length is {}",
            trace.device_id, params.seg_len
        )));
    }
    let lengths = trace.lengths();
    Ok((0..params.segment_count(n))
        .map(|i| {
            let s = i * params.stride;
            Segment {
                device_id: trace.device_id,
                segment_index: i,
                start: offset + s,
                values: lengths[s..s + params.seg_len]
                    .iter()
                    .map(|&v| T::from_u32(v).unwrap())
                    .collect(),
                centered: false,
                segment_mean: T::zero(),
            }
        })
        .collect())
}

pub fn mean_center<T: Real>(segment: &Segment<T>) -> Result<Segment<T>> {
    if segment.centered {
        return Err(Error::validation(format!(
            "segment {} of device {} is already centered",
            segment.segment_index, segment.device_id
        )));
    }
    let n = T::from_usize_lossy(segment.values.len());
    let mean = segment.values.iter().copied().sum::<T>() / n;
    Ok(Segment {
        values: segment.values.iter().map(|&v| v - mean).collect(),
        centered: true,
        segment_mean: mean,
        ..segment.clone()
    })
}

pub fn write_manifest_csv<T: Real, W: Write>(segments: &[Segment<T>], mut out: W) -> std::io::Result<()> {
    writeln!(out, "device_id,segment_index,start,mean")?;
    for s in segments {
        writeln!(out, "{},{},{},{}", s.device_id, s.segment_index, s.start, s.segment_mean)?;
    }
    Ok(())
}
