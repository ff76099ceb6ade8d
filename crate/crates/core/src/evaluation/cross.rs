use std::io::Write;

use rayon::prelude::*;

use crate::imaging::standardize_image;
use crate::pipeline::{render_spectrogram, trace_spectrograms, DeviceRegions, FeatureConfig, FittedStats};
use crate::segment::SegmentationParams;
use crate::spectral::Method;
use crate::trace::PacketTrace;
use crate::vit::{forward, VitModel};
use crate::{Error, Real, Result};

use super::accuracy;

pub const OOD_SEG_LENS: [usize; 3] = [100, 200, 500];
pub const OOD_OVERLAPS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCell {
    pub seg_len: usize,
    pub overlap: f64,
    pub accuracy_pct: f64,
    pub n: usize,
    /// The cell matching the training segmentation.
    pub matched: bool,
}

impl CrossCell {
    pub fn label(&self) -> String {
        format!("L{}_p{}", self.seg_len, (self.overlap * 100.0).round())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossConfigReport {
    pub method: Method,
    pub resolution: usize,
    pub trained_seg_len: usize,
    pub trained_overlap: f64,
    /// Row-major over segment lengths, then overlaps.
    pub cells: Vec<CrossCell>,
    /// Largest accuracy difference between any two cells.
    pub max_gap: f64,
    /// Per segment length: max − min accuracy across its overlaps.
    pub overlap_spread: Vec<(usize, f64)>,
}

impl CrossConfigReport {
    pub fn cell(&self, seg_len: usize, overlap: f64) -> Option<&CrossCell> {
        self.cells
            .iter()
            .find(|c| c.seg_len == seg_len && (c.overlap - overlap).abs() < 1e-12)
    }

    pub fn matched(&self) -> Option<&CrossCell> {
        self.cells.iter().find(|c| c.matched)
    }

    /// One row per report; accuracy columns follow the first report's cells.
    pub fn write_grid_csv<W: Write>(reports: &[CrossConfigReport], mut out: W) -> std::io::Result<()> {
        let Some(first) = reports.first() else {
            return Ok(());
        };
        let labels: Vec<String> = first.cells.iter().map(CrossCell::label).collect();
        writeln!(out, "method,seg_len,resolution,trained_overlap,{},matched", labels.join(","))?;
        for r in reports {
            let accs: Vec<String> = r.cells.iter().map(|c| c.accuracy_pct.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.trained_seg_len,
                r.resolution,
                r.trained_overlap,
                accs.join(","),
                r.matched().map(CrossCell::label).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    /// Long form: one row per cell with its sample count.
    pub fn write_cells_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "seg_len,overlap,accuracy_pct,n,matched")?;
        for c in &self.cells {
            writeln!(out, "{},{},{},{},{}", c.seg_len, c.overlap, c.accuracy_pct, c.n, c.matched)?;
        }
        Ok(())
    }
}

fn check_regions(traces: &[PacketTrace], regions: &[DeviceRegions]) -> Result<()> {
    if traces.len() != regions.len() {
        return Err(Error::validation(format!(
            "{} traces but {} region records",
            traces.len(),
            regions.len()
        )));
    }
    for (t, r) in traces.iter().zip(regions) {
        let overlaps = r.ood.start < r.in_dist.end && r.in_dist.start < r.ood.end;
        if overlaps {
            return Err(Error::validation(format!(
                "device {}: evaluation region {:?} overlaps training region {:?}",
                t.device_id, r.ood, r.in_dist
            )));
        }
        if r.ood.is_empty() || r.ood.end > t.count() {
            return Err(Error::validation(format!(
                "device {}: evaluation region {:?} is empty or outside a trace of {} packets",
                t.device_id,
                r.ood,
                t.count()
            )));
        }
    }
    Ok(())
}

/// Evaluates a trained model on the held-out regions of `traces`, segmented
/// at every `(seg_len, overlap)` pair but transformed, normalized and
/// standardized exactly as in training. `max_segments` caps the segments per
/// device and cell (0 keeps all).
#[allow(clippy::too_many_arguments)]
pub fn cross_config_eval<T: Real>(
    model: &VitModel<T>,
    stats: &FittedStats<T>,
    cfg: &FeatureConfig,
    traces: &[PacketTrace],
    regions: &[DeviceRegions],
    seg_lens: &[usize],
    overlaps: &[f64],
    max_segments: usize,
) -> Result<CrossConfigReport> {
    let mut sorted: Vec<&PacketTrace> = traces.iter().collect();
    sorted.sort_by_key(|t| t.device_id);
    let sorted: Vec<PacketTrace> = sorted.into_iter().cloned().collect();
    check_regions(&sorted, regions)?;
    let transform = cfg.transform()?;
    let mut cells = Vec::with_capacity(seg_lens.len() * overlaps.len());
    for &seg_len in seg_lens {
        for &overlap in overlaps {
            let params = SegmentationParams::new(seg_len, overlap)?;
            let mut specs = Vec::new();
            for (t, r) in sorted.iter().zip(regions) {
                specs.extend(trace_spectrograms::<T>(t, r.ood.clone(), &params, &transform, max_segments)?);
            }
            let results: Vec<(usize, usize)> = specs
                .par_iter()
                .map(|s| {
                    let img = render_spectrogram(s, &stats.bounds, cfg)?;
                    let x = standardize_image(&img, &stats.channel);
                    Ok((forward(&x, model)?.predicted, s.device_id))
                })
                .collect::<Result<_>>()?;
            let (preds, labels): (Vec<usize>, Vec<usize>) = results.into_iter().unzip();
            cells.push(CrossCell {
                seg_len,
                overlap,
                accuracy_pct: accuracy(&preds, &labels)?,
                n: preds.len(),
                matched: seg_len == cfg.seg_len && (overlap - cfg.overlap).abs() < 1e-12,
            });
        }
    }
    let accs = cells.iter().map(|c| c.accuracy_pct);
    let max_gap = accs.clone().fold(f64::NEG_INFINITY, f64::max) - accs.fold(f64::INFINITY, f64::min);
    let overlap_spread = seg_lens
        .iter()
        .map(|&l| {
            let row: Vec<f64> = cells.iter().filter(|c| c.seg_len == l).map(|c| c.accuracy_pct).collect();
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            (l, hi - lo)
        })
        .collect();
    Ok(CrossConfigReport {
        method: cfg.method,
        resolution: cfg.resolution,
        trained_seg_len: cfg.seg_len,
        trained_overlap: cfg.overlap,
        cells,
        max_gap,
        overlap_spread,
    })
}
