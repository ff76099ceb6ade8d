//! Packet-length histogram heatmap: one band per device, one column group
//! per length bin, viridis-colored by log count.

use std::path::Path;

use anyhow::Result;
use specprint::imaging::{png::write_rgb8, VIRIDIS};
use specprint::synth::MAX_PACKET_BYTES;
use specprint::trace::PacketTrace;

pub const BINS: usize = 75;
const BIN_PX: usize = 4;
const ROW_PX: usize = 16;

/// Counts per `BINS` equal-width bins over [0, 1500] bytes.
pub fn histogram(trace: &PacketTrace) -> Vec<u64> {
    let width = MAX_PACKET_BYTES as usize / BINS;
    let mut h = vec![0u64; BINS];
    for &l in trace.lengths() {
        h[(l as usize / width).min(BINS - 1)] += 1;
    }
    h
}

pub fn write_heatmap(path: &Path, traces: &[PacketTrace]) -> Result<()> {
    let hists: Vec<Vec<u64>> = traces.iter().map(histogram).collect();
    let (w, h) = (BINS * BIN_PX, traces.len() * ROW_PX);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for hist in &hists {
        let max = hist.iter().copied().max().unwrap_or(0) as f64;
        let row: Vec<[u8; 3]> = hist
            .iter()
            .map(|&c| {
                let v = if max > 0.0 { (1.0 + c as f64).ln() / (1.0 + max).ln() } else { 0.0 };
                let idx = (v * 255.0).round() as usize;
                VIRIDIS[idx].map(|x| (x * 255.0).round() as u8)
            })
            .collect();
        for _ in 0..ROW_PX {
            for px in &row {
                for _ in 0..BIN_PX {
                    rgb.extend_from_slice(px);
                }
            }
        }
    }
    write_rgb8(path, w, h, &rgb)?;
    Ok(())
}
