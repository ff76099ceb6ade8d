//! Plain `key=value` sidecars for fitted normalization bounds and channel
//! statistics. Values use shortest round-trip formatting, so a write/read
//! cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::imaging::{ChannelStats, NormalizationMode, PercentileBounds};
use crate::pipeline::FittedStats;
use crate::{Error, Real, Result};

pub const BOUNDS_FILE: &str = "bounds.txt";
pub const CHANNEL_FILE: &str = "channel_stats.txt";

pub fn write_bounds<T: Real, W: Write>(bounds: &[PercentileBounds<T>], mode: NormalizationMode, mut out: W) -> Result<()> {
    let io = |e| Error::io("writing bounds", e);
    let mode = match mode {
        NormalizationMode::PerDevice => "per_device",
        NormalizationMode::Global => "global",
    };
    writeln!(out, "scalar={}\nmode={mode}\ndevices={}", T::TAG, bounds.len()).map_err(io)?;
    for (d, b) in bounds.iter().enumerate() {
        writeln!(
            out,
            "device.{d}.v_min={}\ndevice.{d}.v_max={}\ndevice.{d}.fitted_on={}",
            b.v_min, b.v_max, b.fitted_on
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn write_channel_stats<T: Real, W: Write>(stats: &ChannelStats<T>, mut out: W) -> Result<()> {
    let io = |e| Error::io("writing channel stats", e);
    writeln!(out, "scalar={}\nfitted_on={}", T::TAG, stats.fitted_on).map_err(io)?;
    for c in 0..3 {
        writeln!(out, "mean.{c}={}\nstd.{c}={}", stats.mean[c], stats.std[c]).map_err(io)?;
    }
    Ok(())
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got '{line}'")))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key '{}'", k.trim())));
        }
    }
    Ok(map)
}

fn get<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<V> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::validation(format!("sidecar is missing '{key}'")))?;
    raw.parse()
        .map_err(|_| Error::validation(format!("sidecar value for '{key}' is invalid: '{raw}'")))
}

pub fn read_bounds<T: Real>(text: &str) -> Result<(Vec<PercentileBounds<T>>, NormalizationMode)> {
    let map = parse_kv(text)?;
    let mode = match get::<String>(&map, "mode")?.as_str() {
        "per_device" => NormalizationMode::PerDevice,
        "global" => NormalizationMode::Global,
        other => return Err(Error::validation(format!("unknown normalization mode '{other}'"))),
    };
    let n: usize = get(&map, "devices")?;
    let bounds = (0..n)
        .map(|d| {
            Ok(PercentileBounds {
                device_id: (mode == NormalizationMode::PerDevice).then_some(d),
                v_min: get(&map, &format!("device.{d}.v_min"))?,
                v_max: get(&map, &format!("device.{d}.v_max"))?,
                fitted_on: get(&map, &format!("device.{d}.fitted_on"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((bounds, mode))
}

pub fn read_channel_stats<T: Real>(text: &str) -> Result<ChannelStats<T>> {
    let map = parse_kv(text)?;
    let mut stats = ChannelStats {
        mean: [T::zero(); 3],
        std: [T::one(); 3],
        fitted_on: get(&map, "fitted_on")?,
    };
    for c in 0..3 {
        stats.mean[c] = get(&map, &format!("mean.{c}"))?;
        stats.std[c] = get(&map, &format!("std.{c}"))?;
        if !(stats.std[c] > T::zero()) {
            return Err(Error::validation(format!("channel {c} std must be positive")));
        }
    }
    Ok(stats)
}

/// Writes both sidecars into `dir`.
pub fn save_stats<T: Real>(dir: &Path, stats: &FittedStats<T>, mode: NormalizationMode) -> Result<()> {
    let mut b = Vec::new();
    write_bounds(&stats.bounds, mode, &mut b)?;
    let mut c = Vec::new();
    write_channel_stats(&stats.channel, &mut c)?;
    let p = dir.join(BOUNDS_FILE);
    fs::write(&p, b).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    let p = dir.join(CHANNEL_FILE);
    fs::write(&p, c).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

pub fn load_stats<T: Real>(dir: &Path) -> Result<(FittedStats<T>, NormalizationMode)> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
    };
    let (bounds, mode) = read_bounds(&read(BOUNDS_FILE)?)?;
    let channel = read_channel_stats(&read(CHANNEL_FILE)?)?;
    Ok((FittedStats { bounds, channel }, mode))
}
