//! On-disk cache of extracted spectrograms, keyed by a hash of everything
//! that determines them (traces, feature config, scalar type).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use specprint::matrix::Matrix;
use specprint::pipeline::{extract_features, DeviceRegions, FeatureConfig, Features};
use specprint::spectral::{Method, Spectrogram};
use specprint::trace::{write_traces, PacketTrace};
use specprint::Real;

const MAGIC: &[u8; 8] = b"SPFEAT1\0";

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable key for the features of `traces` under `cfg`.
pub fn feature_key<T: Real>(traces: &[PacketTrace], cfg: &FeatureConfig) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    write_traces(traces, &mut buf)?;
    h.update(&buf);
    h.update(toml::to_string(cfg)?.as_bytes());
    h.update(T::TAG.as_bytes());
    Ok(hex(&h.finalize())[..16].to_string())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn put_vals<T: Real>(w: &mut impl Write, v: &[T]) -> std::io::Result<()> {
    put_u64(w, v.len() as u64)?;
    v.iter().try_for_each(|x| w.write_all(&x.as_f64().to_le_bytes()))
}

fn get_vals<T: Real>(r: &mut impl Read) -> std::io::Result<Vec<T>> {
    let n = get_u64(r)? as usize;
    (0..n).map(|_| get_u64(r).map(|b| T::lit(f64::from_bits(b)))).collect()
}

fn write_features<T: Real>(path: &Path, f: &Features<T>) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u64(&mut w, f.spectrograms.len() as u64)?;
    for (specs, reg) in f.spectrograms.iter().zip(&f.regions) {
        for v in [reg.in_dist.start, reg.in_dist.end, reg.ood.start, reg.ood.end, specs.len()] {
            put_u64(&mut w, v as u64)?;
        }
        for s in specs {
            let m = u64::from(s.method == Method::Cwt);
            for v in [m, s.device_id as u64, s.segment_index as u64, s.power_db.rows as u64, s.power_db.cols as u64] {
                put_u64(&mut w, v)?;
            }
            put_vals(&mut w, &s.power_db.data)?;
            put_vals(&mut w, &s.time_axis)?;
            put_vals(&mut w, &s.freq_axis)?;
        }
    }
    w.flush()
}

fn read_features<T: Real>(path: &Path) -> Result<Features<T>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("bad cache file {}", path.display());
    }
    let devices = get_u64(&mut r)? as usize;
    let mut spectrograms = Vec::with_capacity(devices);
    let mut regions = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut h = [0usize; 5];
        for v in h.iter_mut() {
            *v = get_u64(&mut r)? as usize;
        }
        regions.push(DeviceRegions { in_dist: h[0]..h[1], ood: h[2]..h[3] });
        let mut specs = Vec::with_capacity(h[4]);
        for _ in 0..h[4] {
            let mut m = [0usize; 5];
            for v in m.iter_mut() {
                *v = get_u64(&mut r)? as usize;
            }
            let data = get_vals(&mut r)?;
            specs.push(Spectrogram {
                method: if m[0] == 1 { Method::Cwt } else { Method::Stft },
                device_id: m[1],
                segment_index: m[2],
                power_db: Matrix::from_vec(m[3], m[4], data)?,
                time_axis: get_vals(&mut r)?,
                freq_axis: get_vals(&mut r)?,
            });
        }
        spectrograms.push(specs);
    }
    Ok(Features { spectrograms, regions })
}

pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Loads cached features or extracts and stores them. The flag reports
    /// a cache hit.
    pub fn get_or_extract<T: Real>(&self, traces: &[PacketTrace], cfg: &FeatureConfig) -> Result<(Features<T>, bool)> {
        let key = feature_key::<T>(traces, cfg)?;
        let path = self.dir.join(format!("features-{key}.bin"));
        if path.exists() {
            if let Ok(f) = read_features(&path) {
                return Ok((f, true));
            }
        }
        let f = extract_features(traces, cfg)?;
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        // Write to a temporary name first so concurrent readers never see a
        // partial file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        write_features(&tmp, &f).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path)?;
        Ok((f, false))
    }
}
