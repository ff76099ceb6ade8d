//! Binary checkpoint format, version 1.
//!
//! ```text
//! magic "SPVITCK\0" | u32 version | u32 header_len | header (key=value lines)
//! u32 tensor_count | per tensor: u16 name_len, name, u8 ndim, u64 dims..., f64 values...
//! ```
//! All integers and values are little-endian. Values are always stored as
//! f64, which is exact for both scalar types.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{VitConfig, VitModel};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 8] = b"SPVITCK\0";
const VERSION: u32 = 1;

fn header(cfg: &VitConfig, tag: &str) -> String {
    format!(
        "scalar={tag}\nimage_size={}\npatch_size={}\nembed_dim={}\nnum_layers={}\nnum_heads={}\nmlp_dim={}\nnum_classes={}\nln_eps={:e}\n",
        cfg.image_size,
        cfg.patch_size,
        cfg.embed_dim,
        cfg.num_layers,
        cfg.num_heads,
        cfg.mlp_dim,
        cfg.num_classes,
        cfg.ln_eps
    )
}

fn parse_header(text: &str) -> Result<VitConfig> {
    let mut cfg = VitConfig::default();
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("checkpoint header line '{line}' has no '='")))?;
        let bad = |_| Error::validation(format!("checkpoint header: bad value for {k}: '{v}'"));
        let slot = match k {
            "scalar" => continue,
            "ln_eps" => {
                cfg.ln_eps = v.parse().map_err(bad)?;
                seen += 1;
                continue;
            }
            "image_size" => &mut cfg.image_size,
            "patch_size" => &mut cfg.patch_size,
            "embed_dim" => &mut cfg.embed_dim,
            "num_layers" => &mut cfg.num_layers,
            "num_heads" => &mut cfg.num_heads,
            "mlp_dim" => &mut cfg.mlp_dim,
            "num_classes" => &mut cfg.num_classes,
            _ => return Err(Error::validation(format!("checkpoint header: unknown key {k}"))),
        };
        *slot = v.parse().map_err(|_| Error::validation(format!("checkpoint header: bad value for {k}: '{v}'")))?;
        seen += 1;
    }
    if seen != 8 {
        return Err(Error::validation("checkpoint header is incomplete"));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, model: &VitModel<T>) -> Result<()> {
    let io = |e| Error::io("writing checkpoint", e);
    let head = header(&model.config, T::TAG);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(head.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(head.as_bytes()).map_err(io)?;
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[t.shape.len() as u8]).map_err(io)?;
        for &dim in &t.shape {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in &t.data {
            w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::io("reading checkpoint", e))?;
    Ok(buf)
}

/// Reads a checkpoint, validating the header and every tensor name and shape.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<VitModel<T>> {
    if &read_exact::<_, 8>(&mut r)? != MAGIC {
        return Err(Error::validation("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::validation(format!("unsupported checkpoint version {version}")));
    }
    let head_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if head_len > 1 << 16 {
        return Err(Error::validation("checkpoint header too large"));
    }
    let mut head = vec![0u8; head_len];
    r.read_exact(&mut head).map_err(|e| Error::io("reading checkpoint", e))?;
    let head = String::from_utf8(head).map_err(|_| Error::validation("checkpoint header is not UTF-8"))?;
    let cfg = parse_header(&head)?;
    let mut model = VitModel::<T>::zeros(cfg)?;

    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::validation(format!(
            "checkpoint has {count} tensors, config implies {}",
            slots.len()
        )));
    }
    for (expected, t) in slots.iter_mut() {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| Error::io("reading checkpoint", e))?;
        if name != expected.as_bytes() {
            return Err(Error::validation(format!(
                "checkpoint tensor '{}' where '{expected}' was expected",
                String::from_utf8_lossy(&name)
            )));
        }
        let ndim = read_exact::<_, 1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        if shape != t.shape {
            return Err(Error::validation(format!(
                "tensor {expected}: shape {shape:?} does not match {:?}",
                t.shape
            )));
        }
        for v in t.data.iter_mut() {
            let x = f64::from_le_bytes(read_exact(&mut r)?);
            if !x.is_finite() {
                return Err(Error::validation(format!("tensor {expected}: non-finite value")));
            }
            *v = T::lit(x);
        }
    }
    drop(slots);
    Ok(model)
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &VitModel<T>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_checkpoint(BufWriter::new(f), model)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<VitModel<T>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(BufReader::new(f))
}
