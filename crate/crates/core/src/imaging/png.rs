use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::render::SpectroImage;
use crate::{Error, Real, Result};

pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::io(ctx(), std::io::Error::other(e)))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::io(ctx(), std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::io(ctx(), std::io::Error::other(e)))
}

pub fn write_image<T: Real>(path: &Path, img: &SpectroImage<T>) -> Result<()> {
    write_rgb8(path, img.width, img.height, &img.to_rgb8())
}

/// Decodes an 8-bit RGB PNG into `(width, height, bytes)`.
pub fn read_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let ctx = || format!("reading {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| Error::io(ctx(), std::io::Error::other(e)))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::io(ctx(), std::io::Error::other(e)))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::validation(format!("{} is not 8-bit RGB", path.display())));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}
