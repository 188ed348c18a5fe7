//! Reader for the big-endian IDX container (`u8` images and labels).

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header, need 4 bytes at {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    if bytes.is_empty() {
        return Err(format_err(0, "empty file"));
    }
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(format_err(0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

/// Parses an image file into an `n × (rows·cols)` matrix of raw bytes.
pub fn parse_images(bytes: &[u8]) -> Result<(Array2<u8>, usize, usize)> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let need = 16 + n * pixels;
    if bytes.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated image data: {n} images of {rows}x{cols} need {need} bytes"),
        ));
    }
    let data = bytes[16..need].to_vec();
    let m = Array2::from_shape_vec((n, pixels), data).expect("length checked");
    Ok((m, rows, cols))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(format_err(bytes.len(), format!("truncated label data: {n} labels need {need} bytes")));
    }
    Ok(bytes[8..need].to_vec())
}

/// Images scaled to `[0, 1]` and labels as class indices.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<(Array2<f64>, Vec<usize>)> {
    let (img, _, _) = parse_images(images)?;
    let lab = parse_labels(labels)?;
    if lab.len() != img.nrows() {
        return Err(format_err(
            4,
            format!("label file has {} entries but image file has {}", lab.len(), img.nrows()),
        ));
    }
    let x = img.mapv(|p| f64::from(p) / 255.0);
    Ok((x, lab.into_iter().map(usize::from).collect()))
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    parse_idx_pair(&img, &lab)
}
