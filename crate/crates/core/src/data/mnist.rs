//! IDX reader for the MNIST files (big-endian headers).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, format!("offset {offset}"), "truncated header"))
}

struct IdxImages {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

fn parse_images(bytes: &[u8], path: &Path, limit: Option<usize>) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            path,
            "offset 0",
            format!("bad magic {magic}, expected {IMAGES_MAGIC}"),
        ));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let take = limit.map_or(count, |l| l.min(count));
    let need = 16 + take * rows * cols;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            format!("offset {}", bytes.len()),
            format!("truncated pixel data: {need} bytes required"),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

fn parse_labels(bytes: &[u8], path: &Path, limit: Option<usize>) -> Result<(usize, Vec<u8>)> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            path,
            "offset 0",
            format!("bad magic {magic}, expected {LABELS_MAGIC}"),
        ));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let take = limit.map_or(count, |l| l.min(count));
    if bytes.len() < 8 + take {
        return Err(Error::format(
            path,
            format!("offset {}", bytes.len()),
            format!("truncated label data: {} bytes required", 8 + take),
        ));
    }
    Ok((count, bytes[8..8 + take].to_vec()))
}

/// Loads an MNIST image/label file pair; pixels are scaled to `[0, 1]` by
/// division by 255 and labels become 10-way one-hot rows.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_images(&image_bytes, images_path, limit)?;
    let (label_count, labels) = parse_labels(&label_bytes, labels_path, limit)?;
    if label_count != images.count {
        return Err(Error::format(
            labels_path,
            "offset 4",
            format!("{label_count} labels for {} images", images.count),
        ));
    }
    let m = images.rows * images.cols;
    let pixels: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let inputs = Matrix::from_vec(labels.len(), m, pixels)?;
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    if let Some(pos) = classes.iter().position(|&c| c > 9) {
        return Err(Error::format(
            labels_path,
            format!("offset {}", 8 + pos),
            format!("label {} outside 0..=9", classes[pos]),
        ));
    }
    let names = (0..10).map(|d| d.to_string()).collect();
    Dataset::from_class_indices(inputs, &classes, names)
}

/// Writes an IDX3 image file (`count × rows × cols` bytes).
pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(pixels.len() % (rows * cols), 0, "pixel count");
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.write_all(&v.to_be_bytes()).expect("vec write");
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes an IDX1 label file.
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
