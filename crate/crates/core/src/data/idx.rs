//! IDX (MNIST) reader and writer.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D unsigned-byte images,
//! `0x00000801` for 1-D unsigned-byte labels), one big-endian `u32` per
//! dimension, then the raw bytes. Gzip-compressed files are detected by their
//! `1f 8b` prefix and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Decoded image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn maybe_inflate(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| parse_err(0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(bytes.len() as u64, format!("truncated header: missing {what}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0, "magic number")?;
    if found != expected {
        return Err(parse_err(0, format!("wrong magic: expected {expected:#010x}, found {found:#010x}")));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(parse_err(
            bytes.len() as u64,
            format!("truncated pixel data: expected {need} bytes after offset 16, found {}", body.len()),
        ));
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..need].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(parse_err(
            bytes.len() as u64,
            format!("truncated label data: expected {count} bytes after offset 8, found {}", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` and ids
/// follow file order.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = parse_idx_images(&maybe_inflate(fs::read(image_path)?)?)?;
    let labels = parse_idx_labels(&maybe_inflate(fs::read(label_path)?)?)?;
    if images.count != labels.len() {
        return Err(parse_err(
            4,
            format!("count mismatch: {} images but {} labels", images.count, labels.len()),
        ));
    }
    let dim = images.rows * images.cols;
    if dim == 0 {
        return Err(parse_err(8, "images have zero pixels"));
    }
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabeledDataset::new((0..images.count as u32).collect(), features, dim, labels, num_classes, None)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes `dataset` as an uncompressed IDX pair with the given image shape.
/// Features are quantised to `round(255 * v)`, so a dataset loaded from IDX
/// round-trips exactly.
pub fn write_idx(
    dataset: &LabeledDataset,
    rows: usize,
    cols: usize,
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    crate::error::ensure!(rows * cols == dataset.dim(), "image shape {rows}x{cols} does not match dim {}", dataset.dim());
    crate::error::ensure!(dataset.num_classes() <= 256, "labels must fit in a byte");
    let pixels = dataset.features().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let images = IdxImages { count: dataset.len(), rows, cols, pixels };
    let labels: Vec<u8> = dataset.labels().iter().map(|&y| y as u8).collect();
    fs::write(image_path, encode_idx_images(&images))?;
    fs::write(label_path, encode_idx_labels(&labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;

    #[test]
    fn wrong_magic_names_offset_zero() {
        let bytes = encode_idx_images(&IdxImages { count: 1, rows: 1, cols: 1, pixels: vec![3] });
        match parse_idx_labels(&bytes) {
            Err(Error::Parse { offset: 0, message }) => assert!(message.contains("wrong magic")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_pixels() {
        let mut bytes = encode_idx_images(&IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![1; 8] });
        bytes.truncate(20);
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset: 20, message }) => assert!(message.contains("truncated")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_idx_images(&bytes[..6]), Err(Error::Parse { offset: 6, .. })));
    }

    #[test]
    fn gzip_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = encode_idx_images(&IdxImages { count: 2, rows: 1, cols: 2, pixels: vec![0, 255, 51, 102] });
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&img).unwrap();
        let ip = dir.path().join("img.gz");
        fs::write(&ip, gz.finish().unwrap()).unwrap();
        let lp = dir.path().join("lbl");
        fs::write(&lp, encode_idx_labels(&[1, 0])).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.row(0), &[0.0, 1.0]);
        assert_eq!(d.row(1), &[0.2, 0.4]);

        fs::write(&lp, encode_idx_labels(&[1, 0, 1])).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("count mismatch")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
