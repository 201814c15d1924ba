//! IDX binary format (MNIST / EMNIST style).
//!
//! Layout: 4-byte big-endian magic, one big-endian `u32` per dimension,
//! then raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::nn::Matrix;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, field: &'static str) -> Result<u32, DataError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(DataError::Truncated {
            field,
            needed: end,
            available: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&self, field: &'static str, len: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(DataError::Truncated {
                field,
                needed: end,
                available: self.bytes.len(),
            });
        }
        Ok(&self.bytes[self.pos..end])
    }
}

fn expect_magic(found: u32, expected: u32, field: &'static str) -> Result<(), DataError> {
    if found != expected {
        return Err(DataError::BadMagic { field, expected, found });
    }
    Ok(())
}

/// Parses an image file into `(count, rows*cols, pixels scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<Matrix, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(r.u32("images.magic")?, IMAGES_MAGIC, "images.magic")?;
    let count = r.u32("images.count")? as usize;
    let rows = r.u32("images.rows")? as usize;
    let cols = r.u32("images.cols")? as usize;
    let dim = rows * cols;
    let pixels = r.body("images.pixels", count * dim)?;
    let values = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Matrix::from_vec(count, dim, values).expect("sized from header"))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(r.u32("labels.magic")?, LABELS_MAGIC, "labels.magic")?;
    let count = r.u32("labels.count")? as usize;
    let body = r.body("labels.values", count)?;
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair. The class count is `max(label) + 1`
/// (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let images = parse_images(&read(images_path.as_ref())?)?;
    let labels = parse_labels(&read(labels_path.as_ref())?)?;
    if images.rows() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.rows(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(images, labels, num_classes)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_crafted_fixture() {
        let pixels = [0u8, 128, 255, 64, 1, 2, 3, 4, 10, 20, 30, 40];
        let m = parse_images(&encode_images(3, 2, 2, &pixels)).unwrap();
        assert_eq!(m.shape(), (3, 4));
        let row0 = m.row(0);
        assert_eq!(row0[0], 0.0);
        assert!((row0[1] - 0.50196).abs() < 1e-5);
        assert_eq!(row0[2], 1.0);
        assert!((row0[3] - 64.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn magic_constants_are_big_endian() {
        let bytes = encode_labels(&[1, 2]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(parse_labels(&bytes).unwrap(), vec![1, 2]);
    }

    #[test]
    fn labels_with_image_magic_rejected() {
        let mut bytes = encode_labels(&[0, 1]);
        bytes[3] = 0x03;
        match parse_labels(&bytes) {
            Err(DataError::BadMagic { field, found, .. }) => {
                assert_eq!(field, "labels.magic");
                assert_eq!(found, IMAGES_MAGIC);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_body_rejected() {
        let mut bytes = encode_images(2, 2, 2, &[0; 8]);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            parse_images(&bytes),
            Err(DataError::Truncated {
                field: "images.pixels",
                ..
            })
        ));
        assert!(matches!(
            parse_labels(&[0, 0]),
            Err(DataError::Truncated {
                field: "labels.magic",
                ..
            })
        ));
    }
}
