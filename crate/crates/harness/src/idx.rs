//! MNIST IDX files (big-endian).
//!
//! Images: magic `0x00000803`, then `N, rows, cols` as u32, then `N*rows*cols`
//! bytes scaled by 1/255. Labels: magic `0x00000801`, then `N`, then `N` bytes.

use std::fs;
use std::path::Path;

use sanity_core::data::{Dataset, Source, Split};
use sanity_core::Tensor;

use crate::{HarnessError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside 0..10")]
    BadLabel(u8),
    #[error("file holds no images")]
    Empty,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parsed image file: `(count, rows, cols, pixels in [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>), IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
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

/// Builds a dataset from raw IDX bytes.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8], split: Split) -> Result<Dataset, IdxError> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(IdxError::BadLabel(bad));
    }
    let images = Tensor::new(vec![n, 1, rows, cols], pixels).map_err(|_| IdxError::Empty)?;
    Ok(Dataset::new(
        images,
        labels.into_iter().map(usize::from).collect(),
        MNIST_CLASSES,
        split,
        Source::Mnist,
    )
    .expect("IDX pixels are in [0, 1] and labels were checked"))
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| HarnessError::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| HarnessError::io(lp, e))?;
    mnist_from_bytes(&images, &labels, split).map_err(|source| {
        let path = match source {
            IdxError::BadMagic {
                expected: LABELS_MAGIC, ..
            }
            | IdxError::BadLabel(_) => lp,
            _ => ip,
        };
        HarnessError::Idx {
            path: path.to_owned(),
            source,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut pixels = vec![0u8; 2 * 28 * 28];
        pixels[0] = 255;
        pixels[28 * 28 + 5] = 51;
        (encode_images(2, 28, 28, &pixels), encode_labels(&[7, 3]))
    }

    #[test]
    fn parses_constructed_fixture() {
        let (img, lab) = fixture();
        let ds = mnist_from_bytes(&img, &lab, Split::Test).unwrap();
        assert_eq!(ds.images().shape(), &[2, 1, 28, 28]);
        assert_eq!(ds.labels(), &[7, 3]);
        assert_eq!(ds.image(0).data()[0], 1.0);
        assert_eq!(ds.image(0).data()[1], 0.0);
        assert_eq!(ds.image(1).data()[5], 0.2);
    }

    #[test]
    fn distinct_errors() {
        let (img, lab) = fixture();
        assert!(matches!(
            mnist_from_bytes(&lab, &lab, Split::Test),
            Err(IdxError::BadMagic {
                expected: IMAGES_MAGIC,
                ..
            })
        ));
        assert!(matches!(
            mnist_from_bytes(&img, &img, Split::Test),
            Err(IdxError::BadMagic {
                expected: LABELS_MAGIC,
                ..
            })
        ));
        assert!(matches!(
            mnist_from_bytes(&img[..100], &lab, Split::Test),
            Err(IdxError::Truncated { .. })
        ));
        assert_eq!(
            mnist_from_bytes(&img, &encode_labels(&[1, 2, 3]), Split::Test).unwrap_err(),
            IdxError::CountMismatch { images: 2, labels: 3 }
        );
        assert_eq!(
            mnist_from_bytes(&img, &encode_labels(&[1, 12]), Split::Test).unwrap_err(),
            IdxError::BadLabel(12)
        );
    }
}
