//! IDX binary format (MNIST): big-endian magic, big-endian u32 dimensions,
//! then raw unsigned bytes. Image magic 0x00000803 (3 dims), label magic
//! 0x00000801 (1 dim). Pixel bytes are scaled to [0, 1] by dividing by 255.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor4;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, context: &'static str) -> Result<u32> {
    let slice = bytes.get(offset..offset + 4).ok_or(Error::Parse {
        context,
        message: "truncated file".to_string(),
        offset,
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4-byte slice")))
}

/// Parses an IDX image file into an `(N, rows, cols, 1)` tensor in [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor4> {
    let bytes = std::fs::read(path)?;
    parse_idx_images(&bytes)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor4> {
    const CTX: &str = "IDX image file";
    let magic = read_be_u32(bytes, 0, CTX)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse {
            context: CTX,
            message: format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
            offset: 0,
        });
    }
    let n = read_be_u32(bytes, 4, CTX)? as usize;
    let rows = read_be_u32(bytes, 8, CTX)? as usize;
    let cols = read_be_u32(bytes, 12, CTX)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Parse {
            context: CTX,
            message: format!("expected {expected} bytes, file has {}", bytes.len()),
            offset: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes[16..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Tensor4::from_data(n, rows, cols, 1, data)
}

/// Parses an IDX label file into class ids.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    parse_idx_labels(&bytes)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    const CTX: &str = "IDX label file";
    let magic = read_be_u32(bytes, 0, CTX)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse {
            context: CTX,
            message: format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
            offset: 0,
        });
    }
    let n = read_be_u32(bytes, 4, CTX)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Parse {
            context: CTX,
            message: format!("expected {expected} bytes, file has {}", bytes.len()),
            offset: bytes.len(),
        });
    }
    Ok(bytes[8..expected].iter().map(|&b| b as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&n.to_be_bytes());
        bytes.extend_from_slice(&rows.to_be_bytes());
        bytes.extend_from_slice(&cols.to_be_bytes());
        bytes.extend_from_slice(pixels);
        bytes
    }

    #[test]
    fn single_pixel_image_scales_to_one() {
        let t = parse_idx_images(&image_bytes(1, 1, 1, &[255])).unwrap();
        assert_eq!(t.shape(), (1, 1, 1, 1));
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn labels_pass_through() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 9]);
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut bytes = image_bytes(1, 1, 1, &[0]);
        bytes[3] = 0x99;
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_pixels_name_the_end_offset() {
        let bytes = image_bytes(2, 2, 2, &[1, 2, 3]);
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pixel_order_is_row_major() {
        let t = parse_idx_images(&image_bytes(1, 2, 3, &[0, 51, 102, 153, 204, 255])).unwrap();
        assert_eq!(t.get(0, 0, 1, 0), 51.0 / 255.0);
        assert_eq!(t.get(0, 1, 0, 0), 153.0 / 255.0);
        assert_eq!(t.get(0, 1, 2, 0), 1.0);
    }
}
