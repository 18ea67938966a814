//! CIFAR-10 binary format: 3073-byte records, one label byte followed by
//! 3072 pixel bytes in channel-planar order (1024 red, 1024 green, 1024
//! blue, each plane row-major 32x32). Pixels scale to [0, 1].

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor4;
use std::path::Path;

const RECORD: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

pub fn load_cifar10_bin(path: &Path) -> Result<(Tensor4, Vec<usize>)> {
    let bytes = std::fs::read(path)?;
    parse_cifar10_bin(&bytes)
}

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<(Tensor4, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Parse {
            context: "CIFAR-10 binary file",
            message: format!("length {} is not a positive multiple of {RECORD}", bytes.len()),
            offset: bytes.len() - bytes.len() % RECORD,
        });
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut images = Tensor4::zeros(n, SIDE, SIDE, 3);
    for i in 0..n {
        let rec = &bytes[i * RECORD..(i + 1) * RECORD];
        labels.push(rec[0] as usize);
        for ch in 0..3 {
            let plane = &rec[1 + ch * PLANE..1 + (ch + 1) * PLANE];
            for y in 0..SIDE {
                for x in 0..SIDE {
                    images.set(i, y, x, ch, f64::from(plane[y * SIDE + x]) / 255.0);
                }
            }
        }
    }
    Ok((images, labels))
}
