//! Reader for IDX unsigned-byte image files (`[count, rows, cols]`).

use std::path::Path;

use sssa_core::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, image after image.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxImages> {
    if bytes.len() < 16 {
        return Err(Error::Config(format!("IDX file too short: {} bytes", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(Error::Config(format!(
            "IDX magic {magic:#010x} is not {IMAGE_MAGIC:#010x} (3-D unsigned bytes)"
        )));
    }
    let (count, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    let expected = count * rows * cols;
    if bytes.len() - 16 != expected {
        return Err(Error::Config(format!(
            "IDX header promises {expected} pixels, file holds {}",
            bytes.len() - 16
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxImages> {
    parse_idx(&std::fs::read(path)?)
}

/// Serialises images in the same layout; used to produce fixtures.
pub fn encode_idx(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}
