//! IDX file ingestion (the MNIST/USPS container format) and a matching
//! writer used by the digit-proxy generator and tests.
//!
//! Images: magic 0x00000803, big-endian dims [n, rows, cols], u8 pixels.
//! Labels: magic 0x00000801, big-endian dims [n], u8 labels.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteReader {
    bytes: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn open(path: &Path) -> Result<Self> {
        Ok(ByteReader {
            bytes: std::fs::read(path)?,
            pos: 0,
        })
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: "truncated: expected 4-byte big-endian integer".into(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn read_bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                detail: format!(
                    "truncated: need {} more bytes",
                    self.pos + n - self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Area-average resample of one grayscale image to `out x out`.
/// Weights are exact pixel-overlap fractions, so a constant image stays
/// exactly constant.
pub(crate) fn area_downsample(src: &[f64], rows: usize, cols: usize, out: usize) -> Vec<f64> {
    let mut dst = vec![0.0; out * out];
    let ry = rows as f64 / out as f64;
    let rx = cols as f64 / out as f64;
    for oy in 0..out {
        let y0 = oy as f64 * ry;
        let y1 = (oy + 1) as f64 * ry;
        for ox in 0..out {
            let x0 = ox as f64 * rx;
            let x1 = (ox + 1) as f64 * rx;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            let mut py = y0.floor() as usize;
            while (py as f64) < y1 && py < rows {
                let wy = (y1.min((py + 1) as f64) - y0.max(py as f64)).max(0.0);
                if wy > 0.0 {
                    let mut px = x0.floor() as usize;
                    while (px as f64) < x1 && px < cols {
                        let wx = (x1.min((px + 1) as f64) - x0.max(px as f64)).max(0.0);
                        if wx > 0.0 {
                            let w = wy * wx;
                            acc += w * src[py * cols + px];
                            wsum += w;
                        }
                        px += 1;
                    }
                }
                py += 1;
            }
            dst[oy * out + ox] = acc / wsum;
        }
    }
    dst
}

/// Load an IDX image/label pair as rows scaled to [0, 1], optionally
/// area-averaged down to 16x16, truncated to the first `limit` examples.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    downsample_to_16: bool,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let mut ir = ByteReader::open(images_path)?;
    let magic = ir.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad images magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let n_img = ir.read_u32()? as usize;
    let rows = ir.read_u32()? as usize;
    let cols = ir.read_u32()? as usize;

    let mut lr = ByteReader::open(labels_path)?;
    let magic = lr.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad labels magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        });
    }
    let n_lab = lr.read_u32()? as usize;
    if n_img != n_lab {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{n_img} images but {n_lab} labels"),
        });
    }

    let n = limit.map_or(n_img, |l| l.min(n_img));
    let d = if downsample_to_16 { 256 } else { rows * cols };
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = ir.read_bytes(rows * cols)?;
        let img: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
        if downsample_to_16 {
            x.extend(area_downsample(&img, rows, cols, 16));
        } else {
            x.extend(img);
        }
        let label = lr.read_bytes(1)?[0] as usize;
        y.push(label);
    }
    let num_classes = y.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(n, d, x, y, num_classes)
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::contract(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(img);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}
