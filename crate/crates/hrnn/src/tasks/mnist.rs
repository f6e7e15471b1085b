//! IDX image/label ingestion, area-mean downsampling, and fixed pixel
//! permutations for the sequential-pixel classification task.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One image presented pixel-by-pixel: values in [0,1], one per step.
#[derive(Clone, Debug)]
pub struct PixelSequence {
    pub pixels: Vec<f64>,
    pub label: usize,
}

/// Parse an IDX image file: magic 0x00000803, then count/rows/cols
/// (big-endian u32), then row-major u8 pixels.
pub fn read_idx_images(path: &Path) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| bad_idx(path, 0, "missing magic"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(bad_idx(path, 0, &format!("magic {magic:#010x}, expected 0x00000803")));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| bad_idx(path, 4, "missing count"))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(|_| bad_idx(path, 8, "missing rows"))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(|_| bad_idx(path, 12, "missing cols"))? as usize;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let mut img = vec![0u8; rows * cols];
        cur.read_exact(&mut img)
            .map_err(|_| bad_idx(path, 16 + i * rows * cols, "truncated image data"))?;
        images.push(img);
    }
    Ok((images, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| bad_idx(path, 0, "missing magic"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(bad_idx(path, 0, &format!("magic {magic:#010x}, expected 0x00000801")));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| bad_idx(path, 4, "missing count"))? as usize;
    let mut labels = vec![0u8; count];
    cur.read_exact(&mut labels)
        .map_err(|_| bad_idx(path, 8, "truncated label data"))?;
    Ok(labels)
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    out.write_u32::<BigEndian>(images.len() as u32)?;
    out.write_u32::<BigEndian>(rows as u32)?;
    out.write_u32::<BigEndian>(cols as u32)?;
    for img in images {
        debug_assert_eq!(img.len(), rows * cols);
        out.write_all(img)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    out.write_u32::<BigEndian>(labels.len() as u32)?;
    out.write_all(labels)?;
    std::fs::write(path, out)?;
    Ok(())
}

fn bad_idx(path: &Path, offset: usize, what: &str) -> Error {
    Error::Data(format!("{}: bad IDX at offset {offset}: {what}", path.display()))
}

/// Area-weighted mean pooling from (rows, cols) to (side, side); exact for
/// non-integer ratios. Output stays in [0,1] when the input does.
pub fn downsample_mean(img: &[f64], rows: usize, cols: usize, side: usize) -> Vec<f64> {
    if rows == side && cols == side {
        return img.to_vec();
    }
    let mut out = vec![0.0f64; side * side];
    let rr = rows as f64 / side as f64;
    let cc = cols as f64 / side as f64;
    for oi in 0..side {
        let r0 = oi as f64 * rr;
        let r1 = r0 + rr;
        for oj in 0..side {
            let c0 = oj as f64 * cc;
            let c1 = c0 + cc;
            let mut acc = 0.0;
            let mut area = 0.0;
            let mut r = r0.floor() as usize;
            while (r as f64) < r1 && r < rows {
                let r_olap = (r1.min((r + 1) as f64) - r0.max(r as f64)).max(0.0);
                let mut c = c0.floor() as usize;
                while (c as f64) < c1 && c < cols {
                    let c_olap = (c1.min((c + 1) as f64) - c0.max(c as f64)).max(0.0);
                    let w = r_olap * c_olap;
                    acc += w * img[r * cols + c];
                    area += w;
                    c += 1;
                }
                r += 1;
            }
            out[oi * side + oj] = if area > 0.0 { acc / area } else { 0.0 };
        }
    }
    out
}

/// Deterministic pixel-order permutation shared by every sequence.
pub fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Load IDX images+labels into pixel sequences: scale to [0,1], optionally
/// mean-pool to side x side (an artifact knob for small-scale runs: the
/// reference setting presents all 784 pixels), optionally apply one fixed
/// permutation to the presentation order.
pub fn load_mnist(
    images_path: &Path,
    labels_path: &Path,
    side: Option<usize>,
    permute_seed: Option<u64>,
) -> Result<Vec<PixelSequence>> {
    let (images, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    let seq_len = match side {
        Some(s) => s * s,
        None => rows * cols,
    };
    let perm = permute_seed.map(|s| permutation(seq_len, s));
    let mut out = Vec::with_capacity(images.len());
    for (img, &label) in images.iter().zip(&labels) {
        let scaled: Vec<f64> = img.iter().map(|&p| p as f64 / 255.0).collect();
        let mut pixels = match side {
            Some(s) => downsample_mean(&scaled, rows, cols, s),
            None => scaled,
        };
        if let Some(p) = &perm {
            pixels = p.iter().map(|&i| pixels[i]).collect();
        }
        out.push(PixelSequence {
            pixels,
            label: label as usize,
        });
    }
    Ok(out)
}

/// Stack B sequences into step-major (1, B) inputs plus final-step labels.
pub fn stack_pixel_batch<F: Real>(seqs: &[&PixelSequence]) -> (Vec<Tensor<F>>, Vec<usize>) {
    let batch = seqs.len();
    let t_len = seqs[0].pixels.len();
    let mut inputs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let values: Vec<F> = seqs.iter().map(|s| F::from_f64(s.pixels[t])).collect();
        inputs.push(if batch == 1 {
            Tensor::vector(values)
        } else {
            Tensor::matrix(1, batch, values)
        });
    }
    let labels = seqs.iter().map(|s| s.label).collect();
    (inputs, labels)
}
