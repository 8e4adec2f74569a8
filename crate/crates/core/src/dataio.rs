//! Dataset ingestion and batching.
//!
//! IDX files (the MNIST distribution format) are read either raw or
//! gzip-compressed: a 4-byte big-endian magic (2051 for images, 2049 for
//! labels), big-endian dimension sizes, then an unsigned-byte payload.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N × D]` or `[N × C × H × W]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain("Dataset::new", format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows in the given order, keeping the split tag.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    /// Inputs flattened to `[N × D]`.
    pub fn flattened(&self) -> Tensor {
        let (n, d) = (self.inputs.rows(), self.inputs.row_len());
        self.inputs.clone().reshape(&[n, d]).expect("same element count")
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Header dimensions and payload of an IDX file with the expected magic.
fn parse_idx(path: &Path, expected_magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: expected_magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, bytes[header..expected].to_vec()))
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` and the
/// images flattened to `[N × rows·cols]`; labels must be below 256.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images_path.as_ref(), IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(labels_path.as_ref(), IDX_LABELS_MAGIC)?;
    if idims.len() != 3 || ldims.len() != 1 {
        return Err(Error::invalid_shape(
            "load_idx",
            format!("expected 3-d images and 1-d labels, got {idims:?} and {ldims:?}"),
        ));
    }
    let (n_img, n_lab) = (idims[0], ldims[0]);
    if n_img != n_lab {
        return Err(Error::CountMismatch {
            images: n_img,
            labels: n_lab,
        });
    }
    let d = idims[1] * idims[2];
    let inputs = Tensor::new(&[n_img, d], pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    Dataset::new(inputs, labels, num_classes, split)
}

fn write_idx(path: &Path, magic: u32, dims: &[usize], payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::domain("write_idx", format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `n` images of `rows × cols` unsigned bytes.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::domain("write_idx_images", "payload is not a whole number of images"));
    }
    let n = pixels.len() / (rows * cols);
    write_idx(path.as_ref(), IDX_IMAGES_MAGIC, &[n, rows, cols], pixels)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    write_idx(path.as_ref(), IDX_LABELS_MAGIC, &[labels.len()], labels)
}

/// Reads CIFAR-10 binary batches (`1 label byte + 3072 pixel bytes` per
/// record) into `[N × 3 × 32 × 32]`, pixels scaled to `[0, 1]`.
pub fn load_cifar10_bin(paths: &[impl AsRef<Path>], split: Split) -> Result<Dataset> {
    const RECORD: usize = 1 + 3 * 32 * 32;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Truncated {
                path: p.to_path_buf(),
                expected: bytes.len().div_ceil(RECORD).max(1) * RECORD,
                found: bytes.len(),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(usize::from(rec[0]));
            pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::domain("load_cifar10_bin", "no input files"));
    }
    Dataset::new(Tensor::new(&[n, 3, 32, 32], pixels)?, labels, 10, split)
}

/// `k` Gaussian clusters (unit std) in `dim` dimensions with centres at
/// least `separation` apart, `n / k` points each (the first `n % k` classes
/// get one extra). Rows are interleaved by class.
pub fn make_blobs<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    dim: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if k < 2 || n < k || dim == 0 {
        return Err(Error::domain("make_blobs", format!("need K >= 2, N >= K, D >= 1 (N={n}, K={k}, D={dim})")));
    }
    let centres = blob_centres(k, dim, separation, rng);
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        labels.push(y);
        inputs.extend(centres[y].iter().map(|&c| c + Distribution::<f64>::sample(&StandardNormal, rng)));
    }
    Dataset::new(Tensor::new(&[n, dim], inputs)?, labels, k, Split::Train)
}

fn blob_centres<R: Rng + ?Sized>(k: usize, dim: usize, separation: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if dim >= k {
        // Scaled simplex corners, randomly signed: pairwise distance is
        // exactly `separation` whatever the signs.
        let scale = separation / 2f64.sqrt();
        return (0..k)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[c] = if rng.random::<bool>() { scale } else { -scale };
                v
            })
            .collect();
    }
    // Rejection sampling in a box that grows until K centres fit.
    let mut half = separation * k as f64;
    loop {
        let mut centres: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..1000 {
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..=half)).collect();
            let far = centres.iter().all(|c| {
                c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if far {
                centres.push(cand);
                if centres.len() == k {
                    return centres;
                }
            }
        }
        half *= 2.0;
    }
}

/// One epoch's shuffled partition of `0..n` into batches of `batch_size`;
/// the final batch may be short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub permutation: Vec<usize>,
    pub batch_size: usize,
}

impl MinibatchPlan {
    pub fn num_batches(&self) -> usize {
        self.permutation.len().div_ceil(self.batch_size)
    }

    pub fn batches(&self) -> std::slice::Chunks<'_, usize> {
        self.permutation.chunks(self.batch_size)
    }
}

pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<MinibatchPlan> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::domain("minibatches", format!("batch size {batch_size} must lie in 1..={n}")));
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);
    Ok(MinibatchPlan {
        permutation,
        batch_size,
    })
}

/// Seeded k-fold partition: `(train, held_out)` index lists per fold. Fold
/// sizes differ by at most one.
pub fn kfold_indices<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::domain("kfold_indices", format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok((0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let held = perm[lo..hi].to_vec();
            let train = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
            (train, held)
        })
        .collect())
}
