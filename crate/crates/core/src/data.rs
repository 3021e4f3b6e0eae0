//! IDX image/label files, labeled datasets, shuffled mini-batches and a
//! synthetic 28×28 ten-class generator for runs without real data.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, RngStream};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX payload with its dimension list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX file whose magic must equal `expected_magic`. The magic's low
/// byte is the dimension count; the data type byte must be `0x08` (unsigned byte).
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "IDX magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|k| be_u32(bytes, 4 + 4 * k))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::Length {
            expected: header + count,
            found: bytes.len(),
        });
    }
    if payload.len() > count {
        return Err(Error::Format(format!(
            "{} trailing bytes after IDX payload",
            payload.len() - count
        )));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: payload.to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic.to_be_bytes());
    for d in &array.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Images as an `n × (rows·cols)` matrix, row-major pixels scaled by 1/255.
pub fn read_idx_images(bytes: &[u8]) -> Result<DenseMatrix<f64>> {
    let arr = parse_idx(bytes, IMAGE_MAGIC)?;
    let n = arr.dims[0] as usize;
    let pixels = (arr.dims[1] * arr.dims[2]) as usize;
    DenseMatrix::new(
        n,
        pixels,
        arr.data.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    Ok(parse_idx(bytes, LABEL_MAGIC)?.data)
}

pub fn write_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    write_idx(&IdxArray {
        magic: IMAGE_MAGIC,
        dims: vec![n, rows, cols],
        data: pixels.to_vec(),
    })
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    write_idx(&IdxArray {
        magic: LABEL_MAGIC,
        dims: vec![labels.len() as u32],
        data: labels.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DenseMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: DenseMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dims("LabeledDataset", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Format(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        if !features.as_slice().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Format("feature values must lie in [0, 1]".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            classes,
        })
    }

    /// Ten-class dataset from IDX image and label bytes.
    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let features = read_idx_images(images)?;
        let labels = read_idx_labels(labels)?
            .into_iter()
            .map(usize::from)
            .collect();
        LabeledDataset::new(features, labels, 10)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &DenseMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// The first `n` samples (all of them when `n` exceeds the length).
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let cols = self.features.cols();
        LabeledDataset {
            features: DenseMatrix::new(n, cols, self.features.as_slice()[..n * cols].to_vec())
                .expect("prefix of a valid matrix"),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Rows `idx` as a `len(idx) × pixels` matrix plus their labels.
    pub fn gather(&self, idx: &[usize]) -> (DenseMatrix<f64>, Vec<usize>) {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        (
            DenseMatrix::new(idx.len(), cols, data).expect("gathered rows"),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// One epoch of index batches: a seeded shuffle cut into chunks of
/// `batch_size`, the last one possibly shorter.
pub fn batch_iter<R: Rng + ?Sized>(
    len: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

const SIDE: usize = 28;

/// Ten stroke-drawn 28×28 class prototypes; samples are prototypes shifted by
/// up to two pixels, dimmed by a factor in `[0.7, 1]`, with Gaussian pixel noise
/// of std 0.1, clamped to `[0, 1]`. Labels are uniform over the classes.
pub fn synthetic_digits(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = RngStream::new(seed, 0).rng();
    let prototypes: Vec<Vec<f64>> = (0..10).map(|_| stroke_prototype(&mut rng)).collect();
    let mut rng = RngStream::new(seed, 1).rng();
    let normal = rand_distr::Normal::new(0.0, 0.1).expect("valid std");
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..10);
        let dy = rng.random_range(-2i64..=2);
        let dx = rng.random_range(-2i64..=2);
        let dim = rng.random_range(0.7..1.0);
        let proto = &prototypes[class];
        for r in 0..SIDE {
            for c in 0..SIDE {
                let sr = (r as i64 - dy).rem_euclid(SIDE as i64) as usize;
                let sc = (c as i64 - dx).rem_euclid(SIDE as i64) as usize;
                let noise: f64 = rng.sample(normal);
                data.push((proto[sr * SIDE + sc] * dim + noise).clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(
        DenseMatrix::new(n, SIDE * SIDE, data).expect("sized"),
        labels,
        10,
    )
    .expect("values clamped and labels in range")
}

/// Three connected strokes between random points in the central region, each
/// rendered as a chain of Gaussian blobs.
fn stroke_prototype<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.random_range(7.0..21.0), rng.random_range(7.0..21.0)))
        .collect();
    let mut img = vec![0.0; SIDE * SIDE];
    let width = 2.0 * 1.2f64 * 1.2;
    for seg in pts.windows(2) {
        let ((ay, ax), (by, bx)) = (seg[0], seg[1]);
        for s in 0..12 {
            let t = s as f64 / 11.0;
            let (cy, cx) = (ay + (by - ay) * t, ax + (bx - ax) * t);
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    img[r * SIDE + c] += (-d2 / width).exp();
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.min(1.0));
    img
}
