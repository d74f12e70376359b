//! Datasets, MNIST IDX ingestion and seeded mini-batch iteration.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for images,
//! `0x00000801` for labels), then one `u32` per dimension, then the raw
//! unsigned bytes. Pixels are rescaled to `[0, 1]` by dividing by 255.

use std::path::Path;

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng::SplitMix64;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Decoded IDX image file; `pixels` is `n × (rows·cols)`, rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: DenseMatrix,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.rows()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            offset,
            reason: format!("header truncated ({} bytes available)", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Idx {
            offset: 0,
            reason: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    match bytes.len().checked_sub(start) {
        Some(avail) if avail >= len => {
            if avail > len {
                return Err(Error::Idx {
                    offset: start + len,
                    reason: format!("{} trailing bytes after payload", avail - len),
                });
            }
            Ok(&bytes[start..start + len])
        }
        _ => Err(Error::Idx {
            offset: bytes.len(),
            reason: format!("payload truncated: expected {len} bytes from offset {start}"),
        }),
    }
}

pub fn load_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let raw = payload(bytes, 16, n * rows * cols)?;
    let data = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        rows,
        cols,
        pixels: DenseMatrix::new(n, rows * cols, data)?,
    })
}

pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let raw = payload(bytes, 8, n)?;
    raw.iter()
        .enumerate()
        .map(|(i, &b)| {
            if usize::from(b) >= MNIST_CLASSES {
                Err(Error::Idx {
                    offset: 8 + i,
                    reason: format!("label {b} outside 0..{MNIST_CLASSES}"),
                })
            } else {
                Ok(usize::from(b))
            }
        })
        .collect()
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::InvalidArgument(format!(
            "{} pixel bytes do not tile {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Bytes divided by 255.
    UnitInterval,
    /// Every example scaled by one common factor into the unit ball.
    UnitBall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub source: String,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        inputs: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape {
                op: "Dataset::new",
                detail: format!("{} inputs but {} labels", inputs.rows(), labels.len()),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} at {i} outside 0..{num_classes}",
                labels[i]
            )));
        }
        ensure_finite("dataset inputs", inputs.as_slice())?;
        Ok(Self {
            inputs,
            labels,
            num_classes,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// The first `limit` examples (or all of them).
    pub fn head(&self, limit: usize) -> Dataset {
        if limit >= self.len() {
            return self.clone();
        }
        let cols = self.dim();
        Dataset {
            inputs: DenseMatrix::new(limit, cols, self.inputs.as_slice()[..limit * cols].to_vec())
                .expect("prefix of a valid matrix"),
            labels: self.labels[..limit].to_vec(),
            num_classes: self.num_classes,
            meta: self.meta.clone(),
        }
    }

    /// Gathers the listed examples into a batch, in order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let cols = self.dim();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            targets.push(self.labels[i]);
        }
        Batch {
            inputs: DenseMatrix::new(indices.len(), cols, data).expect("rows of a valid matrix"),
            targets,
        }
    }

    pub fn from_idx(images: IdxImages, labels: Vec<usize>, source: &str) -> Result<Self> {
        Self::new(
            images.pixels,
            labels,
            MNIST_CLASSES,
            DatasetMeta {
                source: source.to_string(),
                normalization: Normalization::UnitInterval,
            },
        )
    }
}

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = load_idx_images(&read_file(images)?)?;
    let labs = load_idx_labels(&read_file(labels)?)?;
    Dataset::from_idx(imgs, labs, &images.display().to_string())
}

/// Loads `(train, test)` from a directory holding the four uncompressed MNIST files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx_dataset(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?;
    let test = load_idx_dataset(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))?;
    Ok((train, test))
}

/// Gaussian class-conditional features, scaled by one common factor so that
/// every example satisfies `‖x‖₂ ≤ 1`.
pub fn synth_classification(n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 || classes == 0 {
        return Err(Error::InvalidArgument(format!(
            "synth_classification needs n, dim, classes >= 1 (got {n}, {dim}, {classes})"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let y = rng.below(classes as u64) as usize;
        labels.push(y);
        data.extend(means[y].iter().map(|m| m + rng.normal()));
    }
    let max_norm = data
        .chunks_exact(dim)
        .map(crate::numerics::norm)
        .fold(0.0, f64::max);
    if max_norm > 1.0 {
        for x in &mut data {
            *x /= max_norm;
        }
    }
    Dataset::new(
        DenseMatrix::new(n, dim, data)?,
        labels,
        classes,
        DatasetMeta {
            source: format!("synthetic(n={n}, dim={dim}, classes={classes}, seed={seed})"),
            normalization: Normalization::UnitBall,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, targets: Vec<usize>) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::Shape {
                op: "Batch::new",
                detail: format!("{} rows but {} targets", inputs.rows(), targets.len()),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// One epoch's shuffled visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
    permutation: Vec<usize>,
}

impl BatchPlan {
    /// Without-replacement order for `epoch`, a pure function of `(seed, epoch)`.
    pub fn new(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch_size {batch_size} exceeds dataset size {n}"
            )));
        }
        let mut permutation: Vec<usize> = (0..n).collect();
        SplitMix64::for_stream(seed, epoch).shuffle(&mut permutation);
        Ok(Self {
            batch_size,
            seed,
            epoch,
            permutation,
        })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn num_batches(&self) -> usize {
        self.permutation.len().div_ceil(self.batch_size)
    }

    /// Index chunks in visiting order; the last one may be short.
    pub fn chunks(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.permutation.chunks(self.batch_size)
    }
}

/// Materializes the batches of one epoch lazily.
pub fn batch_iter<'a>(ds: &'a Dataset, plan: &'a BatchPlan) -> Result<impl Iterator<Item = Batch> + 'a> {
    if plan.permutation.len() != ds.len() {
        return Err(Error::Shape {
            op: "batch_iter",
            detail: format!("plan covers {} examples, dataset has {}", plan.permutation.len(), ds.len()),
        });
    }
    Ok(plan.chunks().map(move |idx| ds.gather(idx)))
}
