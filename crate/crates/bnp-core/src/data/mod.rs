//! Dataset ingestion and deterministic mini-batch iteration.

mod cache;
mod cifar;
mod idx;
mod synth;

pub use cache::{load_cache, save_cache};
pub use cifar::load_cifar10_bin;
pub use idx::{load_idx_images, load_idx_labels};
pub use synth::synth_illconditioned;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nn::tensor::Tensor4;

/// Input storage: flat feature rows for tabular data, image tensors for
/// pixel data. MLPs flatten image tensors at batch assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Flat(Matrix),
    Images(Tensor4),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Flat(m) => m.rows(),
            Inputs::Images(t) => t.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_count(&self) -> usize {
        match self {
            Inputs::Flat(m) => m.cols(),
            Inputs::Images(t) => {
                let (_, r, s, c) = t.shape();
                r * s * c
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` examples, in order.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// `n` examples strided evenly across the whole set (index
    /// `floor(i * len / n)`), giving a representative deterministic
    /// subsample of an ordered corpus.
    pub fn take_strided(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        if n == 0 {
            return self.select(&[]);
        }
        let indices: Vec<usize> = (0..n).map(|i| i * self.len() / n).collect();
        self.select(&indices)
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        let inputs = match &self.inputs {
            Inputs::Flat(m) => {
                Inputs::Flat(Matrix::from_fn(indices.len(), m.cols(), |r, c| {
                    m.get(indices[r], c)
                }))
            }
            Inputs::Images(t) => {
                let (_, r, s, c) = t.shape();
                Inputs::Images(Tensor4::from_fn(indices.len(), r, s, c, |i, y, x, p| {
                    t.get(indices[i], y, x, p)
                }))
            }
        };
        Dataset {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// A mini-batch by explicit indices; flattens images when `flatten` is
    /// set (for MLPs on pixel data).
    pub fn gather(&self, indices: &[usize], flatten: bool) -> (BatchInputs, Vec<usize>) {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let inputs = match &self.inputs {
            Inputs::Flat(m) => {
                BatchInputs::Flat(Matrix::from_fn(indices.len(), m.cols(), |r, c| {
                    m.get(indices[r], c)
                }))
            }
            Inputs::Images(t) => {
                let (_, r, s, c) = t.shape();
                let gathered = Tensor4::from_fn(indices.len(), r, s, c, |i, y, x, p| {
                    t.get(indices[i], y, x, p)
                });
                if flatten {
                    BatchInputs::Flat(gathered.flatten())
                } else {
                    BatchInputs::Images(gathered)
                }
            }
        };
        (inputs, labels)
    }
}

#[derive(Debug, Clone)]
pub enum BatchInputs {
    Flat(Matrix),
    Images(Tensor4),
}

/// Deterministic shuffled mini-batch index iterator. The order for a given
/// `(seed, epoch)` pair never changes; a full epoch visits every sample
/// exactly once (up to `drop_last`).
#[derive(Debug, Clone)]
pub struct BatchIterator {
    dataset_len: usize,
    batch_size: usize,
    seed: u64,
    pub drop_last: bool,
}

impl BatchIterator {
    pub fn new(dataset_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > dataset_len {
            return Err(Error::BatchTooLarge {
                requested: batch_size,
                available: dataset_len,
            });
        }
        Ok(Self {
            dataset_len,
            batch_size,
            seed,
            drop_last: false,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        if self.drop_last {
            self.dataset_len / self.batch_size
        } else {
            self.dataset_len.div_ceil(self.batch_size)
        }
    }

    /// Index batches for one epoch.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut indices: Vec<usize> = (0..self.dataset_len).collect();
        let mut rng = Rng::new(Rng::derive_seed(self.seed, &format!("epoch-{epoch}")));
        rng.shuffle(&mut indices);
        let mut out = Vec::with_capacity(self.batches_per_epoch());
        for chunk in indices.chunks(self.batch_size) {
            if self.drop_last && chunk.len() < self.batch_size {
                break;
            }
            out.push(chunk.to_vec());
        }
        out
    }
}
