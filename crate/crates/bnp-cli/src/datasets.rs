//! Dataset loading for the CLI: locates files under the dataset directory
//! and applies the desk-scale subsets.

use crate::config::{DatasetKind, RunConfig};
use bnp_core::data::{load_cifar10_bin, load_idx_images, load_idx_labels, synth_illconditioned};
use bnp_core::data::{Dataset, Inputs};
use bnp_core::error::{Error, Result};
use bnp_core::linalg::Rng;
use bnp_core::nn::tensor::Tensor4;
use std::path::{Path, PathBuf};

fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for name in names {
        let candidate = dir.join(name);
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::Config(format!(
        "missing dataset file: looked for {:?} under {}",
        names,
        dir.display()
    )))
}

fn load_mnist_part(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let mnist_dir = if dir.join("mnist").is_dir() {
        dir.join("mnist")
    } else {
        dir.to_path_buf()
    };
    let images = load_idx_images(&find_file(&mnist_dir, &[images])?)?;
    let labels = load_idx_labels(&find_file(&mnist_dir, &[labels])?)?;
    if images.batch() != labels.len() {
        return Err(Error::Config(format!(
            "MNIST image/label count mismatch: {} vs {}",
            images.batch(),
            labels.len()
        )));
    }
    Ok(Dataset {
        inputs: Inputs::Images(images),
        labels,
        num_classes: 10,
    })
}

fn load_cifar_parts(dir: &Path, files: &[&str]) -> Result<Dataset> {
    let cifar_dir = if dir.join("cifar-10-batches-bin").is_dir() {
        dir.join("cifar-10-batches-bin")
    } else {
        dir.to_path_buf()
    };
    let mut all_images: Option<Tensor4> = None;
    let mut all_labels = Vec::new();
    for file in files {
        let (images, labels) = load_cifar10_bin(&find_file(&cifar_dir, &[file])?)?;
        all_labels.extend(labels);
        all_images = Some(match all_images {
            None => images,
            Some(prev) => {
                let (n1, r, s, c) = prev.shape();
                let (n2, ..) = images.shape();
                let mut data = prev.data().to_vec();
                data.extend_from_slice(images.data());
                Tensor4::from_data(n1 + n2, r, s, c, data)?
            }
        });
    }
    Ok(Dataset {
        inputs: Inputs::Images(all_images.expect("at least one file")),
        labels: all_labels,
        num_classes: 10,
    })
}

/// Returns `(train, test)` with subsets applied unless `full_set`.
pub fn load_train_test(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => (
            load_mnist_part(
                &cfg.dataset_dir,
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
            )?,
            load_mnist_part(
                &cfg.dataset_dir,
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            )?,
        ),
        DatasetKind::Cifar10 => {
            let train_files: &[&str] = if cfg.full_set {
                &[
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ]
            } else {
                &["data_batch_1.bin"]
            };
            (
                load_cifar_parts(&cfg.dataset_dir, train_files)?,
                load_cifar_parts(&cfg.dataset_dir, &["test_batch.bin"])?,
            )
        }
        DatasetKind::Synth => {
            let train = synth_illconditioned(
                cfg.synth_features,
                cfg.synth_size,
                cfg.synth_scale_decades,
                Rng::derive_seed(cfg.seed, "synth-train"),
            );
            let test = synth_illconditioned(
                cfg.synth_features,
                cfg.synth_size / 5,
                cfg.synth_scale_decades,
                Rng::derive_seed(cfg.seed, "synth-test"),
            );
            return Ok((train, test));
        }
    };
    if cfg.full_set {
        Ok((train, test))
    } else {
        // Strided subsampling keeps the desk-scale subsets representative
        // of the full corpora.
        Ok((
            train.take_strided(cfg.subset_train),
            test.take_strided(cfg.subset_test),
        ))
    }
}
