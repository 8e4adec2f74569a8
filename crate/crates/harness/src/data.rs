//! Loads the configured dataset and fits preprocessing on its training split.

use std::path::{Path, PathBuf};

use hingenet_core::dataio::{load_cifar10_bin, load_idx, make_blobs, Dataset, Split};
use hingenet_core::preprocess::{pca_fit, PixelStandardizer};
use hingenet_core::{RunRng, Tensor};
use rand::SeedableRng;

use crate::config::{DatasetKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::model::Preprocessing;

/// Train and test splits after preprocessing, plus the fitted transforms
/// so a saved model can replay them on raw input.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
    /// Per-example shape the first layer sees.
    pub input_shape: Vec<usize>,
}

/// Raw (unpreprocessed) splits for the configured dataset.
pub fn load_raw(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match config.dataset {
        DatasetKind::Mnist => {
            let path = |explicit: &Option<PathBuf>, name: &str| {
                explicit.clone().unwrap_or_else(|| resolve(&config.data_dir, name))
            };
            let train = load_idx(
                path(&config.train_images, "train-images-idx3-ubyte"),
                path(&config.train_labels, "train-labels-idx1-ubyte"),
                Split::Train,
            )?;
            let test = load_idx(
                path(&config.test_images, "t10k-images-idx3-ubyte"),
                path(&config.test_labels, "t10k-labels-idx1-ubyte"),
                Split::Test,
            )?;
            (train, test)
        }
        DatasetKind::Cifar10 => {
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| config.data_dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let train = load_cifar10_bin(&batches, Split::Train)?;
            let test = load_cifar10_bin(&[config.data_dir.join("test_batch.bin")], Split::Test)?;
            (train, test)
        }
        DatasetKind::Blobs => {
            // One draw so both splits share cluster centres; rows alternate
            // by class, so a prefix split stays balanced.
            let mut rng = RunRng::seed_from_u64(config.data_seed());
            let all = make_blobs(
                config.blobs_train + config.blobs_test,
                config.classes,
                config.blobs_dim,
                config.blobs_separation,
                &mut rng,
            )?;
            let train_idx: Vec<usize> = (0..config.blobs_train).collect();
            let test_idx: Vec<usize> = (config.blobs_train..all.len()).collect();
            let mut test = all.subset(&test_idx)?;
            test.split = Split::Test;
            (all.subset(&train_idx)?, test)
        }
    };
    let train = take_prefix(train, config.train_subset)?;
    let test = take_prefix(test, config.test_subset)?;
    for ds in [&train, &test] {
        if let Some(&bad) = ds.labels.iter().find(|&&y| y >= config.classes) {
            return Err(HarnessError::config(format!(
                "{} split has label {bad} but classes = {}",
                ds.split, config.classes
            )));
        }
    }
    let with_k = |mut d: Dataset| {
        d.num_classes = config.classes;
        d
    };
    Ok((with_k(train), with_k(test)))
}

/// Prefers the plain file, falling back to a `.gz` sibling.
fn resolve(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

fn take_prefix(ds: Dataset, n: usize) -> Result<Dataset> {
    if n == 0 || n >= ds.len() {
        return Ok(ds);
    }
    Ok(ds.subset(&(0..n).collect::<Vec<_>>())?)
}

/// Loads the dataset, fits the configured preprocessing on the training
/// split and applies it to both splits.
pub fn prepare(config: &RunConfig) -> Result<PreparedData> {
    let (train, test) = load_raw(config)?;
    prepare_from(config, train, test)
}

pub fn prepare_from(config: &RunConfig, train: Dataset, test: Dataset) -> Result<PreparedData> {
    let raw_shape: Vec<usize> = train.inputs.shape()[1..].to_vec();
    let mut pre = Preprocessing {
        face_normalize: config.face_normalize,
        ..Preprocessing::default()
    };
    let mut x = train.flattened();
    if pre.face_normalize {
        x = pre.apply(&x)?;
    }
    if config.standardize {
        let s = PixelStandardizer::fit(&x)?;
        x = s.apply(&x)?;
        pre.standardizer = Some(s);
    }
    let pca_dims = config.effective_pca_dims();
    if pca_dims > 0 {
        pre.pca = Some(pca_fit(&x, pca_dims)?);
    }
    let natural_shape = if pca_dims > 0 { vec![pca_dims] } else { raw_shape };
    let input_shape = match &config.input_shape {
        Some(s) if s.iter().product::<usize>() != natural_shape.iter().product::<usize>() => {
            return Err(HarnessError::config(format!(
                "input_shape {s:?} does not match the preprocessed data shape {natural_shape:?}"
            )))
        }
        Some(s) => s.clone(),
        None => natural_shape,
    };
    let apply = |d: Dataset| -> Result<Dataset> {
        let inputs: Tensor = pre.apply(&d.flattened())?;
        Ok(Dataset { inputs, ..d })
    };
    Ok(PreparedData {
        train: apply(train)?,
        test: apply(test)?,
        preprocessing: pre.clone(),
        input_shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs_config(extra: &str) -> RunConfig {
        RunConfig::parse(&format!("dataset = blobs\nblobs_train = 40\nblobs_test = 20\nclasses = 4\nblobs_dim = 3\n{extra}")).unwrap()
    }

    #[test]
    fn blob_splits_share_centres_and_stay_balanced() {
        let d = prepare(&blobs_config("")).unwrap();
        assert_eq!(d.train.len(), 40);
        assert_eq!(d.test.len(), 20);
        assert_eq!(d.input_shape, vec![3]);
        for c in 0..4 {
            assert_eq!(d.train.labels.iter().filter(|&&y| y == c).count(), 10);
            assert_eq!(d.test.labels.iter().filter(|&&y| y == c).count(), 5);
        }
        assert!(d.preprocessing.is_identity());
    }

    #[test]
    fn data_seed_decouples_data_from_training_seed() {
        let a = prepare(&blobs_config("seed = 1\ndata_seed = 5")).unwrap();
        let b = prepare(&blobs_config("seed = 2\ndata_seed = 5")).unwrap();
        assert_eq!(a.train.inputs, b.train.inputs);
        let c = prepare(&blobs_config("seed = 2")).unwrap();
        assert_ne!(a.train.inputs, c.train.inputs);
    }

    #[test]
    fn preprocessing_is_fit_on_train_and_replayed() {
        let d = prepare(&blobs_config("standardize = true\npca_dims = 2")).unwrap();
        assert_eq!(d.input_shape, vec![2]);
        assert_eq!(d.train.inputs.shape(), &[40, 2]);
        let (raw_train, _) = load_raw(&blobs_config("")).unwrap();
        let replay = d.preprocessing.apply(&raw_train.inputs).unwrap();
        assert_eq!(replay, d.train.inputs);
    }

    #[test]
    fn input_shape_must_match_data() {
        assert!(prepare(&blobs_config("input_shape = 4")).is_err());
        assert_eq!(prepare(&blobs_config("input_shape = 1x3x1")).unwrap().input_shape, vec![1, 3, 1]);
    }

    #[test]
    fn subset_takes_a_prefix() {
        let d = prepare(&blobs_config("train_subset = 8")).unwrap();
        assert_eq!(d.train.labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }
}
