//! Federated dataset construction: synthetic heterogeneous data, power-law
//! sample sizes, per-device 80/20 splits and CSV ingestion.
//!
//! The synthetic family is parameterized by `(alpha, beta)`: `alpha` scales
//! how much per-device labeling models differ, `beta` scales how much
//! per-device feature means differ. Larger values mean more heterogeneity.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::OpenClosed01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FedError, Result};
use crate::model::{argmax, ModelParams};
use crate::rng::{stream, stream2};

/// One labeled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// One device's local data, already split into train and test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceShard {
    pub device_id: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl DeviceShard {
    pub fn n_examples(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// Generation metadata echoed into outputs for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenMeta {
    pub alpha: f64,
    pub beta: f64,
    pub iid: bool,
    pub seed: u64,
    pub sizes: Vec<usize>,
}

/// A full federation: device shards plus the shared feature/classes schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub shards: Vec<DeviceShard>,
    pub dim: usize,
    pub classes: usize,
    pub gen_meta: Option<GenMeta>,
}

impl FederatedDataset {
    pub fn n_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn all_train(&self) -> impl Iterator<Item = &Example> {
        self.shards.iter().flat_map(|s| s.train.iter())
    }

    pub fn all_test(&self) -> impl Iterator<Item = &Example> {
        self.shards.iter().flat_map(|s| s.test.iter())
    }

    /// Content digest over every example, in canonical order. Two datasets
    /// with the same hash are identical to the last bit.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update((self.classes as u64).to_le_bytes());
        for shard in &self.shards {
            hasher.update((shard.device_id as u64).to_le_bytes());
            for part in [&shard.train, &shard.test] {
                hasher.update((part.len() as u64).to_le_bytes());
                for ex in part.iter() {
                    for &f in &ex.features {
                        hasher.update(f.to_le_bytes());
                    }
                    hasher.update((ex.label as u64).to_le_bytes());
                }
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Scale of per-device labeling-model heterogeneity.
    pub alpha: f64,
    /// Scale of per-device feature-mean heterogeneity.
    pub beta: f64,
    /// Share one labeling model and zero feature means across devices.
    pub iid: bool,
    pub n_devices: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    /// Minimum samples per device.
    pub s_min: usize,
    /// Pareto tail exponent for the per-device sample counts.
    pub pareto_shape: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            alpha: 1.0,
            beta: 1.0,
            iid: false,
            n_devices: 30,
            dim: 60,
            classes: 10,
            seed: 0,
            // A heavy Pareto tail is load-bearing: a few devices holding
            // thousands of samples is what drives client drift (and thus the
            // fairness gap) at desk scale.
            s_min: 150,
            pareto_shape: 1.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(FedError::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(FedError::InvalidParameter(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.n_devices < 1 {
            return Err(FedError::InvalidParameter("n_devices must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(FedError::InvalidParameter("dim must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(FedError::InvalidParameter("classes must be >= 2".into()));
        }
        if self.s_min < 2 {
            return Err(FedError::InvalidParameter("s_min must be >= 2".into()));
        }
        if !(self.pareto_shape > 0.0) {
            return Err(FedError::InvalidParameter(format!(
                "pareto_shape must be > 0, got {}",
                self.pareto_shape
            )));
        }
        Ok(())
    }
}

/// Pareto inverse-CDF sample size for one uniform draw `u` in `(0, 1]`.
pub fn power_law_size_from_u(s_min: usize, shape: f64, u: f64) -> usize {
    (s_min as f64 * u.powf(-1.0 / shape)).floor() as usize
}

/// Draws per-device sample counts from a Pareto tail: `floor(s_min * u^(-1/shape))`
/// with `u` uniform in `(0, 1]`, so every size is at least `s_min`.
pub fn power_law_sizes(
    n_devices: usize,
    s_min: usize,
    shape: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if n_devices < 1 {
        return Err(FedError::InvalidParameter("n_devices must be >= 1".into()));
    }
    if s_min < 2 {
        return Err(FedError::InvalidParameter("s_min must be >= 2".into()));
    }
    if !(shape > 0.0) {
        return Err(FedError::InvalidParameter(format!(
            "shape must be > 0, got {shape}"
        )));
    }
    Ok((0..n_devices)
        .map(|_| {
            let u: f64 = rng.sample(OpenClosed01);
            power_law_size_from_u(s_min, shape, u)
        })
        .collect())
}

/// Shuffles the examples and splits at `floor(ratio * n)`: the prefix becomes
/// the train side. Both sides must end up non-empty.
pub fn split_train_test(
    mut examples: Vec<Example>,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(FedError::InvalidParameter(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = examples.len();
    if n < 2 {
        return Err(FedError::DegenerateShard(format!(
            "cannot split {n} examples into non-empty train and test"
        )));
    }
    examples.shuffle(rng);
    let cut = (ratio * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(FedError::DegenerateShard(format!(
            "split ratio {ratio} leaves an empty side for {n} examples"
        )));
    }
    let test = examples.split_off(cut);
    Ok((examples, test))
}

/// Synthetic generation that also returns each device's labeling model, so
/// labels can be re-derived independently.
pub fn generate_synthetic_with_models(
    cfg: &SyntheticConfig,
) -> Result<(FederatedDataset, Vec<ModelParams>)> {
    cfg.validate()?;
    let mut sizes_rng = stream(cfg.seed, "sizes");
    let sizes = power_law_sizes(cfg.n_devices, cfg.s_min, cfg.pareto_shape, &mut sizes_rng)?;

    // Per-feature standard deviations: variance decays as (j+1)^-1.2, 1-based.
    let feature_std: Vec<f64> = (0..cfg.dim)
        .map(|j| ((j + 1) as f64).powf(-1.2).sqrt())
        .collect();

    let shared_model = if cfg.iid {
        let mut rng = stream(cfg.seed, "shared-model");
        Some(draw_label_model(cfg.dim, cfg.classes, 0.0, &mut rng))
    } else {
        None
    };

    let mut shards = Vec::with_capacity(cfg.n_devices);
    let mut models = Vec::with_capacity(cfg.n_devices);
    for (k, &size) in sizes.iter().enumerate() {
        let mut rng = stream2(cfg.seed, "device", k as u64, 0);
        let (label_model, feature_mean) = if cfg.iid {
            (shared_model.clone().expect("set above"), vec![0.0; cfg.dim])
        } else {
            let hyper_w = Normal::new(0.0, cfg.alpha).expect("validated alpha");
            let u_k: f64 = hyper_w.sample(&mut rng);
            let model = draw_label_model(cfg.dim, cfg.classes, u_k, &mut rng);
            let hyper_x = Normal::new(0.0, cfg.beta).expect("validated beta");
            let b_k: f64 = hyper_x.sample(&mut rng);
            let mean_dist = Normal::new(b_k, 1.0).expect("unit std");
            let mean = (0..cfg.dim).map(|_| mean_dist.sample(&mut rng)).collect();
            (model, mean)
        };

        let mut examples = Vec::with_capacity(size);
        for _ in 0..size {
            let features: Vec<f64> = feature_mean
                .iter()
                .zip(&feature_std)
                .map(|(&m, &s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect();
            let label = argmax(&label_model.logits(&features).expect("dims match"));
            examples.push(Example { features, label });
        }

        let mut split_rng = stream2(cfg.seed, "split", k as u64, 0);
        let (train, test) = split_train_test(examples, 0.8, &mut split_rng)?;
        if train.len() < 2 {
            return Err(FedError::DegenerateShard(format!(
                "device {k} would keep only {} train examples",
                train.len()
            )));
        }
        shards.push(DeviceShard {
            device_id: k,
            train,
            test,
        });
        models.push(label_model);
    }

    let dataset = FederatedDataset {
        shards,
        dim: cfg.dim,
        classes: cfg.classes,
        gen_meta: Some(GenMeta {
            alpha: cfg.alpha,
            beta: cfg.beta,
            iid: cfg.iid,
            seed: cfg.seed,
            sizes,
        }),
    };
    Ok((dataset, models))
}

/// Generates the synthetic federation described by `cfg`, fully determined
/// by `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FederatedDataset> {
    generate_synthetic_with_models(cfg).map(|(dataset, _)| dataset)
}

fn draw_label_model(dim: usize, classes: usize, mean: f64, rng: &mut ChaCha8Rng) -> ModelParams {
    let dist = Normal::new(mean, 1.0).expect("unit std");
    let mut params = ModelParams::zeros(dim, classes);
    for v in params.as_mut_slice() {
        *v = dist.sample(rng);
    }
    params
}

/// Loads a `f0..f{d-1},label,<device_column>` CSV and groups rows into device
/// shards, re-splitting each device with `split_ratio`. Original device ids
/// are remapped (in sorted order) onto contiguous ids starting at 0.
pub fn load_csv_dataset(
    path: &Path,
    dim: usize,
    classes: usize,
    device_column: &str,
    split_ratio: f64,
    split_seed: u64,
) -> Result<FederatedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => FedError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => FedError::SchemaMismatch(e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| FedError::SchemaMismatch(e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(FedError::SchemaMismatch("empty file".into()));
    }
    if headers.len() != dim + 2 {
        return Err(FedError::SchemaMismatch(format!(
            "expected {} columns (f0..f{}, label, {device_column}), found {}",
            dim + 2,
            dim - 1,
            headers.len()
        )));
    }
    let device_idx = headers
        .iter()
        .position(|h| h == device_column)
        .ok_or_else(|| FedError::UnknownDeviceColumn(device_column.to_string()))?;
    let label_idx = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| FedError::SchemaMismatch("missing `label` column".into()))?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != device_idx && i != label_idx)
        .collect();

    let mut groups: BTreeMap<u64, Vec<Example>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| FedError::SchemaMismatch(e.to_string()))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or_default();
        if record.len() != dim + 2 {
            return Err(FedError::CsvParse {
                line,
                msg: format!("expected {} fields, found {}", dim + 2, record.len()),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for &i in &feature_idx {
            let cell = &record[i];
            let value: f64 = cell.trim().parse().map_err(|_| FedError::CsvParse {
                line,
                msg: format!("non-numeric feature `{cell}` in column {}", &headers[i]),
            })?;
            features.push(value);
        }
        let label: usize = record[label_idx]
            .trim()
            .parse()
            .map_err(|_| FedError::CsvParse {
                line,
                msg: format!("non-integer label `{}`", &record[label_idx]),
            })?;
        if label >= classes {
            return Err(FedError::CsvParse {
                line,
                msg: format!("label {label} out of range for {classes} classes"),
            });
        }
        let device: u64 = record[device_idx]
            .trim()
            .parse()
            .map_err(|_| FedError::CsvParse {
                line,
                msg: format!("non-integer device id `{}`", &record[device_idx]),
            })?;
        groups.entry(device).or_default().push(Example { features, label });
    }

    if groups.is_empty() {
        return Err(FedError::SchemaMismatch("file contains no data rows".into()));
    }

    let mut shards = Vec::with_capacity(groups.len());
    for (new_id, (_orig_id, examples)) in groups.into_iter().enumerate() {
        let mut rng = stream2(split_seed, "csv-split", new_id as u64, 0);
        let (train, test) = split_train_test(examples, split_ratio, &mut rng)?;
        shards.push(DeviceShard {
            device_id: new_id,
            train,
            test,
        });
    }
    Ok(FederatedDataset {
        shards,
        dim,
        classes,
        gen_meta: None,
    })
}
