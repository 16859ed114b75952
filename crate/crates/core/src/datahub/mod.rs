//! Datasets: synthetic Gaussian mixtures, IDX image files, Dirichlet non-IID
//! partitioning and per-client train/test splits.

mod idx;
mod partition;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use idx::{load_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{dirichlet_partition, max_class_share, min_shard, PartitionPlan};

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    input_dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config(
                "dataset needs input_dim >= 1 and num_classes >= 1".into(),
            ));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::Config(format!(
                "feature matrix has {} values, expected {} rows x {}",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            input_dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows in the order given by `indices`.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            features,
            labels,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Gaussian mixture with one unit-norm mean per class and isotropic noise of
/// standard deviation `spread`. Samples are laid out class by class.
pub fn gen_synthetic(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || input_dim == 0 || per_class == 0 {
        return Err(Error::Config(
            "synthetic dataset counts must be >= 1".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be > 0, got {spread}")));
    }
    let mut rng = rng_for(seed, "synthetic", 0);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        loop {
            let v: Vec<f64> = (0..input_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                means.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
                break;
            }
        }
    }
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                features.push(m + spread * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(input_dim, num_classes, features, labels)
}

/// Stratified train/test split.
///
/// The test set gets `round(n * test_fraction)` samples (at least one),
/// apportioned over classes by largest remainder. A class contributes at most
/// `count - 1` samples, so a singleton class always stays in train.
pub fn split_train_test(
    shard: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = shard.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "cannot split a shard of {n} samples"
        )));
    }
    let groups = shard.indices_by_class();
    let caps: Vec<usize> = groups.iter().map(|g| g.len().saturating_sub(1)).collect();
    let target = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let ideal: Vec<f64> = groups
        .iter()
        .map(|g| g.len() as f64 * test_fraction)
        .collect();
    let mut quota: Vec<usize> = ideal
        .iter()
        .zip(&caps)
        .map(|(&q, &cap)| (q.floor() as usize).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let before = assigned;
        for &c in &order {
            if assigned == target {
                break;
            }
            if quota[c] < caps[c] {
                quota[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }

    let mut rng = rng_for(seed, "split", 0);
    let mut train_idx = Vec::with_capacity(n);
    let mut test_idx = Vec::with_capacity(target);
    for (group, &q) in groups.iter().zip(&quota) {
        let mut g = group.clone();
        g.shuffle(&mut rng);
        test_idx.extend_from_slice(&g[..q]);
        train_idx.extend_from_slice(&g[q..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((shard.subset(&train_idx), shard.subset(&test_idx)))
}

/// Splits every partition entry into a client's train and test sets. Each
/// client's split is seeded by its own sub-seed.
pub fn client_shards(
    data: &LabeledDataset,
    plan: &PartitionPlan,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    plan.assignment
        .iter()
        .enumerate()
        .map(|(client, idx)| {
            let shard = data.subset(idx);
            let sub = crate::seed::derive_seed(seed, "client-split", client as u64);
            let (train, test) = split_train_test(&shard, test_fraction, sub)?;
            Ok(ClientShard { train, test })
        })
        .collect()
}
