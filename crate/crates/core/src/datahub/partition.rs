use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{rng_for, SimRng};

/// Redraw budget before a partition request is declared unsatisfiable.
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub num_clients: usize,
    pub seed: u64,
    pub min_shard: usize,
    /// Sorted sample indices per client.
    pub assignment: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }
}

/// Smallest shard a client may receive: enough for two batches and two
/// samples per class.
pub fn min_shard(batch_size: usize, num_classes: usize) -> usize {
    (2 * batch_size).max(2 * num_classes)
}

/// Largest class share among the given labels, in `[0, 1]`.
pub fn max_class_share(labels: &[usize], num_classes: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    *counts.iter().max().unwrap() as f64 / labels.len() as f64
}

fn dirichlet(rng: &mut SimRng, gamma: &Gamma<f64>, k: usize) -> Vec<f64> {
    // Gamma draws with tiny shape can underflow to zero everywhere.
    for _ in 0..64 {
        let g: Vec<f64> = (0..k).map(|_| rng.sample(gamma)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return g.into_iter().map(|x| x / sum).collect();
        }
    }
    let hot = rng.random_range(0..k);
    (0..k).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
}

/// Splits `total` by `proportions` with largest-remainder rounding; ties go
/// to the lower index.
fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn draw_once(
    groups: &[Vec<usize>],
    num_clients: usize,
    gamma: &Gamma<f64>,
    rng: &mut SimRng,
) -> Vec<Vec<usize>> {
    let mut assignment = vec![Vec::new(); num_clients];
    for group in groups {
        let mut idx = group.clone();
        idx.shuffle(rng);
        let props = dirichlet(rng, gamma, num_clients);
        let counts = apportion(idx.len(), &props);
        let mut start = 0;
        for (client, &c) in counts.iter().enumerate() {
            assignment[client].extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    for a in &mut assignment {
        a.sort_unstable();
    }
    assignment
}

/// Per-class Dirichlet partition of `data` over `num_clients`.
///
/// For every class a proportion vector is drawn from `Dirichlet(alpha)` over
/// the clients and the class's (shuffled) samples are split accordingly. A
/// draw that leaves any client with fewer than `min_shard` samples is
/// discarded and redrawn from the next sub-seed.
pub fn dirichlet_partition(
    data: &LabeledDataset,
    num_clients: usize,
    alpha: f64,
    min_shard: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients < 2 {
        return Err(Error::Config(format!(
            "partition needs at least 2 clients, got {num_clients}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    if data.len() < num_clients * min_shard {
        return Err(Error::Config(format!(
            "dataset of {} samples cannot give {num_clients} clients {min_shard} samples each",
            data.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let groups = data.indices_by_class();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, "dirichlet", attempt);
        let assignment = draw_once(&groups, num_clients, &gamma, &mut rng);
        if assignment.iter().all(|a| a.len() >= min_shard) {
            return Ok(PartitionPlan {
                alpha,
                num_clients,
                seed,
                min_shard,
                assignment,
            });
        }
    }
    Err(Error::Config(format!(
        "no Dirichlet(alpha={alpha}) draw in {MAX_ATTEMPTS} attempts gave every client \
         {min_shard} samples; use more data or fewer clients"
    )))
}
