//! Per-round records, macro-F1, work units and the parametric energy model.
//!
//! Energy is a linear model over counted work:
//! `E_train = c_train * sum(samples * epochs)`,
//! `E_agg = c_agg * sum(P * models averaged)` and
//! `E_comm = c_comm * sum(bytes sent)`.
//! Counts are summed as integers before scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client: usize,
    pub f1: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub action: Action,
    /// Samples processed, summed over local epochs.
    pub sample_epochs: u64,
    /// Models averaged in this round's aggregation, own model included.
    pub models_aggregated: u64,
}

impl ClientRoundRecord {
    pub fn work_units(&self) -> u64 {
        self.sample_epochs + self.models_aggregated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: u32,
    pub param_count: usize,
    /// One entry per client, in client-id order.
    pub clients: Vec<ClientRoundRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoeffs {
    /// kWh per sample per epoch.
    pub c_train: f64,
    /// kWh per parameter aggregated.
    pub c_agg: f64,
    /// kWh per byte sent.
    pub c_comm: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        Self {
            c_train: 1e-7,
            c_agg: 1e-10,
            c_comm: 1e-10,
        }
    }
}

impl EnergyCoeffs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_train", self.c_train),
            ("c_agg", self.c_agg),
            ("c_comm", self.c_comm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// kWh per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub train: f64,
    pub agg: f64,
    pub comm: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.train + self.agg + self.comm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub per_client: Vec<EnergyBreakdown>,
    pub total: EnergyBreakdown,
}

#[derive(Debug, Clone, Copy, Default)]
struct WorkCounts {
    sample_epochs: u64,
    params_aggregated: u64,
    bytes_sent: u64,
}

impl WorkCounts {
    fn add(&mut self, r: &ClientRoundRecord, param_count: usize) {
        self.sample_epochs += r.sample_epochs;
        self.params_aggregated += r.models_aggregated * param_count as u64;
        self.bytes_sent += r.bytes_sent;
    }

    fn energy(&self, c: &EnergyCoeffs) -> EnergyBreakdown {
        EnergyBreakdown {
            train: c.c_train * self.sample_epochs as f64,
            agg: c.c_agg * self.params_aggregated as f64,
            comm: c.c_comm * self.bytes_sent as f64,
        }
    }
}

/// Energy of a single client-round.
pub fn record_energy(
    r: &ClientRoundRecord,
    param_count: usize,
    coeffs: &EnergyCoeffs,
) -> EnergyBreakdown {
    let mut w = WorkCounts::default();
    w.add(r, param_count);
    w.energy(coeffs)
}

pub fn energy(records: &[RoundRecord], coeffs: &EnergyCoeffs) -> EnergyReport {
    let n = records.first().map_or(0, |r| r.clients.len());
    let mut per_client = vec![WorkCounts::default(); n];
    let mut total = WorkCounts::default();
    for round in records {
        for r in &round.clients {
            per_client[r.client].add(r, round.param_count);
            total.add(r, round.param_count);
        }
    }
    EnergyReport {
        per_client: per_client.iter().map(|w| w.energy(coeffs)).collect(),
        total: total.energy(coeffs),
    }
}

/// Work units per client: one per sample-epoch trained plus one per model
/// aggregated.
pub fn work_units(records: &[RoundRecord]) -> Vec<u64> {
    let n = records.first().map_or(0, |r| r.clients.len());
    let mut units = vec![0; n];
    for round in records {
        for r in &round.clients {
            units[r.client] += r.work_units();
        }
    }
    units
}

/// Unweighted mean of per-class F1.
///
/// Classes that occur in neither `truth` nor `predictions` are left out of
/// the average; a class that occurs in only one of them scores 0.
pub fn macro_f1(predictions: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Metric("macro-F1 of an empty sample".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Metric(format!(
                "label out of range for {num_classes} classes"
            )));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of the clients' F1 in the last round.
pub fn federation_summary(records: &[RoundRecord]) -> F1Summary {
    let last: Vec<f64> = records
        .last()
        .map(|r| r.clients.iter().map(|c| c.f1).collect())
        .unwrap_or_default();
    let (mean, std) = mean_std(&last);
    F1Summary { mean, std }
}
