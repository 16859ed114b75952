//! Runs one configured experiment and writes `metrics.csv` and `summary.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svote_core::datahub::{client_shards, dirichlet_partition, gen_synthetic, load_idx, min_shard};
use svote_core::metrics::{energy, federation_summary, record_energy, EnergyBreakdown};
use svote_core::protocol::{run_baseline, run_svote, BaselineKind};
use svote_core::seed::derive_seed;
use svote_core::{ClientShard, ModelSpec, RunOutput, RunSetup, Topology};

use crate::config::{DatasetSource, ExperimentConfig, Method, TopologyKind};
use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: &str =
    "round,client,f1,bytes_sent,bytes_received,action,e_train,e_agg,e_comm,work_units";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Stats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bytes {
    pub sent: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub train: f64,
    pub agg: f64,
    pub comm: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAvgReference {
    pub bytes_sent: u64,
    pub final_f1_mean: f64,
    pub byte_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub rounds: u32,
    pub num_clients: usize,
    pub param_count: usize,
    pub final_f1: F1Stats,
    pub bytes: Bytes,
    pub energy_kwh: Energy,
    pub work_units: u64,
    pub actions: BTreeMap<String, u64>,
    pub fedavg_reference: Option<FedAvgReference>,
    pub config: BTreeMap<String, String>,
}

/// Shards, topology and model shape derived from a config.
pub struct Prepared {
    pub spec: ModelSpec,
    pub topology: Topology,
    pub shards: Vec<ClientShard>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = match &cfg.dataset {
        DatasetSource::Synthetic {
            num_classes,
            input_dim,
            per_class,
            spread,
        } => gen_synthetic(
            *num_classes,
            *input_dim,
            *per_class,
            *spread,
            derive_seed(cfg.seed, "dataset", 0),
        )?,
        DatasetSource::Idx {
            images,
            labels,
            limit,
        } => load_idx(images, labels, *limit)?,
    };
    let plan = dirichlet_partition(
        &data,
        cfg.num_clients,
        cfg.alpha,
        min_shard(cfg.hp.batch_size, data.num_classes()),
        derive_seed(cfg.seed, "partition", 0),
    )?;
    let shards = client_shards(
        &data,
        &plan,
        cfg.test_fraction,
        derive_seed(cfg.seed, "split", 0),
    )?;
    let topology = match cfg.topology {
        TopologyKind::Full => Topology::full(cfg.num_clients)?,
        TopologyKind::ErdosRenyi { p } => {
            Topology::erdos_renyi(cfg.num_clients, p, derive_seed(cfg.seed, "topology", 0))?
        }
    };
    let spec = ModelSpec::new(
        cfg.model,
        data.input_dim(),
        data.num_classes(),
        cfg.hidden_dim,
    )?;
    Ok(Prepared {
        spec,
        topology,
        shards,
    })
}

pub fn run_method(cfg: &ExperimentConfig, method: Method, prep: &Prepared) -> Result<RunOutput> {
    let setup = RunSetup {
        spec: prep.spec,
        hp: cfg.hp,
        topology: &prep.topology,
        shards: &prep.shards,
        rounds: cfg.rounds,
        seed: derive_seed(cfg.seed, "engine", 0),
        trace_models: false,
    };
    let out = match method {
        Method::SVote => run_svote(&cfg.svote, setup)?,
        Method::FedAvg => run_baseline(BaselineKind::FedAvg, setup)?,
        Method::FedProx => run_baseline(BaselineKind::FedProx, setup)?,
        Method::Scaffold => run_baseline(BaselineKind::Scaffold, setup)?,
    };
    Ok(out)
}

/// Rendered outputs of a run, not yet on disk.
pub struct RunArtifacts {
    pub summary: Summary,
    pub metrics_csv: String,
    pub summary_json: String,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let prep = prepare(cfg)?;
    let out = run_method(cfg, cfg.method, &prep)?;
    let reference = if cfg.method != Method::FedAvg && cfg.fedavg_reference {
        let base = run_method(cfg, Method::FedAvg, &prep)?;
        Some((
            base.ledger.total_sent(),
            federation_summary(&base.records).mean,
        ))
    } else {
        None
    };
    let summary = summarize(cfg, &prep, &out, reference);
    let metrics_csv = metrics_csv(cfg, &prep, &out);
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    Ok(RunArtifacts {
        summary,
        metrics_csv,
        summary_json,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    out: &RunOutput,
    reference: Option<(u64, f64)>,
) -> Summary {
    let f1 = federation_summary(&out.records);
    let e = energy(&out.records, &cfg.energy).total;
    let mut actions: BTreeMap<String, u64> = BTreeMap::new();
    let mut work = 0;
    for c in out.records.iter().flat_map(|r| &r.clients) {
        *actions.entry(c.action.as_str().to_string()).or_default() += 1;
        work += c.work_units();
    }
    let sent = out.ledger.total_sent();
    Summary {
        method: cfg.method.as_str().into(),
        dataset: cfg.dataset_name().into(),
        seed: cfg.seed,
        rounds: cfg.rounds,
        num_clients: cfg.num_clients,
        param_count: prep.spec.param_count(),
        final_f1: F1Stats {
            mean: f1.mean,
            std: f1.std,
        },
        bytes: Bytes {
            sent,
            received: out.ledger.total_received(),
        },
        energy_kwh: Energy {
            train: e.train,
            agg: e.agg,
            comm: e.comm,
            total: e.total(),
        },
        work_units: work,
        actions,
        fedavg_reference: reference.map(|(bytes, f1_mean)| FedAvgReference {
            bytes_sent: bytes,
            final_f1_mean: f1_mean,
            byte_reduction_pct: if bytes == 0 {
                0.0
            } else {
                100.0 * (bytes as f64 - sent as f64) / bytes as f64
            },
        }),
        config: cfg.to_pairs(),
    }
}

fn metrics_csv(cfg: &ExperimentConfig, prep: &Prepared, out: &RunOutput) -> String {
    let p = prep.spec.param_count();
    let mut s = String::with_capacity(64 * out.records.len() * cfg.num_clients + 128);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &out.records {
        for c in &r.clients {
            let EnergyBreakdown { train, agg, comm } = record_energy(c, p, &cfg.energy);
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.round,
                c.client,
                c.f1,
                c.bytes_sent,
                c.bytes_received,
                c.action.as_str(),
                train,
                agg,
                comm,
                c.work_units()
            )
            .expect("write to string");
        }
    }
    s
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `cfg` and writes its outputs into `out_dir`.
///
/// Nothing is written unless the whole run succeeds. Files are written under
/// temporary names and renamed into place.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    let artifacts = execute(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (name, body) in [
        (METRICS_FILE, &artifacts.metrics_csv),
        (SUMMARY_FILE, &artifacts.summary_json),
    ] {
        let tmp: PathBuf = out_dir.join(format!(".{name}.tmp"));
        let dst = out_dir.join(name);
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &dst).map_err(io_err(&dst))?;
    }
    Ok(artifacts.summary)
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("no completed run in {}: {e}", dir.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed {}: {e}", path.display())))
}
