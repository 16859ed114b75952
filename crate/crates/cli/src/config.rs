//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, sections are dotted key
//! prefixes (`svote.tau = 0.5`). Omitted keys take the defaults of
//! [`ExperimentConfig::default`]. [`ExperimentConfig::to_pairs`] renders every
//! key, and parsing that rendering gives back an equal config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use svote_core::datahub::min_shard;
use svote_core::{EnergyCoeffs, HyperParams, ModelKind, SVoteConfig, VMinRule};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SVote,
    FedAvg,
    FedProx,
    Scaffold,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SVote => "svote",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::Scaffold => "scaffold",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "svote" => Ok(Method::SVote),
            "fedavg" => Ok(Method::FedAvg),
            "fedprox" => Ok(Method::FedProx),
            "scaffold" => Ok(Method::Scaffold),
            _ => Err("expected one of svote, fedavg, fedprox, scaffold".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        per_class: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    Full,
    ErdosRenyi { p: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub alpha: f64,
    pub num_clients: usize,
    pub topology: TopologyKind,
    pub model: ModelKind,
    pub hidden_dim: usize,
    pub hp: HyperParams,
    pub rounds: u32,
    pub svote: SVoteConfig,
    pub energy: EnergyCoeffs,
    pub seed: u64,
    /// Also run FedAvg on the same shards and report the byte reduction.
    pub fedavg_reference: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::SVote,
            dataset: DatasetSource::Synthetic {
                num_classes: 10,
                input_dim: 20,
                per_class: 200,
                spread: 0.5,
            },
            test_fraction: 0.2,
            alpha: 0.5,
            num_clients: 10,
            topology: TopologyKind::Full,
            model: ModelKind::SoftmaxRegression,
            hidden_dim: 32,
            hp: HyperParams::default(),
            rounds: 30,
            svote: SVoteConfig::default(),
            energy: EnergyCoeffs::default(),
            seed: 0,
            fedavg_reference: true,
            output_dir: None,
        }
    }
}

const SYNTHETIC_DEFAULTS: (usize, usize, usize, f64) = (10, 20, 200, 0.5);
const IDX_DEFAULT_LIMIT: usize = 10_000;

/// Raw values seen while parsing, before they are assembled.
#[derive(Default)]
struct Raw {
    values: BTreeMap<String, (usize, String)>,
}

struct Ctx<'a> {
    origin: &'a str,
    raw: &'a Raw,
}

impl Ctx<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> CliError {
        CliError::ConfigKey {
            origin: self.origin.to_string(),
            line: self.raw.values.get(key).map_or(0, |(l, _)| *l),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.raw.values.get(key) {
            None => Ok(default),
            Some((_, v)) => v
                .parse()
                .map_err(|e: T::Err| self.err(key, format!("cannot parse '{v}': {e}"))),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.raw.values.contains_key(key)
    }
}

const KEYS: &[&str] = &[
    "method",
    "dataset",
    "data.num_classes",
    "data.input_dim",
    "data.per_class",
    "data.spread",
    "data.images",
    "data.labels",
    "data.limit",
    "data.test_fraction",
    "alpha",
    "num_clients",
    "topology",
    "topology.p",
    "model",
    "model.hidden_dim",
    "train.learning_rate",
    "train.local_epochs",
    "train.batch_size",
    "train.prox_mu",
    "rounds",
    "svote.t_init",
    "svote.n_diverge",
    "svote.tau",
    "svote.v_min",
    "svote.refresh_selection",
    "svote.suppress_nontrainer_updates",
    "energy.c_train",
    "energy.c_agg",
    "energy.c_comm",
    "seed",
    "report.fedavg_reference",
    "output.dir",
];

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parses and validates a config. `origin` names the source in diagnostics.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let mut raw = Raw::default();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::ConfigKey {
                origin: origin.into(),
                line: lineno,
                key: line.into(),
                message: "expected 'key = value'".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let fail = |message: &str| CliError::ConfigKey {
            origin: origin.into(),
            line: lineno,
            key: key.into(),
            message: message.into(),
        };
        if !KEYS.contains(&key) {
            return Err(fail("unknown key"));
        }
        if raw
            .values
            .insert(key.to_string(), (lineno, value.to_string()))
            .is_some()
        {
            return Err(fail("duplicate key"));
        }
    }
    let ctx = Ctx { origin, raw: &raw };
    let cfg = assemble(&ctx)?;
    validate(&cfg, &ctx)?;
    Ok(cfg)
}

fn parse_bool(ctx: &Ctx<'_>, key: &str, default: bool) -> Result<bool> {
    ctx.get(key, default)
}

fn assemble(ctx: &Ctx<'_>) -> Result<ExperimentConfig> {
    let d = ExperimentConfig::default();
    let method: Method = ctx.get("method", d.method)?;

    let dataset_kind: String = ctx.get("dataset", "synthetic".to_string())?;
    let dataset = match dataset_kind.as_str() {
        "synthetic" => {
            for key in ["data.images", "data.labels", "data.limit"] {
                if ctx.has(key) {
                    return Err(ctx.err(key, "only valid with dataset = idx"));
                }
            }
            let (nc, dim, per, spread) = SYNTHETIC_DEFAULTS;
            DatasetSource::Synthetic {
                num_classes: ctx.get("data.num_classes", nc)?,
                input_dim: ctx.get("data.input_dim", dim)?,
                per_class: ctx.get("data.per_class", per)?,
                spread: ctx.get("data.spread", spread)?,
            }
        }
        "idx" => {
            for key in [
                "data.num_classes",
                "data.input_dim",
                "data.per_class",
                "data.spread",
            ] {
                if ctx.has(key) {
                    return Err(ctx.err(key, "only valid with dataset = synthetic"));
                }
            }
            let images: String = ctx.get("data.images", String::new())?;
            let labels: String = ctx.get("data.labels", String::new())?;
            if images.is_empty() {
                return Err(ctx.err("data.images", "required with dataset = idx"));
            }
            if labels.is_empty() {
                return Err(ctx.err("data.labels", "required with dataset = idx"));
            }
            DatasetSource::Idx {
                images: images.into(),
                labels: labels.into(),
                limit: ctx.get("data.limit", IDX_DEFAULT_LIMIT)?,
            }
        }
        other => {
            return Err(ctx.err(
                "dataset",
                format!("unknown dataset '{other}', expected synthetic or idx"),
            ))
        }
    };

    let topology_kind: String = ctx.get("topology", "full".to_string())?;
    let topology = match topology_kind.as_str() {
        "full" => {
            if ctx.has("topology.p") {
                return Err(ctx.err("topology.p", "only valid with topology = erdos"));
            }
            TopologyKind::Full
        }
        "erdos" => TopologyKind::ErdosRenyi {
            p: ctx.get("topology.p", 0.5)?,
        },
        other => {
            return Err(ctx.err(
                "topology",
                format!("unknown topology '{other}', expected full or erdos"),
            ))
        }
    };

    let model_name: String = ctx.get("model", "softmax".to_string())?;
    let model = match model_name.as_str() {
        "softmax" => ModelKind::SoftmaxRegression,
        "mlp" => ModelKind::Mlp1Hidden,
        other => {
            return Err(ctx.err(
                "model",
                format!("unknown model '{other}', expected softmax or mlp"),
            ))
        }
    };

    let v_min_raw: String = ctx.get("svote.v_min", "half".to_string())?;
    let v_min = if v_min_raw == "half" {
        VMinRule::HalfNeighbors
    } else {
        VMinRule::Fixed(
            v_min_raw
                .parse()
                .map_err(|_| ctx.err("svote.v_min", "expected 'half' or a non-negative integer"))?,
        )
    };

    let output_dir: String = ctx.get("output.dir", String::new())?;

    Ok(ExperimentConfig {
        method,
        dataset,
        test_fraction: ctx.get("data.test_fraction", d.test_fraction)?,
        alpha: ctx.get("alpha", d.alpha)?,
        num_clients: ctx.get("num_clients", d.num_clients)?,
        topology,
        model,
        hidden_dim: ctx.get("model.hidden_dim", d.hidden_dim)?,
        hp: HyperParams {
            learning_rate: ctx.get("train.learning_rate", d.hp.learning_rate)?,
            local_epochs: ctx.get("train.local_epochs", d.hp.local_epochs)?,
            batch_size: ctx.get("train.batch_size", d.hp.batch_size)?,
            prox_mu: ctx.get("train.prox_mu", d.hp.prox_mu)?,
        },
        rounds: ctx.get("rounds", d.rounds)?,
        svote: SVoteConfig {
            t_init: ctx.get("svote.t_init", d.svote.t_init)?,
            n_diverge: ctx.get("svote.n_diverge", d.svote.n_diverge)?,
            tau: ctx.get("svote.tau", d.svote.tau)?,
            v_min,
            refresh_selection: parse_bool(
                ctx,
                "svote.refresh_selection",
                d.svote.refresh_selection,
            )?,
            suppress_nontrainer_updates: parse_bool(
                ctx,
                "svote.suppress_nontrainer_updates",
                d.svote.suppress_nontrainer_updates,
            )?,
        },
        energy: EnergyCoeffs {
            c_train: ctx.get("energy.c_train", d.energy.c_train)?,
            c_agg: ctx.get("energy.c_agg", d.energy.c_agg)?,
            c_comm: ctx.get("energy.c_comm", d.energy.c_comm)?,
        },
        seed: ctx.get("seed", d.seed)?,
        fedavg_reference: parse_bool(ctx, "report.fedavg_reference", d.fedavg_reference)?,
        output_dir: (!output_dir.is_empty()).then(|| output_dir.into()),
    })
}

fn validate(cfg: &ExperimentConfig, ctx: &Ctx<'_>) -> Result<()> {
    let range = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(ctx.err(key, msg)) };
    range(cfg.num_clients >= 2, "num_clients", "must be >= 2")?;
    range(
        cfg.alpha > 0.0 && cfg.alpha.is_finite(),
        "alpha",
        "must be > 0",
    )?;
    range(
        cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0,
        "data.test_fraction",
        "must be in (0, 1)",
    )?;
    if let TopologyKind::ErdosRenyi { p } = cfg.topology {
        range(p > 0.0 && p <= 1.0, "topology.p", "must be in (0, 1]")?;
    }
    range(cfg.rounds >= 1, "rounds", "must be >= 1")?;
    range(
        cfg.hp.learning_rate > 0.0 && cfg.hp.learning_rate.is_finite(),
        "train.learning_rate",
        "must be > 0",
    )?;
    range(
        cfg.hp.local_epochs >= 1,
        "train.local_epochs",
        "must be >= 1",
    )?;
    range(cfg.hp.batch_size >= 1, "train.batch_size", "must be >= 1")?;
    range(
        cfg.hp.prox_mu >= 0.0 && cfg.hp.prox_mu.is_finite(),
        "train.prox_mu",
        "must be >= 0",
    )?;
    range(
        cfg.model != ModelKind::Mlp1Hidden || cfg.hidden_dim >= 1,
        "model.hidden_dim",
        "must be >= 1",
    )?;
    range(cfg.svote.tau.is_finite(), "svote.tau", "must be finite")?;
    if cfg.method == Method::SVote {
        range(
            cfg.svote.t_init + cfg.svote.n_diverge < cfg.rounds,
            "svote.t_init",
            "svote.t_init + svote.n_diverge must be below rounds",
        )?;
    }
    for (key, v) in [
        ("energy.c_train", cfg.energy.c_train),
        ("energy.c_agg", cfg.energy.c_agg),
        ("energy.c_comm", cfg.energy.c_comm),
    ] {
        range(v >= 0.0 && v.is_finite(), key, "must be >= 0")?;
    }
    match &cfg.dataset {
        DatasetSource::Synthetic {
            num_classes,
            input_dim,
            per_class,
            spread,
        } => {
            range(*num_classes >= 2, "data.num_classes", "must be >= 2")?;
            range(*input_dim >= 1, "data.input_dim", "must be >= 1")?;
            range(*per_class >= 1, "data.per_class", "must be >= 1")?;
            range(
                *spread > 0.0 && spread.is_finite(),
                "data.spread",
                "must be > 0",
            )?;
            let need = cfg.num_clients * min_shard(cfg.hp.batch_size, *num_classes);
            range(
                num_classes * per_class >= need,
                "data.per_class",
                &format!(
                    "too few samples: {num_clients} clients need {need} in total",
                    num_clients = cfg.num_clients
                ),
            )?;
        }
        DatasetSource::Idx {
            images,
            labels,
            limit,
        } => {
            range(
                images.is_file(),
                "data.images",
                &format!("file not found: {}", images.display()),
            )?;
            range(
                labels.is_file(),
                "data.labels",
                &format!("file not found: {}", labels.display()),
            )?;
            range(*limit >= 1, "data.limit", "must be >= 1")?;
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn dataset_name(&self) -> &'static str {
        match self.dataset {
            DatasetSource::Synthetic { .. } => "synthetic",
            DatasetSource::Idx { .. } => "idx",
        }
    }

    /// Every setting as `key -> value`, in the config text format.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("method", self.method.as_str().into());
        put("dataset", self.dataset_name().into());
        match &self.dataset {
            DatasetSource::Synthetic {
                num_classes,
                input_dim,
                per_class,
                spread,
            } => {
                put("data.num_classes", num_classes.to_string());
                put("data.input_dim", input_dim.to_string());
                put("data.per_class", per_class.to_string());
                put("data.spread", spread.to_string());
            }
            DatasetSource::Idx {
                images,
                labels,
                limit,
            } => {
                put("data.images", images.display().to_string());
                put("data.labels", labels.display().to_string());
                put("data.limit", limit.to_string());
            }
        }
        put("data.test_fraction", self.test_fraction.to_string());
        put("alpha", self.alpha.to_string());
        put("num_clients", self.num_clients.to_string());
        match self.topology {
            TopologyKind::Full => put("topology", "full".into()),
            TopologyKind::ErdosRenyi { p } => {
                put("topology", "erdos".into());
                put("topology.p", p.to_string());
            }
        }
        put(
            "model",
            match self.model {
                ModelKind::SoftmaxRegression => "softmax",
                ModelKind::Mlp1Hidden => "mlp",
            }
            .into(),
        );
        put("model.hidden_dim", self.hidden_dim.to_string());
        put("train.learning_rate", self.hp.learning_rate.to_string());
        put("train.local_epochs", self.hp.local_epochs.to_string());
        put("train.batch_size", self.hp.batch_size.to_string());
        put("train.prox_mu", self.hp.prox_mu.to_string());
        put("rounds", self.rounds.to_string());
        put("svote.t_init", self.svote.t_init.to_string());
        put("svote.n_diverge", self.svote.n_diverge.to_string());
        put("svote.tau", self.svote.tau.to_string());
        put(
            "svote.v_min",
            match self.svote.v_min {
                VMinRule::HalfNeighbors => "half".into(),
                VMinRule::Fixed(k) => k.to_string(),
            },
        );
        put(
            "svote.refresh_selection",
            self.svote.refresh_selection.to_string(),
        );
        put(
            "svote.suppress_nontrainer_updates",
            self.svote.suppress_nontrainer_updates.to_string(),
        );
        put("energy.c_train", self.energy.c_train.to_string());
        put("energy.c_agg", self.energy.c_agg.to_string());
        put("energy.c_comm", self.energy.c_comm.to_string());
        put("seed", self.seed.to_string());
        put("report.fedavg_reference", self.fedavg_reference.to_string());
        if let Some(dir) = &self.output_dir {
            put("output.dir", dir.display().to_string());
        }
        m
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
