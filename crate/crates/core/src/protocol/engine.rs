use std::collections::BTreeMap;

use super::{aggregate_with_own, Action, ClientState};
use crate::datahub::ClientShard;
use crate::error::{Error, Result};
use crate::learner::{self, Correction, HyperParams, ModelSpec, ParamVector};
use crate::metrics::{macro_f1, ClientRoundRecord, RoundRecord};
use crate::netsim::{MessageBus, Payload, Topology, TrafficLedger};
use crate::seed::{derive_seed, rng_for, SimRng};

/// Everything a run needs besides the method-specific settings.
#[derive(Debug, Clone, Copy)]
pub struct RunSetup<'a> {
    pub spec: ModelSpec,
    pub hp: HyperParams,
    pub topology: &'a Topology,
    pub shards: &'a [ClientShard],
    pub rounds: u32,
    pub seed: u64,
    /// Keep every client's model after every round in [`RunOutput::model_trace`].
    pub trace_models: bool,
}

impl RunSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        let n = self.topology.num_clients();
        if self.shards.len() != n {
            return Err(Error::Config(format!(
                "{} shards for {n} clients",
                self.shards.len()
            )));
        }
        for (i, shard) in self.shards.iter().enumerate() {
            if shard.train.is_empty() || shard.test.is_empty() {
                return Err(Error::Config(format!(
                    "client {i} has an empty train or test set"
                )));
            }
            if shard.train.input_dim() != self.spec.input_dim
                || shard.train.num_classes() > self.spec.num_classes
            {
                return Err(Error::Config(format!(
                    "client {i}'s data does not match the model shape"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub ledger: TrafficLedger,
    pub final_models: Vec<ParamVector>,
    /// `model_trace[round - 1][client]`, when requested.
    pub model_trace: Option<Vec<Vec<ParamVector>>>,
}

/// Model updates received by one client, keyed by sender: `(model, variate)`.
pub(super) type Received = BTreeMap<usize, (ParamVector, Option<ParamVector>)>;

/// Per-round bookkeeping for one client before it becomes a record.
#[derive(Debug, Clone, Copy)]
pub(super) struct RoundWork {
    pub action: Action,
    pub sample_epochs: u64,
    pub models_aggregated: u64,
}

impl RoundWork {
    pub fn idle() -> Self {
        Self {
            action: Action::Skip,
            sample_epochs: 0,
            models_aggregated: 0,
        }
    }
}

/// Client states, their private random streams and the bus.
pub(super) struct Federation<'a> {
    pub setup: RunSetup<'a>,
    pub clients: Vec<ClientState>,
    pub bus: MessageBus,
    train_rngs: Vec<SimRng>,
    pub gate_rngs: Vec<SimRng>,
    records: Vec<RoundRecord>,
    trace: Option<Vec<Vec<ParamVector>>>,
}

impl<'a> Federation<'a> {
    pub fn new(setup: RunSetup<'a>) -> Result<Self> {
        setup.validate()?;
        let n = setup.topology.num_clients();
        let clients = (0..n)
            .map(|i| {
                let w = learner::init_params(
                    &setup.spec,
                    derive_seed(setup.seed, "client-init", i as u64),
                );
                ClientState::new(i, w)
            })
            .collect();
        Ok(Self {
            setup,
            clients,
            bus: MessageBus::new(setup.topology.clone()),
            train_rngs: (0..n)
                .map(|i| rng_for(setup.seed, "local-train", i as u64))
                .collect(),
            gate_rngs: (0..n)
                .map(|i| rng_for(setup.seed, "vote-gate", i as u64))
                .collect(),
            records: Vec::with_capacity(setup.rounds as usize),
            trace: setup.trace_models.then(Vec::new),
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn neighbors(&self, i: usize) -> &'a [usize] {
        self.setup.topology.neighbors(i)
    }

    /// Local training on client `i`'s train set; returns `(steps, sample_epochs)`.
    pub fn train(&mut self, i: usize, correction: Correction<'_>) -> Result<(usize, u64)> {
        let shard = &self.setup.shards[i].train;
        let steps = learner::train_local(
            &self.setup.spec,
            &self.setup.hp,
            &mut self.clients[i].w,
            shard,
            &mut self.train_rngs[i],
            correction,
        )?;
        self.clients[i].trained_this_round = true;
        Ok((steps, (shard.len() * self.setup.hp.local_epochs) as u64))
    }

    pub fn share_model(
        &mut self,
        i: usize,
        round: u32,
        variate: Option<ParamVector>,
    ) -> Result<()> {
        let payload = Payload::ModelUpdate {
            model: self.clients[i].w.clone(),
            variate,
        };
        self.bus.broadcast(i, round, &payload)?;
        Ok(())
    }

    /// Drains client `i`'s delivered inbox, keeping the model updates.
    pub fn take_models(&mut self, i: usize) -> Received {
        self.bus
            .take_inbox(i)
            .into_iter()
            .filter_map(|m| match m.payload {
                Payload::ModelUpdate { model, variate } => Some((m.sender, (model, variate))),
                _ => None,
            })
            .collect()
    }

    /// Replaces client `i`'s model by the mean of itself and the received
    /// models accepted by `keep`. Returns the number of models averaged.
    pub fn aggregate_from(
        &mut self,
        i: usize,
        received: &Received,
        keep: impl Fn(usize) -> bool,
    ) -> Result<u64> {
        let kept: BTreeMap<usize, &ParamVector> = received
            .iter()
            .filter(|(id, _)| keep(**id))
            .map(|(&id, (m, _))| (id, m))
            .collect();
        let count = kept.len() as u64 + 1;
        let merged = aggregate_with_own(i, &self.clients[i].w, &kept)?;
        self.clients[i].w = merged;
        Ok(count)
    }

    fn evaluate(&self, i: usize) -> Result<f64> {
        let test = &self.setup.shards[i].test;
        let pred = learner::predict_all(&self.clients[i].w, test, &self.setup.spec);
        macro_f1(&pred, test.labels(), self.setup.spec.num_classes)
    }

    pub fn finish_round(&mut self, round: u32, work: &[RoundWork]) -> Result<()> {
        let ledger = self.bus.ledger();
        let mut clients = Vec::with_capacity(work.len());
        for (i, w) in work.iter().enumerate() {
            if !self.clients[i].w.is_finite() {
                return Err(Error::NonFinite(format!(
                    "client {i} model after round {round}"
                )));
            }
            let (sent, received) = ledger.round_bytes(round, i);
            clients.push(ClientRoundRecord {
                client: i,
                f1: self.evaluate(i)?,
                bytes_sent: sent,
                bytes_received: received,
                action: w.action,
                sample_epochs: w.sample_epochs,
                models_aggregated: w.models_aggregated,
            });
        }
        for c in &mut self.clients {
            c.trained_this_round = false;
        }
        self.records.push(RoundRecord {
            round,
            param_count: self.setup.spec.param_count(),
            clients,
        });
        if let Some(trace) = &mut self.trace {
            trace.push(self.clients.iter().map(|c| c.w.clone()).collect());
        }
        Ok(())
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            records: self.records,
            final_models: self.clients.into_iter().map(|c| c.w).collect(),
            ledger: self.bus.into_ledger(),
            model_trace: self.trace,
        }
    }
}
