//! Round engines and the voting primitives they are built from.
//!
//! A run is a sequence of synchronous rounds over a fixed [`Topology`]. The
//! voting engine ([`run_svote`]) goes through four stages:
//!
//! | stage     | rounds              | work                                                  |
//! |-----------|---------------------|-------------------------------------------------------|
//! | warm-up   | `1..=t_init`        | train, share with all neighbors, average everything   |
//! | diverge   | next `n_diverge`    | train only, no traffic                                |
//! | selection | one round           | train, share, score peers, select, vote, average      |
//! | gated     | remaining rounds    | vote gate, conditional training, share, reselect, average |
//!
//! The baselines ([`run_baseline`]) repeat the warm-up round for the whole run.

mod baseline;
mod engine;
mod svote;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{ControlVariate, ParamVector};
use crate::netsim::{MessageBus, Payload, RoundMessage};

pub use crate::datahub::ClientShard;
pub use baseline::{run_baseline, BaselineKind};
pub use engine::{RunOutput, RunSetup};
pub use svote::run_svote;

/// Escalation probability after a training round, in tenths.
const P_RESET_TENTHS: u8 = 1;
const P_MAX_TENTHS: u8 = 10;

/// What a client did with its round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Unconditional training (baselines, warm-up, diverge and selection rounds).
    Train,
    /// Enough votes, or too few neighbors to be picky.
    TrainLocal,
    /// Under-voted but the escalation draw succeeded.
    TrainRandom,
    Skip,
}

impl Action {
    pub fn trains(self) -> bool {
        !matches!(self, Action::Skip)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Train => "train",
            Action::TrainLocal => "train_local",
            Action::TrainRandom => "train_random",
            Action::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VMinRule {
    /// `ceil(degree / 2)` for each client.
    HalfNeighbors,
    Fixed(usize),
}

impl VMinRule {
    pub fn threshold(self, degree: usize) -> usize {
        match self {
            VMinRule::HalfNeighbors => degree.div_ceil(2),
            VMinRule::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SVoteConfig {
    pub t_init: u32,
    pub n_diverge: u32,
    pub tau: f64,
    pub v_min: VMinRule,
    /// Recompute similarity, selection and votes every gated round.
    pub refresh_selection: bool,
    /// Skipping clients send a header-only notice instead of their model.
    pub suppress_nontrainer_updates: bool,
}

impl Default for SVoteConfig {
    fn default() -> Self {
        Self {
            t_init: 5,
            n_diverge: 2,
            tau: 0.0,
            v_min: VMinRule::HalfNeighbors,
            refresh_selection: true,
            suppress_nontrainer_updates: true,
        }
    }
}

impl SVoteConfig {
    pub fn validate(&self, total_rounds: u32) -> Result<()> {
        if self.t_init + self.n_diverge >= total_rounds {
            return Err(Error::Config(format!(
                "t_init ({}) + n_diverge ({}) must be below the round count ({total_rounds})",
                self.t_init, self.n_diverge
            )));
        }
        if !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be finite, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub w: ParamVector,
    pub selected_peers: BTreeSet<usize>,
    pub votes_received: usize,
    p_tenths: u8,
    /// SCAFFOLD only.
    pub cv: Option<ControlVariate>,
    /// FedProx only: the model right after the latest aggregation.
    pub w_anchor: Option<ParamVector>,
    pub trained_this_round: bool,
}

impl ClientState {
    pub fn new(id: usize, w: ParamVector) -> Self {
        Self {
            id,
            w,
            selected_peers: BTreeSet::new(),
            votes_received: 0,
            p_tenths: P_RESET_TENTHS,
            cv: None,
            w_anchor: None,
            trained_this_round: false,
        }
    }

    /// Current spontaneous-training probability, a multiple of 0.1 in `[0.1, 1]`.
    pub fn p_escalation(&self) -> f64 {
        f64::from(self.p_tenths) / 10.0
    }
}

/// Source of Bernoulli trials for the vote gate.
pub trait Coin {
    fn flip(&mut self, p: f64) -> bool;
}

impl<R: Rng + ?Sized> Coin for R {
    fn flip(&mut self, p: f64) -> bool {
        self.random_bool(p.clamp(0.0, 1.0))
    }
}

/// A coin that always lands the same way.
#[derive(Debug, Clone, Copy)]
pub struct Forced(pub bool);

impl Coin for Forced {
    fn flip(&mut self, _p: f64) -> bool {
        self.0
    }
}

/// Elementwise arithmetic mean, summed in list order.
pub fn aggregate(models: &[&ParamVector]) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::Protocol("aggregation over no models".into()))?;
    let len = first.len();
    if let Some(bad) = models.iter().find(|m| m.len() != len) {
        return Err(Error::Protocol(format!(
            "aggregating models of length {} and {len}",
            bad.len()
        )));
    }
    let mut sum = vec![0.0; len];
    for m in models {
        for (s, v) in sum.iter_mut().zip(m.as_slice()) {
            *s += v;
        }
    }
    let n = models.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect::<Vec<_>>().into())
}

/// Mean of the own model and the received ones, taken in ascending client id.
pub fn aggregate_with_own(
    own_id: usize,
    own: &ParamVector,
    received: &BTreeMap<usize, &ParamVector>,
) -> Result<ParamVector> {
    let mut list: Vec<(usize, &ParamVector)> = received.iter().map(|(&id, &m)| (id, m)).collect();
    list.push((own_id, own));
    list.sort_by_key(|(id, _)| *id);
    let models: Vec<&ParamVector> = list.into_iter().map(|(_, m)| m).collect();
    aggregate(&models)
}

pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Similarity(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Similarity("zero-norm model".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity with zero-norm models scored as -1.
pub fn similarity_or_floor(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    match cosine_similarity(a, b) {
        Err(Error::Similarity(msg)) if msg == "zero-norm model" => Ok(-1.0),
        other => other,
    }
}

/// Peers whose similarity is at least `mean + tau * std` (population std).
///
/// If nobody clears the bar, the single most similar peer is returned, ties
/// going to the lowest id. Empty input gives an empty set.
pub fn select_peers(sims: &BTreeMap<usize, f64>, tau: f64) -> BTreeSet<usize> {
    if sims.is_empty() {
        return BTreeSet::new();
    }
    let values: Vec<f64> = sims.values().copied().collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return sims.keys().copied().collect();
    }
    let (mu, sigma) = crate::metrics::mean_std(&values);
    let threshold = mu + tau * sigma;
    let selected: BTreeSet<usize> = sims
        .iter()
        .filter(|(_, &s)| s >= threshold)
        .map(|(&id, _)| id)
        .collect();
    if !selected.is_empty() {
        return selected;
    }
    let best = sims
        .iter()
        .fold(None::<(usize, f64)>, |best, (&id, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((id, s)),
        })
        .map(|(id, _)| id)
        .unwrap();
    BTreeSet::from([best])
}

/// Sends one vote to each selected peer. Returns the number of votes cast.
pub fn cast_votes(
    local: usize,
    selected: &BTreeSet<usize>,
    round: u32,
    bus: &mut MessageBus,
) -> Result<usize> {
    for &peer in selected {
        bus.send(RoundMessage::new(local, peer, round, Payload::Vote))?;
    }
    Ok(selected.len())
}

/// Number of votes in a delivered inbox.
pub fn count_votes(inbox: &[RoundMessage]) -> usize {
    inbox
        .iter()
        .filter(|m| matches!(m.payload, Payload::Vote))
        .count()
}

/// Decides whether a client trains this round.
///
/// Clients with at least `v_min` votes, or with two or fewer neighbors, train.
/// Others train with probability `p_escalation`; a failed draw raises `p` by
/// 0.1 (capped at 1). Any training resets `p` to 0.1.
pub fn vote_gate(
    state: &mut ClientState,
    v_min: usize,
    neighbor_count: usize,
    coin: &mut impl Coin,
) -> Action {
    let action = if state.votes_received >= v_min || neighbor_count <= 2 {
        Action::TrainLocal
    } else if coin.flip(state.p_escalation()) {
        Action::TrainRandom
    } else {
        Action::Skip
    };
    if action.trains() {
        state.p_tenths = P_RESET_TENTHS;
    } else {
        state.p_tenths = (state.p_tenths + 1).min(P_MAX_TENTHS);
    }
    action
}
