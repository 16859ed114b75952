//! Topologies, a synchronous message bus and byte accounting.
//!
//! Messages sent during a phase sit in a pending queue until
//! [`MessageBus::deliver`] is called at the phase boundary. Delivery sorts the
//! queue by `(sender, receiver)` and replaces every inbox, so anything not
//! read during the next phase is gone.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::ParamVector;
use crate::seed::rng_for;

/// Fixed per-message header.
pub const HEADER_BYTES: u64 = 32;
/// Serialized size of one parameter (32-bit float on the wire).
pub const BYTES_PER_PARAM: u64 = 4;

const MAX_ER_ATTEMPTS: u64 = 100;

/// Undirected, connected graph over client ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Complete graph on `n` clients.
    pub fn full(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("topology needs n >= 2, got {n}")));
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Ok(Self { neighbors })
    }

    /// G(n, p) graph. A disconnected draw is rejected and redrawn from the
    /// next sub-seed, up to 100 times.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("topology needs n >= 2, got {n}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!(
                "edge probability must be in (0, 1], got {p}"
            )));
        }
        for attempt in 0..MAX_ER_ATTEMPTS {
            let mut rng = rng_for(seed, "erdos-renyi", attempt);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(p) {
                        edges.push((i, j));
                    }
                }
            }
            let topo = Self::build(n, &edges);
            if topo.is_connected() {
                return Ok(topo);
            }
        }
        Err(Error::Generation(format!(
            "no connected G({n}, {p}) graph in {MAX_ER_ATTEMPTS} attempts"
        )))
    }

    /// Graph from an explicit edge list; rejects self-loops, unknown ids and
    /// disconnected graphs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("topology needs n >= 2, got {n}")));
        }
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Config(format!("self-loop on client {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Config(format!("edge ({a}, {b}) outside 0..{n}")));
            }
        }
        let topo = Self::build(n, edges);
        if !topo.is_connected() {
            return Err(Error::Config("topology is not connected".into()));
        }
        Ok(topo)
    }

    fn build(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self { neighbors }
    }

    pub fn num_clients(&self) -> usize {
        self.neighbors.len()
    }

    /// Sorted neighbor ids.
    pub fn neighbors(&self, client: usize) -> &[usize] {
        &self.neighbors[client]
    }

    pub fn degree(&self, client: usize) -> usize {
        self.neighbors[client].len()
    }

    pub fn is_neighbor(&self, a: usize, b: usize) -> bool {
        self.neighbors
            .get(a)
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.neighbors.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// A model, plus the sender's control variate for SCAFFOLD.
    ModelUpdate {
        model: ParamVector,
        variate: Option<ParamVector>,
    },
    Vote,
    /// Header-only notice that the sender has no new model this round.
    NoUpdate,
}

impl Payload {
    pub fn payload_bytes(&self) -> u64 {
        match self {
            Payload::ModelUpdate { model, variate } => {
                let params = model.len() + variate.as_ref().map_or(0, ParamVector::len);
                BYTES_PER_PARAM * params as u64
            }
            Payload::Vote | Payload::NoUpdate => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub receiver: usize,
    pub round: u32,
    pub payload: Payload,
    pub byte_size: u64,
}

impl RoundMessage {
    pub fn new(sender: usize, receiver: usize, round: u32, payload: Payload) -> Self {
        let byte_size = HEADER_BYTES + payload.payload_bytes();
        Self {
            sender,
            receiver,
            round,
            payload,
            byte_size,
        }
    }
}

/// Per-client byte counters, in total and per round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrafficLedger {
    sent: Vec<u64>,
    received: Vec<u64>,
    per_round: BTreeMap<u32, Vec<(u64, u64)>>,
}

impl TrafficLedger {
    pub fn new(num_clients: usize) -> Self {
        Self {
            sent: vec![0; num_clients],
            received: vec![0; num_clients],
            per_round: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, msg: &RoundMessage) {
        let n = self.sent.len();
        self.sent[msg.sender] += msg.byte_size;
        self.received[msg.receiver] += msg.byte_size;
        let round = self
            .per_round
            .entry(msg.round)
            .or_insert_with(|| vec![(0, 0); n]);
        round[msg.sender].0 += msg.byte_size;
        round[msg.receiver].1 += msg.byte_size;
    }

    pub fn bytes_sent(&self, client: usize) -> u64 {
        self.sent[client]
    }

    pub fn bytes_received(&self, client: usize) -> u64 {
        self.received[client]
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received.iter().sum()
    }

    /// `(sent, received)` for one client in one round.
    pub fn round_bytes(&self, round: u32, client: usize) -> (u64, u64) {
        self.per_round.get(&round).map_or((0, 0), |r| r[client])
    }

    pub fn round_total_sent(&self, round: u32) -> u64 {
        self.per_round
            .get(&round)
            .map_or(0, |r| r.iter().map(|(s, _)| s).sum())
    }
}

/// Synchronous message bus over a fixed topology.
#[derive(Debug, Clone)]
pub struct MessageBus {
    topology: Topology,
    pending: Vec<RoundMessage>,
    inboxes: Vec<Vec<RoundMessage>>,
    ledger: TrafficLedger,
}

impl MessageBus {
    pub fn new(topology: Topology) -> Self {
        let n = topology.num_clients();
        Self {
            topology,
            pending: Vec::new(),
            inboxes: vec![Vec::new(); n],
            ledger: TrafficLedger::new(n),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> TrafficLedger {
        self.ledger
    }

    /// Queues `msg` for the next phase and charges it to the ledger.
    pub fn send(&mut self, msg: RoundMessage) -> Result<()> {
        if !self.topology.is_neighbor(msg.sender, msg.receiver) {
            return Err(Error::Protocol(format!(
                "client {} sent to non-neighbor {}",
                msg.sender, msg.receiver
            )));
        }
        self.ledger.record(&msg);
        self.pending.push(msg);
        Ok(())
    }

    /// Sends `payload` to every neighbor of `sender`; returns the message count.
    pub fn broadcast(&mut self, sender: usize, round: u32, payload: &Payload) -> Result<usize> {
        if sender >= self.topology.num_clients() {
            return Err(Error::Protocol(format!("unknown sender {sender}")));
        }
        let receivers = self.topology.neighbors(sender).to_vec();
        for &r in &receivers {
            self.send(RoundMessage::new(sender, r, round, payload.clone()))?;
        }
        Ok(receivers.len())
    }

    /// Phase boundary: pending messages become the new inbox contents.
    pub fn deliver(&mut self) {
        for inbox in &mut self.inboxes {
            inbox.clear();
        }
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by_key(|m| (m.sender, m.receiver));
        for msg in pending {
            self.inboxes[msg.receiver].push(msg);
        }
    }

    pub fn inbox(&self, client: usize) -> &[RoundMessage] {
        &self.inboxes[client]
    }

    pub fn take_inbox(&mut self, client: usize) -> Vec<RoundMessage> {
        std::mem::take(&mut self.inboxes[client])
    }
}
