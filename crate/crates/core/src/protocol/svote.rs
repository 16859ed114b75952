use std::collections::{BTreeMap, BTreeSet};

use super::baseline::fedavg_round;
use super::engine::{Federation, Received, RoundWork, RunOutput, RunSetup};
use super::{
    cast_votes, count_votes, select_peers, similarity_or_floor, vote_gate, Action, SVoteConfig,
};
use crate::error::Result;
use crate::learner::{Correction, ParamVector};
use crate::netsim::Payload;

/// Last model heard from each neighbor, per client.
type PeerCache = Vec<BTreeMap<usize, ParamVector>>;

fn remember(cache: &mut PeerCache, received: &[Received]) {
    for (known, got) in cache.iter_mut().zip(received) {
        for (&id, (model, _)) in got {
            known.insert(id, model.clone());
        }
    }
}

/// Scores every known neighbor model against the client's own, selects
/// peers, votes for them and stores the votes each client received.
fn select_and_vote(
    fed: &mut Federation<'_>,
    cache: &PeerCache,
    tau: f64,
    round: u32,
) -> Result<()> {
    let n = fed.num_clients();
    for (i, known) in cache.iter().enumerate() {
        let own = &fed.clients[i].w;
        let mut sims = BTreeMap::new();
        for (&peer, model) in known {
            sims.insert(peer, similarity_or_floor(own, model)?);
        }
        // Nothing heard yet: keep the previous selection.
        if !sims.is_empty() {
            fed.clients[i].selected_peers = select_peers(&sims, tau);
        }
    }
    for i in 0..n {
        let selected = fed.clients[i].selected_peers.clone();
        cast_votes(i, &selected, round, &mut fed.bus)?;
    }
    fed.bus.deliver();
    for i in 0..n {
        fed.clients[i].votes_received = count_votes(fed.bus.inbox(i));
    }
    Ok(())
}

fn aggregate_selected(
    fed: &mut Federation<'_>,
    work: &mut [RoundWork],
    received: &[Received],
) -> Result<()> {
    for (i, w) in work.iter_mut().enumerate() {
        let selected: BTreeSet<usize> = fed.clients[i].selected_peers.clone();
        w.models_aggregated = fed.aggregate_from(i, &received[i], |id| selected.contains(&id))?;
    }
    Ok(())
}

fn train_all(fed: &mut Federation<'_>) -> Result<Vec<RoundWork>> {
    (0..fed.num_clients())
        .map(|i| {
            let (_, se) = fed.train(i, Correction::None)?;
            Ok(RoundWork {
                action: Action::Train,
                sample_epochs: se,
                models_aggregated: 0,
            })
        })
        .collect()
}

/// Runs the similarity-voting protocol.
///
/// Rounds `1..=t_init` are plain FedAvg rounds. The next `n_diverge` rounds
/// train locally without any traffic. The round after that shares models,
/// selects peers with `cosine >= mean + tau * std`, votes for them and
/// averages the selected models. Every remaining round passes each client
/// through the vote gate, trains the ones that pass, shares (a header-only
/// notice from skippers when suppression is on), optionally reselects and
/// revotes, and averages the selected models that arrived.
///
/// Similarity is scored against the last model heard from each neighbor;
/// aggregation only uses models received in the current round.
pub fn run_svote(cfg: &SVoteConfig, setup: RunSetup<'_>) -> Result<RunOutput> {
    cfg.validate(setup.rounds)?;
    let mut fed = Federation::new(setup)?;
    let n = fed.num_clients();
    let mut cache: PeerCache = vec![BTreeMap::new(); n];

    let warmup_end = cfg.t_init;
    let diverge_end = warmup_end + cfg.n_diverge;
    let selection_round = diverge_end + 1;

    for round in 1..=warmup_end {
        fedavg_round(&mut fed, round)?;
    }

    for round in warmup_end + 1..=diverge_end {
        let work = train_all(&mut fed)?;
        fed.finish_round(round, &work)?;
    }

    let mut work = train_all(&mut fed)?;
    for i in 0..n {
        fed.share_model(i, selection_round, None)?;
    }
    fed.bus.deliver();
    let received: Vec<Received> = (0..n).map(|i| fed.take_models(i)).collect();
    remember(&mut cache, &received);
    select_and_vote(&mut fed, &cache, cfg.tau, selection_round)?;
    aggregate_selected(&mut fed, &mut work, &received)?;
    fed.finish_round(selection_round, &work)?;

    for round in selection_round + 1..=setup.rounds {
        let mut work = vec![RoundWork::idle(); n];
        for (i, w) in work.iter_mut().enumerate() {
            let degree = fed.neighbors(i).len();
            let v_min = cfg.v_min.threshold(degree);
            w.action = vote_gate(&mut fed.clients[i], v_min, degree, &mut fed.gate_rngs[i]);
            if w.action.trains() {
                let (_, se) = fed.train(i, Correction::None)?;
                w.sample_epochs = se;
            }
        }
        for (i, w) in work.iter().enumerate() {
            if w.action.trains() || !cfg.suppress_nontrainer_updates {
                fed.share_model(i, round, None)?;
            } else {
                fed.bus.broadcast(i, round, &Payload::NoUpdate)?;
            }
        }
        fed.bus.deliver();
        let received: Vec<Received> = (0..n).map(|i| fed.take_models(i)).collect();
        remember(&mut cache, &received);
        if cfg.refresh_selection {
            select_and_vote(&mut fed, &cache, cfg.tau, round)?;
        }
        aggregate_selected(&mut fed, &mut work, &received)?;
        fed.finish_round(round, &work)?;
    }
    Ok(fed.into_output())
}
