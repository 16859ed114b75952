use serde::{Deserialize, Serialize};

use super::engine::{Federation, Received, RoundWork, RunOutput, RunSetup};
use super::{aggregate, Action};
use crate::error::Result;
use crate::learner::{scaffold_update_cv, ControlVariate, Correction, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    FedAvg,
    FedProx,
    Scaffold,
}

fn trained(sample_epochs: u64) -> RoundWork {
    RoundWork {
        action: Action::Train,
        sample_epochs,
        models_aggregated: 0,
    }
}

/// Shares every client's model (with its variate, if any) and returns what
/// each client received.
fn exchange(fed: &mut Federation<'_>, round: u32, with_variates: bool) -> Result<Vec<Received>> {
    let n = fed.num_clients();
    for i in 0..n {
        let variate = if with_variates {
            fed.clients[i].cv.as_ref().map(|cv| cv.local_c.clone())
        } else {
            None
        };
        fed.share_model(i, round, variate)?;
    }
    fed.bus.deliver();
    Ok((0..n).map(|i| fed.take_models(i)).collect())
}

/// One all-to-neighbors round: train, share, average own plus received.
pub(super) fn fedavg_round(fed: &mut Federation<'_>, round: u32) -> Result<()> {
    let n = fed.num_clients();
    let mut work = Vec::with_capacity(n);
    for i in 0..n {
        let (_, se) = fed.train(i, Correction::None)?;
        work.push(trained(se));
    }
    let received = exchange(fed, round, false)?;
    for (i, w) in work.iter_mut().enumerate() {
        w.models_aggregated = fed.aggregate_from(i, &received[i], |_| true)?;
    }
    fed.finish_round(round, &work)
}

fn fedprox_round(fed: &mut Federation<'_>, round: u32) -> Result<()> {
    let n = fed.num_clients();
    let mu = fed.setup.hp.prox_mu;
    let mut work = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = fed.clients[i]
            .w_anchor
            .take()
            .unwrap_or_else(|| fed.clients[i].w.clone());
        let (_, se) = fed.train(
            i,
            Correction::Prox {
                anchor: &anchor,
                mu,
            },
        )?;
        fed.clients[i].w_anchor = Some(anchor);
        work.push(trained(se));
    }
    let received = exchange(fed, round, false)?;
    for (i, w) in work.iter_mut().enumerate() {
        w.models_aggregated = fed.aggregate_from(i, &received[i], |_| true)?;
        fed.clients[i].w_anchor = Some(fed.clients[i].w.clone());
    }
    fed.finish_round(round, &work)
}

fn scaffold_round(fed: &mut Federation<'_>, round: u32) -> Result<()> {
    let n = fed.num_clients();
    let p = fed.setup.spec.param_count();
    let lr = fed.setup.hp.learning_rate;
    let mut work = Vec::with_capacity(n);
    for i in 0..n {
        let cv = fed.clients[i]
            .cv
            .take()
            .unwrap_or_else(|| ControlVariate::zeros(p));
        let before = fed.clients[i].w.clone();
        let (steps, se) = fed.train(i, Correction::Scaffold(&cv))?;
        fed.clients[i].cv = Some(scaffold_update_cv(
            &cv,
            &before,
            &fed.clients[i].w,
            lr,
            steps,
        ));
        work.push(trained(se));
    }
    let received = exchange(fed, round, true)?;
    for (i, w) in work.iter_mut().enumerate() {
        let variates: Vec<&ParamVector> = received[i]
            .values()
            .filter_map(|(_, v)| v.as_ref())
            .collect();
        if !variates.is_empty() {
            let global = aggregate(&variates)?;
            if let Some(cv) = fed.clients[i].cv.as_mut() {
                cv.global_c = global;
            }
        }
        w.models_aggregated = fed.aggregate_from(i, &received[i], |_| true)?;
    }
    fed.finish_round(round, &work)
}

/// Runs a baseline for `setup.rounds` rounds. Every round each client trains,
/// sends its model to all neighbors and replaces it with the mean of its own
/// and the received models. FedProx adds a proximal pull towards the last
/// aggregate; SCAFFOLD corrects gradients with control variates and ships its
/// local variate alongside the model, and sets its global variate to the mean
/// of the variates it received.
pub fn run_baseline(kind: BaselineKind, setup: RunSetup<'_>) -> Result<RunOutput> {
    let mut fed = Federation::new(setup)?;
    for round in 1..=setup.rounds {
        match kind {
            BaselineKind::FedAvg => fedavg_round(&mut fed, round)?,
            BaselineKind::FedProx => fedprox_round(&mut fed, round)?,
            BaselineKind::Scaffold => scaffold_round(&mut fed, round)?,
        }
    }
    Ok(fed.into_output())
}
