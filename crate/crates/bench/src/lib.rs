//! Fixtures shared by the benchmarks.

use svote_core::datahub::{client_shards, dirichlet_partition, gen_synthetic, min_shard};
use svote_core::{ClientShard, HyperParams, ModelKind, ModelSpec, Topology};

pub struct Fixture {
    pub spec: ModelSpec,
    pub hp: HyperParams,
    pub topology: Topology,
    pub shards: Vec<ClientShard>,
}

/// Ten-client, six-class synthetic federation on a complete graph.
pub fn federation(seed: u64) -> Fixture {
    let hp = HyperParams {
        learning_rate: 0.05,
        local_epochs: 2,
        batch_size: 16,
        prox_mu: 0.01,
    };
    let data = gen_synthetic(6, 10, 200, 0.6, seed).expect("synthetic data");
    let plan =
        dirichlet_partition(&data, 10, 0.1, min_shard(hp.batch_size, 6), seed).expect("partition");
    Fixture {
        spec: ModelSpec::new(ModelKind::SoftmaxRegression, 10, 6, 0).expect("spec"),
        hp,
        topology: Topology::full(10).expect("topology"),
        shards: client_shards(&data, &plan, 0.2, seed).expect("shards"),
    }
}
