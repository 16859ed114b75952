//! Similarity-based voting for client selection in decentralized federated
//! learning.
//!
//! The crate is a deterministic, single-process simulator. Clients hold
//! desk-scale models ([`learner`]) trained on non-IID shards ([`datahub`]),
//! exchange messages over a synchronous bus with byte-exact accounting
//! ([`netsim`]), and are driven by round engines ([`protocol`]) for the
//! voting protocol and the FedAvg, FedProx and SCAFFOLD baselines.
//! [`metrics`] turns the per-round records into F1, energy and work figures.
//!
//! Every random stream is derived from one master seed through
//! [`seed::derive_seed`], so a run is bit-reproducible.

pub mod datahub;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod netsim;
pub mod protocol;
pub mod seed;

pub use datahub::{LabeledDataset, PartitionPlan};
pub use error::{Error, Result};
pub use learner::{ControlVariate, HyperParams, ModelKind, ModelSpec, ParamVector};
pub use metrics::{ClientRoundRecord, EnergyCoeffs, RoundRecord};
pub use netsim::{Topology, TrafficLedger};
pub use protocol::{Action, BaselineKind, ClientShard, RunOutput, RunSetup, SVoteConfig, VMinRule};
