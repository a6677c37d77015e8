//! Deterministic discrete-event simulator for a self-healing edge cluster
//! linked by LoRa radios.
//!
//! The library models a small cluster of nodes that exchange metrics, file
//! bundles, and heartbeats over a shared LoRa channel, detect failed peers,
//! and relocate services to fallback hosts. It is organised in layers:
//!
//! - [`kernel`]: virtual clock, event queue, and seeded named RNG streams.
//! - [`radio`]: time-on-air, path loss, duty-cycle accounting, collisions.
//! - [`codec`]: on-air frame format, fragmentation, and reassembly.
//! - [`transfer`]: reliable selective-repeat delivery and radio-gate access.
//! - [`cluster`]: heartbeats, liveness tracking, and failover planning.
//! - [`metrics`]: metric sampling, ingestion latency, and bundle sync.
//! - [`scenario`]: config files, validation, and named experiment presets.
//! - [`engine`]: the simulation loop tying the layers together.
//! - [`summary`]: run statistics, CSV export, and trace invariant checks.
//!
//! Everything is single-threaded and fully deterministic: a scenario plus a
//! seed reproduces the same event sequence and byte-identical output files.

pub mod cluster;
pub mod codec;
pub mod engine;
pub mod kernel;
pub mod metrics;
pub mod radio;
pub mod scenario;
pub mod summary;
pub mod transfer;

use serde::{Deserialize, Serialize};

/// Identifies a node on the wire. Value 255 is reserved for broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u8);

impl NodeId {
    /// Reserved destination meaning "all nodes in range".
    pub const BROADCAST: NodeId = NodeId(255);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_broadcast() {
            write!(f, "broadcast")
        } else {
            write!(f, "n{}", self.0)
        }
    }
}

/// Index of a service in the scenario's service registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceIdx(pub u8);

impl ServiceIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}
