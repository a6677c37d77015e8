//! Heartbeat-driven liveness tracking and service failover planning.
//!
//! Every node broadcasts a periodic heartbeat carrying the services it
//! currently runs. Observers track peers in a [`LivenessTable`]; a peer
//! silent past the offline timeout is declared offline exactly once, and
//! each observer then derives the same failover plan from the desired
//! layout: a displaced service goes to the first alive node in its
//! fallback list, and that target node is the one that executes the
//! takeover. Container start times come from an empirical pool measured
//! on cached images, so they do not depend on image size.

use crate::kernel::{RngStreams, SimTime};
use crate::{NodeId, ServiceIdx};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Start times (microseconds) of redeploy trials on warm image caches,
/// pooled across 8.83 MB, 339 MB, and 5470 MB images: seven trials each.
pub const START_TIME_POOL_US: [u64; 21] = [
    1_330_000, 1_310_000, 1_020_000, 980_000, 930_000, 920_000, 850_000, // 8.83 MB
    940_000, 1_530_000, 980_000, 1_280_000, 1_000_000, 1_330_000, 920_000, // 339 MB
    1_170_000, 1_070_000, 1_300_000, 1_000_000, 1_310_000, 900_000, 1_000_000, // 5470 MB
];

/// How long a relocated container takes to start on its new host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StartTimeModel {
    /// Fixed duration; handy for exact-timing tests.
    Constant(SimTime),
    /// Sample uniformly from the measured pool.
    EmpiricalPool(Vec<SimTime>),
}

impl Default for StartTimeModel {
    fn default() -> Self {
        StartTimeModel::EmpiricalPool(
            START_TIME_POOL_US
                .iter()
                .map(|&us| SimTime::from_micros(us))
                .collect(),
        )
    }
}

impl StartTimeModel {
    /// Draw a start time from the `start-time` RNG stream. The draw is
    /// independent of the service's image size: images are cached on every
    /// node, so start-up dominates.
    pub fn sample(&self, rng: &mut RngStreams) -> SimTime {
        match self {
            StartTimeModel::Constant(t) => *t,
            StartTimeModel::EmpiricalPool(pool) => {
                debug_assert!(!pool.is_empty());
                let idx = rng
                    .draw_index("start-time", pool.len())
                    .expect("start-time stream registered");
                pool[idx]
            }
        }
    }
}

/// One service in the desired layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub image_size_mb: f64,
    pub start_time_model: StartTimeModel,
}

/// Desired placement of one service: primary host plus ordered fallbacks.
#[derive(Debug, Clone, PartialEq)]
pub struct ServicePlacement {
    pub spec: ServiceSpec,
    pub primary: NodeId,
    pub fallbacks: Vec<NodeId>,
}

/// The whole desired layout; index order is the wire service id.
#[derive(Debug, Clone, Default)]
pub struct ServiceLayout {
    pub services: Vec<ServicePlacement>,
}

impl ServiceLayout {
    pub fn get(&self, idx: ServiceIdx) -> &ServicePlacement {
        &self.services[idx.index()]
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = ServiceIdx> {
        (0..self.services.len() as u8).map(ServiceIdx)
    }

    pub fn index_of(&self, name: &str) -> Option<ServiceIdx> {
        self.services
            .iter()
            .position(|p| p.spec.name == name)
            .map(|i| ServiceIdx(i as u8))
    }
}

/// Peer liveness as one observer sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeerState {
    Alive,
    Suspect,
    Offline,
}

#[derive(Debug, Clone, Copy)]
pub struct PeerView {
    pub last_heartbeat: SimTime,
    pub state: PeerState,
}

/// Result of one liveness sweep.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct LivenessDelta {
    pub newly_suspect: Vec<NodeId>,
    pub newly_offline: Vec<NodeId>,
}

/// Per-observer table of peer liveness, driven by heartbeat receipts and
/// periodic sweeps. Transitions are edge-triggered and monotone between
/// heartbeats: alive -> suspect -> offline, with any heartbeat resetting
/// the peer to alive.
#[derive(Debug, Default)]
pub struct LivenessTable {
    peers: BTreeMap<NodeId, PeerView>,
}

impl LivenessTable {
    /// Start tracking `peers`, all considered alive as of `now`.
    pub fn new(peers: impl IntoIterator<Item = NodeId>, now: SimTime) -> Self {
        LivenessTable {
            peers: peers
                .into_iter()
                .map(|n| {
                    (
                        n,
                        PeerView {
                            last_heartbeat: now,
                            state: PeerState::Alive,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn state(&self, node: NodeId) -> Option<PeerState> {
        self.peers.get(&node).map(|v| v.state)
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        matches!(
            self.state(node),
            Some(PeerState::Alive) | Some(PeerState::Suspect)
        )
    }

    pub fn is_offline(&self, node: NodeId) -> bool {
        matches!(self.state(node), Some(PeerState::Offline))
    }

    /// Record a heartbeat. Returns true when the peer was offline and has
    /// come back (a revival edge).
    pub fn record_heartbeat(&mut self, node: NodeId, now: SimTime) -> bool {
        let view = self.peers.entry(node).or_insert(PeerView {
            last_heartbeat: now,
            state: PeerState::Alive,
        });
        let revived = view.state == PeerState::Offline;
        view.last_heartbeat = now;
        view.state = PeerState::Alive;
        revived
    }

    /// Passive liveness: any frame decoded from a peer proves it alive,
    /// even when its periodic heartbeats keep colliding with a long bulk
    /// transfer. Same effect as a heartbeat receipt.
    pub fn record_activity(&mut self, node: NodeId, now: SimTime) -> bool {
        self.record_heartbeat(node, now)
    }

    /// Apply the timeout rules at `now`. Peers past `offline_timeout`
    /// transition to offline exactly once; already-offline peers are not
    /// reported again.
    pub fn sweep(
        &mut self,
        now: SimTime,
        suspect_timeout: SimTime,
        offline_timeout: SimTime,
    ) -> LivenessDelta {
        let mut delta = LivenessDelta::default();
        for (&node, view) in self.peers.iter_mut() {
            let silence = now.saturating_sub(view.last_heartbeat);
            match view.state {
                PeerState::Alive if silence > offline_timeout => {
                    view.state = PeerState::Offline;
                    delta.newly_offline.push(node);
                }
                PeerState::Alive if silence > suspect_timeout => {
                    view.state = PeerState::Suspect;
                    delta.newly_suspect.push(node);
                }
                PeerState::Suspect if silence > offline_timeout => {
                    view.state = PeerState::Offline;
                    delta.newly_offline.push(node);
                }
                _ => {}
            }
        }
        delta
    }
}

/// One entry of a failover plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailoverPlan {
    pub service: ServiceIdx,
    /// First alive fallback, or None when the service is unplaceable.
    pub target: Option<NodeId>,
}

/// Plan the relocation of every service currently hosted on `offline`.
///
/// `placements` maps each service to its believed current host; `alive`
/// is the observer's own liveness view. Pure: identical tables produce
/// identical plans on every observer.
pub fn plan_failover(
    offline: NodeId,
    layout: &ServiceLayout,
    placements: &BTreeMap<ServiceIdx, NodeId>,
    alive: impl Fn(NodeId) -> bool,
) -> Vec<FailoverPlan> {
    let mut plans = Vec::new();
    for idx in layout.indices() {
        if placements.get(&idx) != Some(&offline) {
            continue;
        }
        let target = layout
            .get(idx)
            .fallbacks
            .iter()
            .copied()
            .find(|&n| alive(n));
        plans.push(FailoverPlan {
            service: idx,
            target,
        });
    }
    plans
}

/// Heartbeat body: `[state_byte, service_count, service indices...]`.
/// The state byte is reserved (currently 0).
pub fn heartbeat_body(running: &[ServiceIdx]) -> Vec<u8> {
    let mut body = Vec::with_capacity(2 + running.len());
    body.push(0);
    body.push(running.len() as u8);
    body.extend(running.iter().map(|s| s.0));
    body
}

/// Parse a heartbeat body back into the announced service list.
pub fn parse_heartbeat_body(body: &[u8]) -> Option<Vec<ServiceIdx>> {
    if body.len() < 2 {
        return None;
    }
    let count = body[1] as usize;
    if body.len() != 2 + count {
        return None;
    }
    Some(body[2..].iter().map(|&b| ServiceIdx(b)).collect())
}
