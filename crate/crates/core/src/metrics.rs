//! Metric packets, ingestion-side latency derivation, the append-only
//! time-series store, and versioned file sync as hash-chained bundles.
//!
//! A metrics packet is timestamped at sampling time; when it reaches the
//! node hosting the ingestor service, end-to-end latency is the gap
//! between that origin timestamp and ingestion. The store is a single
//! logical database that rides with the ingestor service, persisted as
//! line-oriented text records.
//!
//! File sync models repository bundles as opaque blobs: applying a bundle
//! whose base version matches advances the node's version; anything else
//! is rejected and triggers a full-resync request.

use crate::kernel::SimTime;
use crate::{NodeId, ServiceIdx};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics payload is malformed ({0} bytes)")]
    MalformedPacket(usize),
    #[error("bundle payload is malformed ({0} bytes)")]
    MalformedBundle(usize),
    #[error("bundle base and target versions are equal")]
    EmptyDelta,
    #[error("bundle base {base} does not match current version {current}")]
    BaseMismatch { base: Version, current: Version },
}

/// One sampled metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsPacket {
    pub source: NodeId,
    /// Strictly increasing per source node.
    pub sequence: u32,
    /// Sampling time; latency is measured from here.
    pub origin_timestamp: SimTime,
    pub cpu_percent: f64,
    pub memory_percent: f64,
    pub running_services: Vec<ServiceIdx>,
}

impl MetricsPacket {
    /// Compact big-endian wire encoding (gauges as centi-percent).
    pub fn encode(&self) -> Vec<u8> {
        let cpu = (self.cpu_percent * 100.0).round().clamp(0.0, 10_000.0) as u16;
        let mem = (self.memory_percent * 100.0).round().clamp(0.0, 10_000.0) as u16;
        let mut out = Vec::with_capacity(18 + self.running_services.len());
        out.push(self.source.0);
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.origin_timestamp.as_micros().to_be_bytes());
        out.extend_from_slice(&cpu.to_be_bytes());
        out.extend_from_slice(&mem.to_be_bytes());
        out.push(self.running_services.len() as u8);
        out.extend(self.running_services.iter().map(|s| s.0));
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, MetricsError> {
        if payload.len() < 18 {
            return Err(MetricsError::MalformedPacket(payload.len()));
        }
        let count = payload[17] as usize;
        if payload.len() != 18 + count {
            return Err(MetricsError::MalformedPacket(payload.len()));
        }
        Ok(MetricsPacket {
            source: NodeId(payload[0]),
            sequence: u32::from_be_bytes(payload[1..5].try_into().unwrap()),
            origin_timestamp: SimTime::from_micros(u64::from_be_bytes(
                payload[5..13].try_into().unwrap(),
            )),
            cpu_percent: u16::from_be_bytes(payload[13..15].try_into().unwrap()) as f64 / 100.0,
            memory_percent: u16::from_be_bytes(payload[15..17].try_into().unwrap()) as f64 / 100.0,
            running_services: payload[18..].iter().map(|&b| ServiceIdx(b)).collect(),
        })
    }
}

/// One successfully ingested packet with its derived end-to-end latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub source: NodeId,
    pub sequence: u32,
    pub origin_us: u64,
    pub ingest_us: u64,
    pub latency_us: u64,
}

/// The logical time-series database. Exactly one node (whichever hosts
/// the ingestor service) writes to it at a time; the store itself rides
/// with the service across failovers, like the database volume would.
#[derive(Debug, Default)]
pub struct TimeSeriesStore {
    records: Vec<LatencyRecord>,
    lines: Vec<String>,
    seen: BTreeSet<(NodeId, u32)>,
    duplicates_dropped: u64,
}

impl TimeSeriesStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ingest a packet arriving at `t_arrival`. Returns the new latency
    /// record, or None for a duplicate (source, sequence) replay.
    pub fn ingest(&mut self, packet: &MetricsPacket, t_arrival: SimTime) -> Option<LatencyRecord> {
        if !self.seen.insert((packet.source, packet.sequence)) {
            self.duplicates_dropped += 1;
            return None;
        }
        debug_assert!(t_arrival >= packet.origin_timestamp);
        let latency = t_arrival.saturating_sub(packet.origin_timestamp);
        let record = LatencyRecord {
            source: packet.source,
            sequence: packet.sequence,
            origin_us: packet.origin_timestamp.as_micros(),
            ingest_us: t_arrival.as_micros(),
            latency_us: latency.as_micros(),
        };
        self.lines.push(format!(
            "node_metrics,source={},seq={} cpu={:.2},mem={:.2},latency_us={} {}",
            packet.source,
            packet.sequence,
            packet.cpu_percent,
            packet.memory_percent,
            record.latency_us,
            record.ingest_us,
        ));
        self.records.push(record);
        Some(record)
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn duplicates_dropped(&self) -> u64 {
        self.duplicates_dropped
    }
}

/// Content hash identifying a file-tree version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version(pub [u8; 32]);

impl Version {
    /// The empty tree every node starts from.
    pub const INITIAL: Version = Version([0; 32]);

    pub fn short_hex(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Display for Version {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.short_hex())
    }
}

/// A versioned opaque blob carrying the delta between two tree versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub id: [u8; 32],
    pub base_version: Version,
    pub new_version: Version,
    pub blob: Vec<u8>,
}

impl Bundle {
    pub fn size_bytes(&self) -> usize {
        self.blob.len()
    }
}

/// Deterministically build the bundle taking `from` to `to` with a blob of
/// `payload_size` synthetic bytes. Identical inputs give identical bundles
/// and hashes.
pub fn make_bundle(from: Version, to: Version, payload_size: usize) -> Result<Bundle, MetricsError> {
    if from == to {
        return Err(MetricsError::EmptyDelta);
    }
    let mut seed_hasher = Sha256::new();
    seed_hasher.update(from.0);
    seed_hasher.update(to.0);
    seed_hasher.update((payload_size as u64).to_be_bytes());
    let seed: [u8; 32] = seed_hasher.finalize().into();

    // Stream the blob from the seed; content is arbitrary but reproducible.
    let mut blob = Vec::with_capacity(payload_size);
    let mut counter: u64 = 0;
    while blob.len() < payload_size {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(counter.to_be_bytes());
        let block: [u8; 32] = h.finalize().into();
        let take = (payload_size - blob.len()).min(32);
        blob.extend_from_slice(&block[..take]);
        counter += 1;
    }

    let mut id_hasher = Sha256::new();
    id_hasher.update(from.0);
    id_hasher.update(to.0);
    id_hasher.update(&blob);
    Ok(Bundle {
        id: id_hasher.finalize().into(),
        base_version: from,
        new_version: to,
        blob,
    })
}

/// A node's view of the synced file tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeFileState {
    pub current_version: Version,
}

impl Default for NodeFileState {
    fn default() -> Self {
        NodeFileState {
            current_version: Version::INITIAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Advanced,
    /// The bundle was already applied; re-application is a no-op success.
    AlreadyApplied,
}

/// Apply a bundle: version advances only when the base matches. A stale
/// base is rejected so the node can request a full resync.
pub fn apply_bundle(state: &mut NodeFileState, bundle: &Bundle) -> Result<ApplyOutcome, MetricsError> {
    if state.current_version == bundle.new_version {
        return Ok(ApplyOutcome::AlreadyApplied);
    }
    if state.current_version != bundle.base_version {
        return Err(MetricsError::BaseMismatch {
            base: bundle.base_version,
            current: state.current_version,
        });
    }
    state.current_version = bundle.new_version;
    Ok(ApplyOutcome::Advanced)
}

/// Wire payloads for the BUNDLE_DATA kind (pre-base64):
/// a bundle push or a full-resync request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BundlePayload {
    Push(Bundle),
    /// Receiver asks the publisher for a bundle from `current` to head.
    ResyncRequest { current: Version },
}

impl BundlePayload {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            BundlePayload::Push(bundle) => {
                let mut out = Vec::with_capacity(65 + bundle.blob.len());
                out.push(0);
                out.extend_from_slice(&bundle.base_version.0);
                out.extend_from_slice(&bundle.new_version.0);
                out.extend_from_slice(&bundle.blob);
                out
            }
            BundlePayload::ResyncRequest { current } => {
                let mut out = Vec::with_capacity(33);
                out.push(1);
                out.extend_from_slice(&current.0);
                out
            }
        }
    }

    pub fn decode(payload: &[u8]) -> Result<Self, MetricsError> {
        match payload.first() {
            Some(0) if payload.len() >= 65 => {
                let base = Version(payload[1..33].try_into().unwrap());
                let new = Version(payload[33..65].try_into().unwrap());
                let blob = payload[65..].to_vec();
                let mut id_hasher = Sha256::new();
                id_hasher.update(base.0);
                id_hasher.update(new.0);
                id_hasher.update(&blob);
                Ok(BundlePayload::Push(Bundle {
                    id: id_hasher.finalize().into(),
                    base_version: base,
                    new_version: new,
                    blob,
                }))
            }
            Some(1) if payload.len() == 33 => Ok(BundlePayload::ResyncRequest {
                current: Version(payload[1..33].try_into().unwrap()),
            }),
            _ => Err(MetricsError::MalformedBundle(payload.len())),
        }
    }
}

/// Derive the publisher's next head version from the previous one.
pub fn next_version(prev: Version, revision: u64) -> Version {
    let mut h = Sha256::new();
    h.update(prev.0);
    h.update(revision.to_be_bytes());
    Version(h.finalize().into())
}
