//! Reliable message delivery over the lossy radio: per-node serialized
//! radio access, receiver-driven NACKs with selective retransmission, a
//! sender-side retry backstop, and bounded attempts.
//!
//! The state machines are pure: every handler returns a list of
//! [`Action`]s (frames to queue, timers to arm, payloads to deliver) and
//! the engine executes them. Timers use generation counters, so re-arming
//! or cancelling is just bumping the generation; stale firings are ignored.
//!
//! Control frame bodies, bit-exact:
//! - ACK: empty body; the header's `message_id` names the acked message.
//! - NACK: consecutive big-endian u16 fragment indices still missing.

use crate::codec::{
    encode_message, BufferSet, CodecError, FragmentStatus, Frame, FrameHeader, FrameKind,
    ReassemblyKey, MAX_BODY_BYTES,
};
use crate::kernel::SimTime;
use crate::NodeId;
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("reliable transfers must be unicast, not broadcast")]
    BroadcastNotReliable,
    #[error("destination equals source")]
    SelfAddressed,
    #[error("payload of {len} bytes would need {frames} frames; best-effort sends exactly one")]
    NeedsFragmentation { len: usize, frames: usize },
    #[error("control body of {0} bytes exceeds the single-frame capacity")]
    BodyTooLarge(usize),
}

/// Protocol timing and retry knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Retries allowed per fragment beyond its first transmission.
    pub max_retries: u32,
    /// Lower bound for the receiver's quiet-gap timer.
    pub receiver_gap_floor: SimTime,
    /// NACK rounds a receiver spends on one message before giving up.
    pub nack_round_limit: u32,
    /// Sender ack timeout as a multiple of the receiver gap timeout.
    pub ack_timeout_factor: u32,
    /// Reassembly buffers idle this long are dropped (message lost).
    pub reassembly_idle_timeout: SimTime,
    /// Cap on one application message before encoding.
    pub max_message_bytes: usize,
    /// Minimum spacing between ACK re-sends for an already-completed
    /// message (soaks up duplicate final fragments).
    pub ack_resend_min_gap: SimTime,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            max_retries: 5,
            receiver_gap_floor: SimTime::from_secs(2),
            nack_round_limit: 5,
            ack_timeout_factor: 2,
            reassembly_idle_timeout: SimTime::from_mins(10),
            max_message_bytes: crate::codec::DEFAULT_MAX_MESSAGE_BYTES,
            ack_resend_min_gap: SimTime::from_secs(2),
        }
    }
}

/// Effects a state transition asks the engine to carry out.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Hand a frame to the radio gate.
    Queue(GateEntry),
    /// (Re-)arm the receiver quiet-gap timer for an inbound message.
    ArmReceiverGap {
        key: ReassemblyKey,
        delay: SimTime,
        gen: u64,
    },
    /// (Re-)arm the sender's ack-timeout backstop for an outbound message.
    ArmSenderRetry {
        message_id: u16,
        delay: SimTime,
        gen: u64,
    },
    /// Hand a fully reassembled payload (or single control body) upward.
    Deliver {
        kind: FrameKind,
        source: NodeId,
        payload: Vec<u8>,
    },
    /// Outbound transfer fully acknowledged.
    Completed {
        message_id: u16,
        dest: NodeId,
        kind: FrameKind,
    },
    /// Outbound transfer gave up: some fragment exhausted its retries.
    Failed {
        message_id: u16,
        dest: NodeId,
        kind: FrameKind,
    },
    /// Receiver abandoned an inbound message (NACK rounds or idle expiry).
    Abandoned { key: ReassemblyKey },
    /// Protocol violation observed and dropped; never fatal.
    Violation { detail: String },
}

/// Per-fragment lifecycle inside an outbound transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FragState {
    /// Waiting in the radio gate.
    Queued,
    /// On the air right now.
    InFlight,
    /// Transmitted, not yet acknowledged.
    Sent,
    Acked,
}

/// Sender-side bookkeeping for one reliable message.
#[derive(Debug)]
pub struct OutboundTransfer {
    pub dest: NodeId,
    pub kind: FrameKind,
    frames: Vec<Frame>,
    state: Vec<FragState>,
    attempts: Vec<u32>,
    retry_gen: u64,
}

impl OutboundTransfer {
    pub fn fragment_total(&self) -> u16 {
        self.frames.len() as u16
    }

    fn airborne(&self) -> usize {
        self.state
            .iter()
            .filter(|s| matches!(s, FragState::Queued | FragState::InFlight))
            .count()
    }

    fn all_acked(&self) -> bool {
        self.state.iter().all(|s| *s == FragState::Acked)
    }
}

/// FIFO queue serializing one node's radio access: at most one frame in
/// flight per node, departures in arrival order.
#[derive(Debug, Default)]
pub struct RadioAccessGate {
    queue: VecDeque<GateEntry>,
    /// A frame from this gate is currently on the air.
    pub busy: bool,
    /// A duty-cycle wakeup event is already scheduled.
    pub wake_scheduled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateEntry {
    pub frame: Frame,
    /// This queuing is a retransmission (stats only).
    pub retransmit: bool,
    /// Fragment of a tracked reliable transfer: it must be claimed via
    /// [`NodeTransferState::claim_for_tx`] before going on air, and is
    /// dropped when its transfer has meanwhile completed or failed.
    pub reliable: bool,
}

impl RadioAccessGate {
    pub fn push(&mut self, entry: GateEntry) {
        self.queue.push_back(entry);
    }

    pub fn front(&self) -> Option<&GateEntry> {
        self.queue.front()
    }

    pub fn pop(&mut self) -> Option<GateEntry> {
        self.queue.pop_front()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn clear(&mut self) {
        self.queue.clear();
        self.busy = false;
        self.wake_scheduled = false;
    }
}

/// Receiver-side progress for one inbound message.
#[derive(Debug, Default)]
struct RxProgress {
    gap_gen: u64,
    nack_rounds: u32,
}

#[derive(Debug)]
struct CompletedInfo {
    at: SimTime,
    last_ack_resend: SimTime,
}

/// Serialize missing fragment indices into a NACK body (big-endian u16s).
/// At most [`MAX_BODY_BYTES`]/2 indices fit; later rounds cover the rest.
pub fn nack_body(missing: &[u16]) -> Vec<u8> {
    missing
        .iter()
        .take(MAX_BODY_BYTES / 2)
        .flat_map(|idx| idx.to_be_bytes())
        .collect()
}

/// Parse a NACK body back into fragment indices.
pub fn parse_nack_body(body: &[u8]) -> Result<Vec<u16>, TransferError> {
    if body.len() % 2 != 0 {
        return Err(TransferError::BodyTooLarge(body.len()));
    }
    Ok(body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect())
}

/// All protocol state owned by one node: outbound transfers, inbound
/// reassembly, and the radio gate.
pub struct NodeTransferState {
    node: NodeId,
    config: TransferConfig,
    /// Airtime of a maximum-size frame, used to scale timeouts.
    airtime_full: SimTime,
    next_message_id: u16,
    outbound: BTreeMap<u16, OutboundTransfer>,
    buffers: BufferSet,
    rx_progress: BTreeMap<ReassemblyKey, RxProgress>,
    completed: BTreeMap<ReassemblyKey, CompletedInfo>,
    pub gate: RadioAccessGate,
}

impl NodeTransferState {
    pub fn new(node: NodeId, config: TransferConfig, airtime_full: SimTime) -> Self {
        NodeTransferState {
            node,
            config,
            airtime_full,
            next_message_id: 0,
            outbound: BTreeMap::new(),
            buffers: BufferSet::new(),
            rx_progress: BTreeMap::new(),
            completed: BTreeMap::new(),
            gate: RadioAccessGate::default(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> &TransferConfig {
        &self.config
    }

    pub fn outbound(&self, message_id: u16) -> Option<&OutboundTransfer> {
        self.outbound.get(&message_id)
    }

    pub fn outbound_live(&self) -> usize {
        self.outbound.len()
    }

    pub fn outbound_ids(&self) -> Vec<u16> {
        self.outbound.keys().copied().collect()
    }

    /// Quiet-gap timeout for a message of `total` fragments: twice the
    /// full-frame airtime per fragment, floored.
    fn receiver_gap(&self, total: u16) -> SimTime {
        (self.airtime_full * (2 * total as u64)).max(self.config.receiver_gap_floor)
    }

    fn ack_timeout(&self, total: u16) -> SimTime {
        self.receiver_gap(total) * self.config.ack_timeout_factor as u64
    }

    fn alloc_message_id(&mut self) -> u16 {
        loop {
            let id = self.next_message_id;
            self.next_message_id = self.next_message_id.wrapping_add(1);
            if !self.outbound.contains_key(&id) {
                return id;
            }
        }
    }

    /// Start a reliable unicast transfer. Frames are queued in index order;
    /// the retry backstop arms once the last of them has left the radio.
    pub fn send_reliable(
        &mut self,
        dest: NodeId,
        kind: FrameKind,
        payload: &[u8],
    ) -> Result<(u16, Vec<Action>), TransferError> {
        if dest.is_broadcast() {
            return Err(TransferError::BroadcastNotReliable);
        }
        if dest == self.node {
            return Err(TransferError::SelfAddressed);
        }
        let message_id = self.alloc_message_id();
        let frames = encode_message(
            kind,
            self.node,
            dest,
            message_id,
            payload,
            self.config.max_message_bytes,
        )?;
        let n = frames.len();
        let actions = frames
            .iter()
            .map(|frame| {
                Action::Queue(GateEntry {
                    frame: frame.clone(),
                    retransmit: false,
                    reliable: true,
                })
            })
            .collect();
        self.outbound.insert(
            message_id,
            OutboundTransfer {
                dest,
                kind,
                frames,
                state: vec![FragState::Queued; n],
                attempts: vec![1; n],
                retry_gen: 0,
            },
        );
        Ok((message_id, actions))
    }

    /// Fire-and-forget single frame; broadcast allowed, no timers.
    pub fn send_best_effort(
        &mut self,
        dest: NodeId,
        kind: FrameKind,
        payload: &[u8],
    ) -> Result<Vec<Action>, TransferError> {
        let message_id = self.alloc_message_id();
        let frame = if kind.is_data() {
            let frames = encode_message(
                kind,
                self.node,
                dest,
                message_id,
                payload,
                self.config.max_message_bytes,
            )?;
            if frames.len() != 1 {
                return Err(TransferError::NeedsFragmentation {
                    len: payload.len(),
                    frames: frames.len(),
                });
            }
            frames.into_iter().next().expect("one frame")
        } else {
            if payload.len() > MAX_BODY_BYTES {
                return Err(TransferError::BodyTooLarge(payload.len()));
            }
            Frame::new(
                FrameHeader::new(kind, self.node, dest, message_id, 0, 1),
                payload.to_vec(),
            )
        };
        Ok(vec![Action::Queue(GateEntry {
            frame,
            retransmit: false,
            reliable: false,
        })])
    }

    /// Whether a queued reliable fragment still wants transmitting. False
    /// when its transfer completed, failed, or the fragment was
    /// acknowledged meanwhile; the gate then drops the entry.
    pub fn is_wanted(&self, frame: &Frame) -> bool {
        match self.outbound.get(&frame.header.message_id) {
            Some(transfer) if frame.header.kind == transfer.kind => {
                transfer.state[frame.header.fragment_index as usize] == FragState::Queued
            }
            _ => false,
        }
    }

    /// The gate accepted the fragment onto the air.
    pub fn mark_in_flight(&mut self, frame: &Frame) {
        if let Some(transfer) = self.outbound.get_mut(&frame.header.message_id) {
            if frame.header.kind == transfer.kind {
                let idx = frame.header.fragment_index as usize;
                debug_assert_eq!(transfer.state[idx], FragState::Queued);
                transfer.state[idx] = FragState::InFlight;
            }
        }
    }

    /// Convenience for tests: check and mark in one step.
    pub fn claim_for_tx(&mut self, frame: &Frame) -> bool {
        if self.is_wanted(frame) {
            self.mark_in_flight(frame);
            true
        } else {
            false
        }
    }

    /// One of this node's frames finished transmitting. Arms the retry
    /// backstop once nothing of the transfer remains queued or in flight.
    pub fn on_frame_tx_complete(&mut self, frame: &Frame) -> Vec<Action> {
        let Some(transfer) = self.outbound.get_mut(&frame.header.message_id) else {
            return Vec::new();
        };
        if frame.header.kind != transfer.kind {
            return Vec::new();
        }
        let idx = frame.header.fragment_index as usize;
        if transfer.state[idx] == FragState::InFlight {
            transfer.state[idx] = FragState::Sent;
        }
        if transfer.airborne() == 0 && !transfer.all_acked() {
            transfer.retry_gen += 1;
            let gen = transfer.retry_gen;
            let message_id = frame.header.message_id;
            let delay = self.ack_timeout(
                self.outbound[&message_id].fragment_total(),
            );
            return vec![Action::ArmSenderRetry {
                message_id,
                delay,
                gen,
            }];
        }
        Vec::new()
    }

    /// Entry point for every frame the radio delivered to this node.
    /// Caller guarantees `frame.dest` is this node or broadcast.
    pub fn on_frame_received(&mut self, frame: &Frame, now: SimTime) -> Vec<Action> {
        match frame.header.kind {
            FrameKind::Ack => self.on_ack(frame),
            FrameKind::Nack => self.on_nack(frame),
            FrameKind::Heartbeat => vec![Action::Deliver {
                kind: FrameKind::Heartbeat,
                source: frame.header.source,
                payload: frame.body.clone(),
            }],
            kind if kind.is_data() => self.on_data(frame, now),
            kind => vec![Action::Violation {
                detail: format!("unroutable frame kind {kind:?}"),
            }],
        }
    }

    fn on_data(&mut self, frame: &Frame, now: SimTime) -> Vec<Action> {
        let key = ReassemblyKey {
            source: frame.header.source,
            message_id: frame.header.message_id,
        };
        // Duplicate of a message already delivered upward: the ACK most
        // likely got lost. Re-ack on the round's final fragment, which
        // arrives exactly when the sender's radio falls idle; a re-ack
        // fired mid-round would reach a half-duplex sender that is still
        // transmitting and hears nothing. Never deliver twice.
        if let Some(info) = self.completed.get_mut(&key) {
            let mut actions = Vec::new();
            let is_last = frame.header.fragment_index + 1 == frame.header.fragment_total;
            if is_last && now.saturating_sub(info.last_ack_resend) >= self.config.ack_resend_min_gap
            {
                info.last_ack_resend = now;
                actions.push(Action::Queue(GateEntry {
                    frame: control_frame(FrameKind::Ack, self.node, key, &[]),
                    retransmit: false,
                    reliable: false,
                }));
            }
            return actions;
        }
        match self.buffers.accept_fragment(frame, now) {
            Ok(FragmentStatus::Complete { kind, payload }) => {
                // Cancel any pending gap timer by dropping its state.
                self.rx_progress.remove(&key);
                self.completed.insert(
                    key,
                    CompletedInfo {
                        at: now,
                        last_ack_resend: now,
                    },
                );
                vec![
                    Action::Queue(GateEntry {
                        frame: control_frame(FrameKind::Ack, self.node, key, &[]),
                        retransmit: false,
                        reliable: false,
                    }),
                    Action::Deliver {
                        kind,
                        source: key.source,
                        payload,
                    },
                ]
            }
            Ok(FragmentStatus::Incomplete { .. }) => {
                let gap = self.receiver_gap(frame.header.fragment_total);
                let progress = self.rx_progress.entry(key).or_default();
                progress.gap_gen += 1;
                vec![Action::ArmReceiverGap {
                    key,
                    delay: gap,
                    gen: progress.gap_gen,
                }]
            }
            Ok(FragmentStatus::Duplicate) => Vec::new(),
            Err(err) => vec![Action::Violation {
                detail: format!("dropping fragment from {}: {err}", key.source),
            }],
        }
    }

    fn on_ack(&mut self, frame: &Frame) -> Vec<Action> {
        let message_id = frame.header.message_id;
        match self.outbound.get(&message_id) {
            Some(transfer) if transfer.dest == frame.header.source => {
                let transfer = self.outbound.remove(&message_id).expect("present");
                vec![Action::Completed {
                    message_id,
                    dest: transfer.dest,
                    kind: transfer.kind,
                }]
            }
            Some(_) => vec![Action::Violation {
                detail: format!(
                    "ack for message {message_id} from {} which is not its destination",
                    frame.header.source
                ),
            }],
            None => vec![Action::Violation {
                detail: format!("stale ack for unknown message {message_id}"),
            }],
        }
    }

    fn on_nack(&mut self, frame: &Frame) -> Vec<Action> {
        let message_id = frame.header.message_id;
        let indices = match parse_nack_body(&frame.body) {
            Ok(indices) => indices,
            Err(_) => {
                return vec![Action::Violation {
                    detail: format!("malformed nack body of {} bytes", frame.body.len()),
                }]
            }
        };
        let Some(transfer) = self.outbound.get_mut(&message_id) else {
            return vec![Action::Violation {
                detail: format!("stale nack for unknown message {message_id}"),
            }];
        };
        if transfer.dest != frame.header.source {
            return vec![Action::Violation {
                detail: format!("nack for message {message_id} from a non-destination"),
            }];
        }
        let mut actions = Vec::new();
        for idx in indices {
            let i = idx as usize;
            if i >= transfer.frames.len() {
                actions.push(Action::Violation {
                    detail: format!("nack index {idx} out of range for message {message_id}"),
                });
                continue;
            }
            // Only fragments that already went out and vanished get
            // retransmitted; queued or in-flight copies are on their way.
            if transfer.state[i] != FragState::Sent {
                continue;
            }
            if transfer.attempts[i] >= self.config.max_retries + 1 {
                return self.fail_transfer(message_id);
            }
            transfer.attempts[i] += 1;
            transfer.state[i] = FragState::Queued;
            actions.push(Action::Queue(GateEntry {
                frame: transfer.frames[i].clone(),
                retransmit: true,
                reliable: true,
            }));
        }
        // Progress is happening; disarm the pending backstop. It re-arms
        // when the retransmissions finish transmitting.
        if actions.iter().any(|a| matches!(a, Action::Queue(_))) {
            transfer.retry_gen += 1;
        }
        actions
    }

    /// Sender ack-timeout fired. Retransmits every unacknowledged
    /// fragment, or fails the transfer once attempts run out.
    pub fn on_sender_retry_timeout(&mut self, message_id: u16, gen: u64) -> Vec<Action> {
        let Some(transfer) = self.outbound.get_mut(&message_id) else {
            return Vec::new();
        };
        if transfer.retry_gen != gen {
            return Vec::new();
        }
        let mut actions = Vec::new();
        for i in 0..transfer.frames.len() {
            if transfer.state[i] != FragState::Sent {
                continue;
            }
            if transfer.attempts[i] >= self.config.max_retries + 1 {
                return self.fail_transfer(message_id);
            }
            transfer.attempts[i] += 1;
            transfer.state[i] = FragState::Queued;
            actions.push(Action::Queue(GateEntry {
                frame: transfer.frames[i].clone(),
                retransmit: true,
                reliable: true,
            }));
        }
        actions
    }

    fn fail_transfer(&mut self, message_id: u16) -> Vec<Action> {
        let transfer = self.outbound.remove(&message_id).expect("present");
        vec![Action::Failed {
            message_id,
            dest: transfer.dest,
            kind: transfer.kind,
        }]
    }

    /// Receiver quiet-gap timer fired: request exactly the missing
    /// fragments, or give up after too many rounds.
    pub fn on_receiver_gap_timeout(&mut self, key: ReassemblyKey, gen: u64) -> Vec<Action> {
        let Some(progress) = self.rx_progress.get_mut(&key) else {
            return Vec::new();
        };
        if progress.gap_gen != gen {
            return Vec::new();
        }
        let missing = match self.buffers.missing_fragments(&key) {
            Ok(missing) if !missing.is_empty() => missing,
            _ => return Vec::new(),
        };
        progress.nack_rounds += 1;
        if progress.nack_rounds > self.config.nack_round_limit {
            self.rx_progress.remove(&key);
            self.buffers.drop_buffer(&key);
            return vec![Action::Abandoned { key }];
        }
        progress.gap_gen += 1;
        let gen = progress.gap_gen;
        let total = self
            .buffers
            .get(&key)
            .map(|b| b.expected_total)
            .unwrap_or(1);
        vec![
            Action::Queue(GateEntry {
                frame: control_frame(FrameKind::Nack, self.node, key, &nack_body(&missing)),
                retransmit: false,
                reliable: false,
            }),
            Action::ArmReceiverGap {
                key,
                delay: self.receiver_gap(total),
                gen,
            },
        ]
    }

    /// Periodic sweep: drop idle reassembly buffers and old completion
    /// records.
    pub fn expire_reassembly(&mut self, now: SimTime) -> Vec<Action> {
        let timeout = self.config.reassembly_idle_timeout;
        let expired = self.buffers.expire_idle(now, timeout);
        let mut actions = Vec::new();
        for key in expired {
            self.rx_progress.remove(&key);
            actions.push(Action::Abandoned { key });
        }
        self.completed
            .retain(|_, info| now.saturating_sub(info.at) <= timeout);
        actions
    }

    /// Wipe all protocol state (node killed or rebooted).
    pub fn reset(&mut self) {
        self.outbound.clear();
        self.buffers = BufferSet::new();
        self.rx_progress.clear();
        self.completed.clear();
        self.gate.clear();
    }
}

/// Build an ACK or NACK aimed back at a message's source.
fn control_frame(kind: FrameKind, from: NodeId, key: ReassemblyKey, body: &[u8]) -> Frame {
    Frame::new(
        FrameHeader::new(kind, from, key.source, key.message_id, 0, 1),
        body.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(node: u8) -> NodeTransferState {
        NodeTransferState::new(
            NodeId(node),
            TransferConfig::default(),
            SimTime::from_micros(394_496),
        )
    }

    fn queued_frames(actions: &[Action]) -> Vec<&Frame> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Queue(entry) => Some(&entry.frame),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn reliable_send_queues_fragments_in_index_order() {
        let mut s = state(1);
        let (_, actions) = s
            .send_reliable(NodeId(2), FrameKind::Data, &[0xCD; 600])
            .unwrap();
        let frames = queued_frames(&actions);
        assert_eq!(frames.len(), 4);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.header.fragment_index, i as u16);
            assert_eq!(f.header.fragment_total, 4);
        }
    }

    #[test]
    fn reliable_send_rejects_broadcast_and_self() {
        let mut s = state(1);
        assert_eq!(
            s.send_reliable(NodeId::BROADCAST, FrameKind::Data, b"x")
                .unwrap_err(),
            TransferError::BroadcastNotReliable
        );
        assert_eq!(
            s.send_reliable(NodeId(1), FrameKind::Data, b"x").unwrap_err(),
            TransferError::SelfAddressed
        );
    }

    #[test]
    fn best_effort_rejects_multi_frame_payloads() {
        let mut s = state(1);
        // 300 raw bytes -> 400 base64 chars -> 2 frames.
        let err = s
            .send_best_effort(NodeId::BROADCAST, FrameKind::Data, &[1u8; 300])
            .unwrap_err();
        assert_eq!(
            err,
            TransferError::NeedsFragmentation {
                len: 300,
                frames: 2
            }
        );
        // A heartbeat body fits raw.
        let actions = s
            .send_best_effort(NodeId::BROADCAST, FrameKind::Heartbeat, &[2, 0, 1])
            .unwrap();
        assert_eq!(queued_frames(&actions).len(), 1);
    }

    #[test]
    fn single_fragment_exchange_completes_with_one_ack() {
        let mut tx = state(1);
        let mut rx = state(2);
        let (msg_id, actions) = tx.send_reliable(NodeId(2), FrameKind::Data, b"ping").unwrap();
        let frame = queued_frames(&actions)[0].clone();
        assert!(tx.claim_for_tx(&frame));
        tx.on_frame_tx_complete(&frame);

        let rx_actions = rx.on_frame_received(&frame, SimTime::from_millis(100));
        let ack = queued_frames(&rx_actions)[0].clone();
        assert_eq!(ack.header.kind, FrameKind::Ack);
        assert!(ack.body.is_empty());
        assert!(rx_actions.iter().any(|a| matches!(
            a,
            Action::Deliver { kind: FrameKind::Data, payload, .. } if payload == b"ping"
        )));

        let tx_actions = tx.on_frame_received(&ack, SimTime::from_millis(200));
        assert!(tx_actions
            .iter()
            .any(|a| matches!(a, Action::Completed { message_id, .. } if *message_id == msg_id)));
        assert_eq!(tx.outbound_live(), 0);
    }

    #[test]
    fn duplicate_completion_reacks_but_never_redelivers() {
        let mut rx = state(2);
        let mut tx = state(1);
        let (_, actions) = tx.send_reliable(NodeId(2), FrameKind::Data, b"once").unwrap();
        let frame = queued_frames(&actions)[0].clone();
        let first = rx.on_frame_received(&frame, SimTime::from_secs(1));
        assert_eq!(
            first
                .iter()
                .filter(|a| matches!(a, Action::Deliver { .. }))
                .count(),
            1
        );
        let second = rx.on_frame_received(&frame, SimTime::from_secs(10));
        assert!(second.iter().all(|a| !matches!(a, Action::Deliver { .. })));
        assert_eq!(queued_frames(&second).len(), 1); // the re-ACK
        // Immediately repeated duplicates are rate-limited.
        let third = rx.on_frame_received(&frame, SimTime::from_secs(10));
        assert!(third.is_empty());
    }

    #[test]
    fn nack_retransmits_exactly_the_listed_sent_fragments() {
        let mut tx = state(1);
        let (msg_id, actions) = tx
            .send_reliable(NodeId(2), FrameKind::Data, &[0xEE; 1000])
            .unwrap();
        let frames: Vec<Frame> = queued_frames(&actions).into_iter().cloned().collect();
        assert_eq!(frames.len(), 6);
        for f in &frames {
            assert!(tx.claim_for_tx(f));
            tx.on_frame_tx_complete(f);
        }
        let nack = Frame::new(
            FrameHeader::new(FrameKind::Nack, NodeId(2), NodeId(1), msg_id, 0, 1),
            nack_body(&[2, 5]),
        );
        let actions = tx.on_frame_received(&nack, SimTime::from_secs(3));
        let requeued: Vec<u16> = queued_frames(&actions)
            .iter()
            .map(|f| f.header.fragment_index)
            .collect();
        assert_eq!(requeued, vec![2, 5]);
        assert!(actions.iter().all(|a| !matches!(a, Action::Failed { .. })));
    }

    #[test]
    fn nack_for_queued_fragment_does_not_duplicate_it() {
        let mut tx = state(1);
        let (msg_id, actions) = tx
            .send_reliable(NodeId(2), FrameKind::Data, &[0xEE; 600])
            .unwrap();
        let frames: Vec<Frame> = queued_frames(&actions).into_iter().cloned().collect();
        // Only fragment 0 has actually been transmitted.
        assert!(tx.claim_for_tx(&frames[0]));
        tx.on_frame_tx_complete(&frames[0]);
        let nack = Frame::new(
            FrameHeader::new(FrameKind::Nack, NodeId(2), NodeId(1), msg_id, 0, 1),
            nack_body(&[0, 1, 2]),
        );
        let actions = tx.on_frame_received(&nack, SimTime::from_secs(3));
        let requeued: Vec<u16> = queued_frames(&actions)
            .iter()
            .map(|f| f.header.fragment_index)
            .collect();
        assert_eq!(requeued, vec![0]);
    }

    #[test]
    fn stale_ack_is_logged_and_ignored() {
        let mut tx = state(1);
        let ack = Frame::new(
            FrameHeader::new(FrameKind::Ack, NodeId(2), NodeId(1), 999, 0, 1),
            Vec::new(),
        );
        let actions = tx.on_frame_received(&ack, SimTime::ZERO);
        assert!(matches!(actions.as_slice(), [Action::Violation { .. }]));
    }

    #[test]
    fn retry_exhaustion_fails_the_transfer() {
        let mut tx = state(1);
        let config_retries = tx.config().max_retries;
        let (msg_id, actions) = tx.send_reliable(NodeId(2), FrameKind::Data, b"doomed").unwrap();
        let frame = queued_frames(&actions)[0].clone();

        for round in 0..=config_retries {
            assert!(tx.claim_for_tx(&frame), "round {round}");
            let acts = tx.on_frame_tx_complete(&frame);
            let arm_gen = acts
                .iter()
                .find_map(|a| match a {
                    Action::ArmSenderRetry { gen, .. } => Some(*gen),
                    _ => None,
                })
                .expect("backstop must arm each round");
            let retry = tx.on_sender_retry_timeout(msg_id, arm_gen);
            if round < config_retries {
                assert_eq!(queued_frames(&retry).len(), 1, "round {round}");
            } else {
                assert!(
                    retry.iter().any(
                        |a| matches!(a, Action::Failed { message_id, .. } if *message_id == msg_id)
                    ),
                    "final round must fail the transfer"
                );
            }
        }
        assert_eq!(tx.outbound_live(), 0);
    }

    #[test]
    fn receiver_gap_rounds_are_bounded() {
        let mut rx = state(2);
        let mut tx = state(1);
        let (_, actions) = tx
            .send_reliable(NodeId(2), FrameKind::Data, &[7u8; 600])
            .unwrap();
        let frames: Vec<Frame> = queued_frames(&actions).into_iter().cloned().collect();
        // Deliver only fragment 0 of 4.
        let acts = rx.on_frame_received(&frames[0], SimTime::from_secs(1));
        let (key, mut gen) = acts
            .iter()
            .find_map(|a| match a {
                Action::ArmReceiverGap { key, gen, .. } => Some((*key, *gen)),
                _ => None,
            })
            .expect("gap armed");
        let limit = rx.config().nack_round_limit;
        for round in 0..limit {
            let acts = rx.on_receiver_gap_timeout(key, gen);
            let nacks = queued_frames(&acts);
            assert_eq!(nacks.len(), 1, "round {round}");
            assert_eq!(parse_nack_body(&nacks[0].body).unwrap(), vec![1, 2, 3]);
            gen = acts
                .iter()
                .find_map(|a| match a {
                    Action::ArmReceiverGap { gen, .. } => Some(*gen),
                    _ => None,
                })
                .expect("re-armed");
        }
        let final_acts = rx.on_receiver_gap_timeout(key, gen);
        assert!(matches!(final_acts.as_slice(), [Action::Abandoned { .. }]));
    }

    #[test]
    fn stale_timer_generations_are_ignored() {
        let mut rx = state(2);
        let mut tx = state(1);
        let (_, actions) = tx
            .send_reliable(NodeId(2), FrameKind::Data, &[7u8; 600])
            .unwrap();
        let frames: Vec<Frame> = queued_frames(&actions).into_iter().cloned().collect();
        let acts = rx.on_frame_received(&frames[0], SimTime::from_secs(1));
        let (key, old_gen) = acts
            .iter()
            .find_map(|a| match a {
                Action::ArmReceiverGap { key, gen, .. } => Some((*key, *gen)),
                _ => None,
            })
            .unwrap();
        // A newer fragment re-arms the timer; the old generation is dead.
        rx.on_frame_received(&frames[1], SimTime::from_secs(2));
        assert!(rx.on_receiver_gap_timeout(key, old_gen).is_empty());
    }

    #[test]
    fn nack_body_roundtrip() {
        let indices = vec![0u16, 2, 5, 121, 65535];
        assert_eq!(parse_nack_body(&nack_body(&indices)).unwrap(), indices);
        assert!(parse_nack_body(&[0, 1, 2]).is_err());
    }
}
