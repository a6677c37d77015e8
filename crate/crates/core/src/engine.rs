//! The simulation engine: owns the event loop, per-node runtime state,
//! the radio medium, and the ground-truth logs every invariant check and
//! CSV export reads from.
//!
//! Each node runs the same software stack: a reliable-transfer state
//! machine behind a FIFO radio gate, a heartbeat emitter, a liveness
//! table driving failover, a metrics sampler, and (optionally) the bundle
//! publisher. Nodes interact only through frames on the shared medium, so
//! two observers can legitimately disagree; the engine's own records
//! (service run spans, packet registry, transmission log) are the ground
//! truth the run is judged by.

use crate::cluster::{heartbeat_body, parse_heartbeat_body, LivenessTable};
use crate::codec::{Frame, FrameKind, ReassemblyKey};
use crate::kernel::{EventTarget, RngStreams, Scheduler, SimTime};
use crate::metrics::{
    apply_bundle, make_bundle, next_version, ApplyOutcome, BundlePayload, LatencyRecord,
    MetricsPacket, NodeFileState, TimeSeriesStore, Version,
};
use crate::radio::{
    DecodeOutcome, Medium, RadioError, TransmissionId, TransmissionRecord, TxDecision,
    MAX_FRAME_BYTES,
};
use crate::scenario::{FaultAction, ScenarioConfig};
use crate::summary::RunSummary;
use crate::transfer::{Action, GateEntry, NodeTransferState, TransferError};
use crate::{NodeId, ServiceIdx};
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Test hooks and tracing switches; the default runs a scenario as-is.
#[derive(Debug, Default)]
pub struct EngineOptions {
    /// Record a line per dispatched event (replay-determinism checks).
    pub capture_event_trace: bool,
    /// Reliable payloads to inject at given times.
    pub injections: Vec<Injection>,
    /// Drop the nth transmission (global log index) at a given receiver,
    /// after normal collision resolution. For scripted-loss tests.
    pub scripted_drops: BTreeSet<(u64, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub at: SimTime,
    pub source: NodeId,
    pub dest: NodeId,
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InjectionResult {
    pub sent: bool,
    pub completed: bool,
    pub failed: bool,
}

/// Terminal state of a sampled metrics packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketState {
    InFlight,
    Ingested,
    Lost,
}

/// One interval during which a service ran on a node (ground truth).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSpan {
    pub service: ServiceIdx,
    pub node: NodeId,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

/// One executed redeploy, as logged for the failover CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailoverRecord {
    pub at_us: u64,
    pub detect_us: u64,
    pub start_us: u64,
    pub total_us: u64,
    pub service: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub sampled: u64,
    pub ingested: u64,
    pub metrics_lost: u64,
    pub metrics_in_flight: u64,
    pub frames_sent: u64,
    pub heartbeats_sent: u64,
    pub retransmissions: u64,
    pub transfers_completed: u64,
    pub transfers_failed: u64,
    pub receiver_abandoned: u64,
    pub buffer_dropped: u64,
    pub violations: u64,
    pub bundles_published: u64,
    pub bundles_applied: u64,
    pub bundle_rejects: u64,
    pub resync_requests: u64,
    pub ownership_conceded: u64,
}

/// Everything a finished run produced.
pub struct RunResult {
    pub summary: RunSummary,
    pub latency: Vec<LatencyRecord>,
    pub transmissions: Vec<TransmissionRecord>,
    pub failovers: Vec<FailoverRecord>,
    pub service_spans: Vec<ServiceSpan>,
    pub store_lines: Vec<String>,
    pub counters: Counters,
    pub violations: Vec<String>,
    pub event_trace: Vec<String>,
    pub injection_results: Vec<InjectionResult>,
    /// (receiver, source, payload) for every generic data delivery.
    pub delivered_data: Vec<(NodeId, NodeId, Vec<u8>)>,
    pub final_versions: Vec<(NodeId, Version, bool)>,
    pub node_names: Vec<String>,
    pub service_names: Vec<String>,
}

/// Run a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig, opts: EngineOptions) -> RunResult {
    Simulation::new(cfg.clone(), opts).run()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Ev {
    Maintenance { node: NodeId, gen: u64 },
    Heartbeat { node: NodeId, gen: u64 },
    MetricsSample { node: NodeId, gen: u64 },
    TxComplete { node: NodeId, tx: TransmissionId, frame: Frame },
    GateWake { node: NodeId, gen: u64 },
    ReceiverGap { node: NodeId, key: ReassemblyKey, gen: u64 },
    SenderRetry { node: NodeId, message_id: u16, gen: u64 },
    RedeployDone { node: NodeId, service: ServiceIdx, gen: u64 },
    Fault(usize),
    BundlePublish { gen: u64 },
    Inject(usize),
}

impl Ev {
    fn tag(&self) -> String {
        match self {
            Ev::Maintenance { node, .. } => format!("maintenance {node}"),
            Ev::Heartbeat { node, .. } => format!("heartbeat {node}"),
            Ev::MetricsSample { node, .. } => format!("metrics-sample {node}"),
            Ev::TxComplete { node, tx, frame } => format!(
                "tx-complete {node} tx={} kind={:?} frag={}/{}",
                tx.0, frame.header.kind, frame.header.fragment_index, frame.header.fragment_total
            ),
            Ev::GateWake { node, .. } => format!("gate-wake {node}"),
            Ev::ReceiverGap { node, key, .. } => {
                format!("receiver-gap {node} src={} msg={}", key.source, key.message_id)
            }
            Ev::SenderRetry { node, message_id, .. } => {
                format!("sender-retry {node} msg={message_id}")
            }
            Ev::RedeployDone { node, service, .. } => {
                format!("redeploy-done {node} svc={}", service.0)
            }
            Ev::Fault(i) => format!("fault {i}"),
            Ev::BundlePublish { .. } => "bundle-publish".into(),
            Ev::Inject(i) => format!("inject {i}"),
        }
    }
}

struct StartingInfo {
    from: NodeId,
    detect_delay: SimTime,
    start_delay: SimTime,
}

struct NodeRuntime {
    id: NodeId,
    alive: bool,
    /// Bumped on kill and revive; node-bound events from an earlier boot
    /// are stale and ignored.
    boot_gen: u64,
    /// The node can only decode frames fully inside its lifetime.
    listening_since: SimTime,
    transfer: NodeTransferState,
    liveness: LivenessTable,
    /// Believed current host per service.
    placements: BTreeMap<ServiceIdx, NodeId>,
    /// Services this node is actually running.
    running: BTreeSet<ServiceIdx>,
    /// Services whose local container died and awaits an in-place restart.
    locally_lost: BTreeSet<ServiceIdx>,
    starting: BTreeMap<ServiceIdx, StartingInfo>,
    metrics_seq: u32,
    pending_metrics: VecDeque<MetricsPacket>,
    file: NodeFileState,
    reports_metrics: bool,
    metric_offset: SimTime,
}

struct Simulation {
    cfg: ScenarioConfig,
    opts: EngineOptions,
    sched: Scheduler<Ev>,
    rng: RngStreams,
    medium: Medium,
    nodes: Vec<NodeRuntime>,
    store: TimeSeriesStore,
    ingestor: Option<ServiceIdx>,
    /// (sampling node, sequence) -> terminal state.
    packet_registry: BTreeMap<(NodeId, u32), PacketState>,
    /// (sending node, message id) -> metrics packet key it carries.
    transfer_packets: BTreeMap<(NodeId, u16), (NodeId, u32)>,
    /// (sending node, message id) -> injection index it carries.
    transfer_injections: BTreeMap<(NodeId, u16), usize>,
    node_down_since: Vec<Option<SimTime>>,
    svc_kill_time: BTreeMap<ServiceIdx, SimTime>,
    service_spans: Vec<ServiceSpan>,
    open_spans: BTreeMap<(ServiceIdx, NodeId), usize>,
    failovers: Vec<FailoverRecord>,
    counters: Counters,
    violations: Vec<String>,
    event_trace: Vec<String>,
    injection_results: Vec<InjectionResult>,
    delivered_data: Vec<(NodeId, NodeId, Vec<u8>)>,
    sync_head: Version,
    sync_revision: u64,
    /// Bundle sends are paced one peer at a time: a transfer's final ack
    /// would otherwise collide with the next transfer's first frame every
    /// single time, and the retry rounds burn duty-cycle budget.
    sync_queue: VecDeque<(NodeId, Vec<u8>)>,
    sync_inflight: Option<u16>,
}

impl Simulation {
    fn new(cfg: ScenarioConfig, opts: EngineOptions) -> Self {
        let n = cfg.positions.len();
        let mut rng = RngStreams::new(cfg.seed);
        for stream in ["jitter", "loss", "start-time", "load", "shadowing"] {
            rng.register(stream);
        }

        // Freeze per-link shadowing, symmetric across each pair.
        let mut shadowing = vec![vec![0.0f64; n]; n];
        if cfg.path_loss.shadowing_sigma_db > 0.0 {
            let normal = Normal::new(0.0, cfg.path_loss.shadowing_sigma_db)
                .expect("valid shadowing sigma");
            for i in 0..n {
                for j in (i + 1)..n {
                    let draw = normal.sample(rng.stream("shadowing").expect("registered"));
                    shadowing[i][j] = draw;
                    shadowing[j][i] = draw;
                }
            }
        }

        let medium = Medium::new(
            cfg.radio.clone(),
            &cfg.positions,
            &cfg.path_loss,
            &shadowing,
            cfg.sensitivity_dbm,
            cfg.capture_margin_db,
            cfg.duty_window,
            cfg.duty_budget,
        )
        .expect("validated radio configuration");
        let airtime_full = cfg.radio.airtime(MAX_FRAME_BYTES).expect("max frame airtime");

        let ingestor = cfg.ingestor_idx();
        let all_ids: Vec<NodeId> = (0..n as u8).map(NodeId).collect();
        let nodes = all_ids
            .iter()
            .map(|&id| {
                let peers = all_ids.iter().copied().filter(|&p| p != id);
                let placements = cfg
                    .layout
                    .indices()
                    .map(|idx| (idx, cfg.layout.get(idx).primary))
                    .collect();
                let running: BTreeSet<ServiceIdx> = cfg
                    .layout
                    .indices()
                    .filter(|&idx| cfg.layout.get(idx).primary == id)
                    .collect();
                let (reports, offset) = cfg
                    .metric_offsets
                    .iter()
                    .find(|(node, _)| *node == id)
                    .map(|(_, off)| (true, *off))
                    .unwrap_or((false, SimTime::ZERO));
                NodeRuntime {
                    id,
                    alive: true,
                    boot_gen: 0,
                    listening_since: SimTime::ZERO,
                    transfer: NodeTransferState::new(id, cfg.transfer.clone(), airtime_full),
                    liveness: LivenessTable::new(peers, SimTime::ZERO),
                    placements,
                    running,
                    locally_lost: BTreeSet::new(),
                    starting: BTreeMap::new(),
                    metrics_seq: 0,
                    pending_metrics: VecDeque::new(),
                    file: NodeFileState::default(),
                    reports_metrics: reports,
                    metric_offset: offset,
                }
            })
            .collect();

        let injection_results = vec![InjectionResult::default(); opts.injections.len()];
        Simulation {
            cfg,
            opts,
            sched: Scheduler::new(),
            rng,
            medium,
            nodes,
            store: TimeSeriesStore::new(),
            ingestor,
            packet_registry: BTreeMap::new(),
            transfer_packets: BTreeMap::new(),
            transfer_injections: BTreeMap::new(),
            node_down_since: vec![None; n],
            svc_kill_time: BTreeMap::new(),
            service_spans: Vec::new(),
            open_spans: BTreeMap::new(),
            failovers: Vec::new(),
            counters: Counters::default(),
            violations: Vec::new(),
            event_trace: Vec::new(),
            injection_results,
            delivered_data: Vec::new(),
            sync_head: Version::INITIAL,
            sync_revision: 0,
            sync_queue: VecDeque::new(),
            sync_inflight: None,
        }
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn node_name(&self, id: NodeId) -> String {
        self.cfg.node_name(id).to_string()
    }

    fn service_name(&self, idx: ServiceIdx) -> String {
        self.cfg.layout.get(idx).spec.name.clone()
    }

    fn schedule(&mut self, at: SimTime, target: EventTarget, ev: Ev) {
        self.sched
            .schedule(at, target, ev)
            .expect("engine never schedules into the past");
    }

    fn schedule_in(&mut self, delay: SimTime, target: EventTarget, ev: Ev) {
        let at = self.now() + delay;
        self.schedule(at, target, ev);
    }

    /// Uniform multiplier in [1, 1 + frac) applied to protocol timers, so
    /// simultaneous losses do not retry in lockstep forever.
    fn timer_jitter(&mut self, base: SimTime) -> SimTime {
        let frac = self.cfg.timer_jitter_frac;
        if frac <= 0.0 {
            return base;
        }
        let draw = self.rng.draw("jitter").expect("jitter stream");
        base.mul_f64(1.0 + draw * frac)
    }

    // -- service run spans (ground truth) -----------------------------------

    fn span_start(&mut self, service: ServiceIdx, node: NodeId, t: SimTime) {
        let idx = self.service_spans.len();
        self.service_spans.push(ServiceSpan {
            service,
            node,
            start: t,
            end: None,
        });
        self.open_spans.insert((service, node), idx);
    }

    fn span_end(&mut self, service: ServiceIdx, node: NodeId, t: SimTime) {
        if let Some(idx) = self.open_spans.remove(&(service, node)) {
            self.service_spans[idx].end = Some(t);
        }
    }

    // -- main loop -----------------------------------------------------------

    fn run(mut self) -> RunResult {
        self.bootstrap();
        let horizon = self.cfg.duration;
        while let Some(event) = self.sched.pop_due(horizon) {
            if self.opts.capture_event_trace {
                self.event_trace.push(format!(
                    "{} {} {}",
                    event.fire_time.as_micros(),
                    event.sequence,
                    event.payload.tag()
                ));
            }
            self.dispatch(event.payload);
        }
        self.finalize(horizon)
    }

    fn bootstrap(&mut self) {
        // Primary services are already running when the scenario starts.
        let initial: Vec<(ServiceIdx, NodeId)> = self
            .nodes
            .iter()
            .flat_map(|n| n.running.iter().map(move |&s| (s, n.id)))
            .collect();
        for (service, node) in initial {
            self.span_start(service, node, SimTime::ZERO);
        }

        for id in 0..self.nodes.len() as u8 {
            let node = NodeId(id);
            self.schedule(
                self.cfg.check_interval,
                EventTarget::Node(node),
                Ev::Maintenance { node, gen: 0 },
            );
            if self.cfg.heartbeat_interval > SimTime::ZERO {
                let first = self
                    .cfg
                    .heartbeat_interval
                    .mul_f64(self.rng.draw("jitter").expect("jitter stream"));
                self.schedule(first, EventTarget::Node(node), Ev::Heartbeat { node, gen: 0 });
            }
            let runtime = &self.nodes[node.index()];
            if runtime.reports_metrics {
                let at = runtime.metric_offset;
                self.schedule(at, EventTarget::Node(node), Ev::MetricsSample { node, gen: 0 });
            }
        }

        for i in 0..self.cfg.faults.len() {
            self.schedule(self.cfg.faults[i].at, EventTarget::Global, Ev::Fault(i));
        }
        if let Some(sync) = self.cfg.sync {
            self.schedule(sync.start, EventTarget::Node(sync.publisher), Ev::BundlePublish { gen: 0 });
        }
        for i in 0..self.opts.injections.len() {
            let at = self.opts.injections[i].at;
            self.schedule(at, EventTarget::Global, Ev::Inject(i));
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Maintenance { node, gen } => self.on_maintenance(node, gen),
            Ev::Heartbeat { node, gen } => self.on_heartbeat_emit(node, gen),
            Ev::MetricsSample { node, gen } => self.on_metrics_sample(node, gen),
            Ev::TxComplete { node, tx, frame } => self.on_tx_complete(node, tx, frame),
            Ev::GateWake { node, gen } => self.on_gate_wake(node, gen),
            Ev::ReceiverGap { node, key, gen } => {
                if self.nodes[node.index()].alive {
                    let actions = self.nodes[node.index()]
                        .transfer
                        .on_receiver_gap_timeout(key, gen);
                    self.process_actions(node, actions);
                }
            }
            Ev::SenderRetry { node, message_id, gen } => {
                if self.nodes[node.index()].alive {
                    let actions = self.nodes[node.index()]
                        .transfer
                        .on_sender_retry_timeout(message_id, gen);
                    self.process_actions(node, actions);
                }
            }
            Ev::RedeployDone { node, service, gen } => self.on_redeploy_done(node, service, gen),
            Ev::Fault(i) => self.on_fault(i),
            Ev::BundlePublish { gen } => self.on_bundle_publish(gen),
            Ev::Inject(i) => self.on_inject(i),
        }
    }

    fn finalize(mut self, horizon: SimTime) -> RunResult {
        for span in &mut self.service_spans {
            if span.end.is_none() {
                span.end = Some(horizon);
            }
        }
        self.counters.metrics_in_flight = self
            .packet_registry
            .values()
            .filter(|s| **s == PacketState::InFlight)
            .count() as u64;

        let final_versions = self
            .nodes
            .iter()
            .map(|n| (n.id, n.file.current_version, n.alive))
            .collect();
        let latency = self.store.records().to_vec();
        let store_lines = self.store.lines().to_vec();
        let transmissions = self.medium.log().to_vec();
        let service_names = self
            .cfg
            .layout
            .services
            .iter()
            .map(|s| s.spec.name.clone())
            .collect();

        let summary = RunSummary::compute(
            &self.cfg,
            &latency,
            &transmissions,
            &self.failovers,
            &self.counters,
        );
        RunResult {
            summary,
            latency,
            transmissions,
            failovers: self.failovers,
            service_spans: self.service_spans,
            store_lines,
            counters: self.counters,
            violations: self.violations,
            event_trace: self.event_trace,
            injection_results: self.injection_results,
            delivered_data: self.delivered_data,
            final_versions,
            node_names: self.cfg.node_names.clone(),
            service_names,
        }
    }

    // -- radio gate ----------------------------------------------------------

    fn queue_frame(&mut self, node: NodeId, entry: GateEntry) {
        self.nodes[node.index()].transfer.gate.push(entry);
        self.pump_gate(node);
    }

    /// Start transmitting the head of the node's gate queue if the radio
    /// and the duty-cycle ledger allow it.
    fn pump_gate(&mut self, node: NodeId) {
        loop {
            let runtime = &self.nodes[node.index()];
            if !runtime.alive || runtime.transfer.gate.busy || runtime.transfer.gate.wake_scheduled
            {
                return;
            }
            let Some(entry) = runtime.transfer.gate.front() else {
                return;
            };
            if entry.reliable && !runtime.transfer.is_wanted(&entry.frame) {
                self.nodes[node.index()].transfer.gate.pop();
                continue;
            }
            let wire_len = entry.frame.wire_len();
            let now = self.now();
            match self.medium.try_transmit(node, wire_len, now) {
                Ok(TxDecision::Accepted { end, .. }) => {
                    let runtime = &mut self.nodes[node.index()];
                    let entry = runtime.transfer.gate.pop().expect("head present");
                    runtime.transfer.gate.busy = true;
                    if entry.reliable {
                        runtime.transfer.mark_in_flight(&entry.frame);
                    }
                    if entry.retransmit {
                        self.counters.retransmissions += 1;
                    }
                    if entry.frame.header.kind == FrameKind::Heartbeat {
                        self.counters.heartbeats_sent += 1;
                    }
                    self.counters.frames_sent += 1;
                    let tx = TransmissionId(self.medium.transmissions() as u64 - 1);
                    self.schedule(
                        end,
                        EventTarget::Node(node),
                        Ev::TxComplete {
                            node,
                            tx,
                            frame: entry.frame,
                        },
                    );
                    return;
                }
                Ok(TxDecision::Deferred { next_allowed }) => {
                    let gen = self.nodes[node.index()].boot_gen;
                    self.nodes[node.index()].transfer.gate.wake_scheduled = true;
                    self.schedule(
                        next_allowed,
                        EventTarget::Node(node),
                        Ev::GateWake { node, gen },
                    );
                    return;
                }
                // The radio is still draining a frame from before a reboot;
                // its completion event will pump the gate again.
                Err(RadioError::RadioBusy) => return,
                Err(err) => {
                    self.log_violation(node, format!("gate drop: {err}"));
                    self.nodes[node.index()].transfer.gate.pop();
                }
            }
        }
    }

    fn on_gate_wake(&mut self, node: NodeId, gen: u64) {
        let runtime = &mut self.nodes[node.index()];
        if !runtime.alive || runtime.boot_gen != gen {
            return;
        }
        runtime.transfer.gate.wake_scheduled = false;
        self.pump_gate(node);
    }

    fn on_tx_complete(&mut self, sender: NodeId, tx: TransmissionId, frame: Frame) {
        let receiving: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| {
                n.alive
                    && n.listening_since <= self.medium.log()[tx.0 as usize].start
                    && n.id != sender
            })
            .collect();
        let outcomes = self.medium.finish_transmission(tx, &receiving);

        // Apply scripted drops and extra i.i.d. loss on top of the
        // physical outcome, in receiver order for determinism.
        let mut delivered = Vec::new();
        for (rx, outcome) in outcomes {
            if outcome != DecodeOutcome::Delivered {
                continue;
            }
            if self.opts.scripted_drops.contains(&(tx.0, rx)) {
                continue;
            }
            if self.cfg.extra_loss_rate > 0.0 {
                let draw = self.rng.draw("loss").expect("loss stream");
                if draw < self.cfg.extra_loss_rate {
                    continue;
                }
            }
            delivered.push(rx);
        }
        self.medium.record_outcome(tx, &delivered);

        let now = self.now();
        for rx in delivered {
            // Any decoded frame is passive proof the sender is alive.
            let revived = self.nodes[rx.index()].liveness.record_activity(sender, now);
            if revived {
                self.try_flush_pending(rx);
            }
            let dest = frame.header.dest;
            if dest == rx || dest.is_broadcast() {
                let actions = self.nodes[rx.index()].transfer.on_frame_received(&frame, now);
                self.process_actions(rx, actions);
            }
        }

        // Sender-side bookkeeping, then free the gate.
        if self.nodes[sender.index()].alive {
            let actions = self.nodes[sender.index()].transfer.on_frame_tx_complete(&frame);
            self.process_actions(sender, actions);
            self.nodes[sender.index()].transfer.gate.busy = false;
            self.pump_gate(sender);
        }
    }

    // -- protocol action interpreter ------------------------------------------

    fn process_actions(&mut self, node: NodeId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Queue(entry) => self.queue_frame(node, entry),
                Action::ArmReceiverGap { key, delay, gen } => {
                    let delay = self.timer_jitter(delay);
                    self.schedule_in(
                        delay,
                        EventTarget::Node(node),
                        Ev::ReceiverGap { node, key, gen },
                    );
                }
                Action::ArmSenderRetry {
                    message_id,
                    delay,
                    gen,
                } => {
                    let delay = self.timer_jitter(delay);
                    self.schedule_in(
                        delay,
                        EventTarget::Node(node),
                        Ev::SenderRetry {
                            node,
                            message_id,
                            gen,
                        },
                    );
                }
                Action::Deliver {
                    kind,
                    source,
                    payload,
                } => self.deliver_upward(node, kind, source, payload),
                Action::Completed { message_id, .. } => {
                    self.counters.transfers_completed += 1;
                    self.transfer_packets.remove(&(node, message_id));
                    if let Some(idx) = self.transfer_injections.remove(&(node, message_id)) {
                        self.injection_results[idx].completed = true;
                    }
                    self.release_sync_slot(node, message_id);
                }
                Action::Failed {
                    message_id, kind, ..
                } => {
                    self.counters.transfers_failed += 1;
                    if let Some(pkt) = self.transfer_packets.remove(&(node, message_id)) {
                        self.mark_packet_lost(pkt);
                    }
                    if let Some(idx) = self.transfer_injections.remove(&(node, message_id)) {
                        self.injection_results[idx].failed = true;
                    }
                    let _ = kind;
                    self.release_sync_slot(node, message_id);
                }
                Action::Abandoned { key } => {
                    self.counters.receiver_abandoned += 1;
                    let _ = key;
                }
                Action::Violation { detail } => self.log_violation(node, detail),
            }
        }
    }

    fn release_sync_slot(&mut self, node: NodeId, message_id: u16) {
        if self.cfg.sync.map(|s| s.publisher) == Some(node)
            && self.sync_inflight == Some(message_id)
        {
            self.sync_inflight = None;
            self.advance_sync_queue();
        }
    }

    fn log_violation(&mut self, node: NodeId, detail: String) {
        self.counters.violations += 1;
        self.violations
            .push(format!("t={} {node}: {detail}", self.now().as_micros()));
    }

    fn mark_packet_lost(&mut self, key: (NodeId, u32)) {
        if let Some(state) = self.packet_registry.get_mut(&key) {
            if *state == PacketState::InFlight {
                *state = PacketState::Lost;
                self.counters.metrics_lost += 1;
            }
        }
    }

    // -- upward deliveries -----------------------------------------------------

    fn deliver_upward(&mut self, node: NodeId, kind: FrameKind, source: NodeId, payload: Vec<u8>) {
        match kind {
            FrameKind::Heartbeat => self.on_heartbeat_received(node, source, &payload),
            FrameKind::MetricsData => match MetricsPacket::decode(&payload) {
                Ok(packet) => self.forward_or_ingest(node, packet),
                Err(err) => self.log_violation(node, format!("bad metrics payload: {err}")),
            },
            FrameKind::BundleData => match BundlePayload::decode(&payload) {
                Ok(bundle) => self.on_bundle_received(node, source, bundle),
                Err(err) => self.log_violation(node, format!("bad bundle payload: {err}")),
            },
            FrameKind::Data => self.delivered_data.push((node, source, payload)),
            FrameKind::Ack | FrameKind::Nack => {}
        }
    }

    // -- heartbeats and liveness -----------------------------------------------

    fn on_heartbeat_emit(&mut self, node: NodeId, gen: u64) {
        {
            let runtime = &self.nodes[node.index()];
            if !runtime.alive || runtime.boot_gen != gen {
                return;
            }
        }
        let running: Vec<ServiceIdx> = self.nodes[node.index()].running.iter().copied().collect();
        let body = heartbeat_body(&running);
        match self.nodes[node.index()]
            .transfer
            .send_best_effort(NodeId::BROADCAST, FrameKind::Heartbeat, &body)
        {
            Ok(actions) => self.process_actions(node, actions),
            Err(err) => self.log_violation(node, format!("heartbeat send failed: {err}")),
        }
        // Next beat at interval +- jitter.
        let frac = self.cfg.heartbeat_jitter_frac;
        let draw = self.rng.draw("jitter").expect("jitter stream");
        let next = self
            .cfg
            .heartbeat_interval
            .mul_f64(1.0 - frac + 2.0 * frac * draw);
        self.schedule_in(next, EventTarget::Node(node), Ev::Heartbeat { node, gen });
    }

    fn on_heartbeat_received(&mut self, me: NodeId, source: NodeId, body: &[u8]) {
        let now = self.now();
        let Some(announced) = parse_heartbeat_body(body) else {
            self.log_violation(me, format!("malformed heartbeat from {source}"));
            return;
        };
        self.nodes[me.index()].liveness.record_heartbeat(source, now);

        let mut placement_changed = false;
        for svc in announced {
            if svc.index() >= self.cfg.layout.len() {
                continue;
            }
            let believed = self.nodes[me.index()].placements.get(&svc).copied();
            if believed == Some(source) {
                continue;
            }
            // Ownership conflict: both of us claim the service. The host
            // closer to the front of the failover chain keeps it.
            if believed == Some(me) && self.nodes[me.index()].running.contains(&svc) {
                if self.chain_priority(svc, source) < self.chain_priority(svc, me) {
                    self.nodes[me.index()].running.remove(&svc);
                    self.span_end(svc, me, now);
                    self.counters.ownership_conceded += 1;
                } else {
                    continue;
                }
            }
            self.nodes[me.index()].placements.insert(svc, source);
            placement_changed = true;
        }
        if placement_changed {
            self.try_flush_pending(me);
        }
    }

    /// Position of a node in a service's failover chain (primary first).
    fn chain_priority(&self, svc: ServiceIdx, node: NodeId) -> usize {
        let placement = self.cfg.layout.get(svc);
        if placement.primary == node {
            return 0;
        }
        placement
            .fallbacks
            .iter()
            .position(|&f| f == node)
            .map(|p| p + 1)
            .unwrap_or(usize::MAX)
    }

    // -- maintenance: liveness sweep, local service monitor, expiry -------------

    fn on_maintenance(&mut self, node: NodeId, gen: u64) {
        {
            let runtime = &self.nodes[node.index()];
            if !runtime.alive || runtime.boot_gen != gen {
                return;
            }
        }
        let now = self.now();
        let _delta = self.nodes[node.index()].liveness.sweep(
            now,
            self.cfg.suspect_timeout,
            self.cfg.offline_timeout,
        );
        self.evaluate_placements(node);

        let actions = self.nodes[node.index()].transfer.expire_reassembly(now);
        self.process_actions(node, actions);

        self.schedule_in(
            self.cfg.check_interval,
            EventTarget::Node(node),
            Ev::Maintenance { node, gen },
        );
    }

    /// Decide whether this node must take over any service. Runs every
    /// maintenance tick; idempotent. A takeover begins only when the
    /// believed host is offline in this node's own table and this node is
    /// the first alive fallback, which also makes it the executor. A node
    /// never acts on a stale self-belief (fresh boot after a revival):
    /// relocated services are not reclaimed automatically.
    fn evaluate_placements(&mut self, me: NodeId) {
        let indices: Vec<ServiceIdx> = self.cfg.layout.indices().collect();
        for svc in indices {
            let runtime = &self.nodes[me.index()];
            if runtime.running.contains(&svc) || runtime.starting.contains_key(&svc) {
                continue;
            }
            // A container that died under this very node restarts in place.
            if runtime.locally_lost.contains(&svc) {
                self.execute_redeploy(me, svc, me);
                continue;
            }
            let Some(host) = runtime.placements.get(&svc).copied() else {
                continue;
            };
            if host == me || !runtime.liveness.is_offline(host) {
                continue;
            }
            let target = self
                .cfg
                .layout
                .get(svc)
                .fallbacks
                .iter()
                .copied()
                .find(|&n| n == me || self.nodes[me.index()].liveness.is_alive(n));
            if target == Some(me) {
                self.execute_redeploy(me, svc, host);
            }
        }
    }

    /// Begin a redeploy of `svc` on `me`. Start time is drawn from the
    /// service's model, independent of image size: every node keeps a
    /// warm image cache, so transfer time is out of the picture.
    fn execute_redeploy(&mut self, me: NodeId, svc: ServiceIdx, from: NodeId) {
        let now = self.now();
        let detect_delay = if from == me {
            self.svc_kill_time
                .get(&svc)
                .map(|&t| now.saturating_sub(t))
                .unwrap_or(SimTime::ZERO)
        } else {
            self.node_down_since[from.index()]
                .map(|t| now.saturating_sub(t))
                .unwrap_or(SimTime::ZERO)
        };
        let start_delay = self.cfg.layout.get(svc).spec.start_time_model.sample(&mut self.rng);
        let gen = self.nodes[me.index()].boot_gen;
        self.nodes[me.index()].starting.insert(
            svc,
            StartingInfo {
                from,
                detect_delay,
                start_delay,
            },
        );
        self.schedule_in(
            start_delay,
            EventTarget::Node(me),
            Ev::RedeployDone {
                node: me,
                service: svc,
                gen,
            },
        );
    }

    fn on_redeploy_done(&mut self, me: NodeId, svc: ServiceIdx, gen: u64) {
        let now = self.now();
        {
            let runtime = &self.nodes[me.index()];
            // Dying mid-start aborts the deploy; the service returns to the
            // failover queue via other observers noticing this node's death.
            if !runtime.alive || runtime.boot_gen != gen {
                return;
            }
        }
        let Some(info) = self.nodes[me.index()].starting.remove(&svc) else {
            return;
        };
        // The believed owner resurfaced while the container was starting:
        // abort rather than double-run the service.
        if info.from != me {
            let runtime = &self.nodes[me.index()];
            if let Some(&host) = runtime.placements.get(&svc) {
                if host != me && host != info.from && runtime.liveness.is_alive(host) {
                    return;
                }
                if host == info.from && runtime.liveness.is_alive(host) {
                    return;
                }
            }
        }
        if self.nodes[me.index()].running.contains(&svc) {
            return;
        }
        self.nodes[me.index()].running.insert(svc);
        self.nodes[me.index()].locally_lost.remove(&svc);
        self.nodes[me.index()].placements.insert(svc, me);
        self.span_start(svc, me, now);
        let record = FailoverRecord {
            at_us: now.as_micros(),
            detect_us: info.detect_delay.as_micros(),
            start_us: info.start_delay.as_micros(),
            total_us: (info.detect_delay + info.start_delay).as_micros(),
            service: self.service_name(svc),
            from: self.node_name(info.from),
            to: self.node_name(me),
        };
        self.failovers.push(record);
        if Some(svc) == self.ingestor {
            self.try_flush_pending(me);
        }
    }

    // -- metrics ---------------------------------------------------------------

    fn on_metrics_sample(&mut self, node: NodeId, gen: u64) {
        {
            let runtime = &self.nodes[node.index()];
            if !runtime.alive || runtime.boot_gen != gen || !runtime.reports_metrics {
                return;
            }
        }
        let now = self.now();
        let noise = self.cfg.gauge_noise;
        let cpu_draw = self.rng.draw("load").expect("load stream");
        let mem_draw = self.rng.draw("load").expect("load stream");
        let runtime = &mut self.nodes[node.index()];
        let packet = MetricsPacket {
            source: node,
            sequence: runtime.metrics_seq,
            origin_timestamp: now,
            cpu_percent: (self.cfg.cpu_baseline + (2.0 * cpu_draw - 1.0) * noise).clamp(0.0, 100.0),
            memory_percent: (self.cfg.memory_baseline + (2.0 * mem_draw - 1.0) * noise)
                .clamp(0.0, 100.0),
            running_services: runtime.running.iter().copied().collect(),
        };
        runtime.metrics_seq += 1;
        self.packet_registry
            .insert((node, packet.sequence), PacketState::InFlight);
        self.counters.sampled += 1;

        self.forward_or_ingest(node, packet);

        self.schedule_in(
            self.cfg.metric_interval,
            EventTarget::Node(node),
            Ev::MetricsSample { node, gen },
        );
    }

    /// Ingest locally when this node hosts the ingestor service, else
    /// relay toward its believed host, else buffer until one appears.
    fn forward_or_ingest(&mut self, node: NodeId, packet: MetricsPacket) {
        let now = self.now();
        let Some(ingestor) = self.ingestor else {
            return;
        };
        if self.nodes[node.index()].running.contains(&ingestor) {
            if self.store.ingest(&packet, now).is_some() {
                self.counters.ingested += 1;
                let key = (packet.source, packet.sequence);
                self.packet_registry.insert(key, PacketState::Ingested);
            }
            return;
        }
        let target = {
            let runtime = &self.nodes[node.index()];
            match runtime.placements.get(&ingestor).copied() {
                Some(host) if host != node && runtime.liveness.is_alive(host) => Some(host),
                _ => None,
            }
        };
        match target {
            Some(host) => self.send_metrics_packet(node, host, packet),
            None => self.buffer_packet(node, packet),
        }
    }

    fn send_metrics_packet(&mut self, node: NodeId, dest: NodeId, packet: MetricsPacket) {
        let payload = packet.encode();
        match self.nodes[node.index()]
            .transfer
            .send_reliable(dest, FrameKind::MetricsData, &payload)
        {
            Ok((message_id, actions)) => {
                self.transfer_packets
                    .insert((node, message_id), (packet.source, packet.sequence));
                self.process_actions(node, actions);
            }
            Err(err) => {
                self.log_violation(node, format!("metrics send failed: {err}"));
                self.mark_packet_lost((packet.source, packet.sequence));
            }
        }
    }

    fn buffer_packet(&mut self, node: NodeId, packet: MetricsPacket) {
        let runtime = &mut self.nodes[node.index()];
        runtime.pending_metrics.push_back(packet);
        if runtime.pending_metrics.len() > self.cfg.forward_buffer {
            let dropped = runtime.pending_metrics.pop_front().expect("nonempty");
            self.counters.buffer_dropped += 1;
            self.mark_packet_lost((dropped.source, dropped.sequence));
        }
    }

    /// Re-route buffered packets once an ingestor host is reachable.
    fn try_flush_pending(&mut self, node: NodeId) {
        let Some(ingestor) = self.ingestor else {
            return;
        };
        loop {
            let runtime = &self.nodes[node.index()];
            if runtime.pending_metrics.is_empty() {
                return;
            }
            let can_route = runtime.running.contains(&ingestor) || {
                match runtime.placements.get(&ingestor).copied() {
                    Some(host) => host != node && runtime.liveness.is_alive(host),
                    None => false,
                }
            };
            if !can_route {
                return;
            }
            let packet = self.nodes[node.index()]
                .pending_metrics
                .pop_front()
                .expect("nonempty");
            self.forward_or_ingest(node, packet);
        }
    }

    // -- bundle sync -------------------------------------------------------------

    fn on_bundle_publish(&mut self, gen: u64) {
        let Some(sync) = self.cfg.sync else { return };
        let publisher = sync.publisher;
        {
            let runtime = &self.nodes[publisher.index()];
            if !runtime.alive || runtime.boot_gen != gen {
                return;
            }
        }
        self.sync_revision += 1;
        let new_head = next_version(self.sync_head, self.sync_revision);
        let bundle = make_bundle(self.sync_head, new_head, sync.bundle_bytes)
            .expect("chained versions differ");
        self.sync_head = new_head;
        self.nodes[publisher.index()].file.current_version = new_head;
        self.counters.bundles_published += 1;

        let payload = BundlePayload::Push(bundle).encode();
        let peers: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.alive && n.id != publisher)
            .map(|n| n.id)
            .collect();
        for peer in peers {
            self.sync_queue.push_back((peer, payload.clone()));
        }
        self.advance_sync_queue();
        self.schedule_in(
            sync.interval,
            EventTarget::Node(publisher),
            Ev::BundlePublish { gen },
        );
    }

    /// Start the next queued bundle transfer once the previous one is
    /// settled (completed or failed).
    fn advance_sync_queue(&mut self) {
        let Some(sync) = self.cfg.sync else { return };
        let publisher = sync.publisher;
        while self.sync_inflight.is_none() {
            if !self.nodes[publisher.index()].alive {
                self.sync_queue.clear();
                return;
            }
            let Some((peer, payload)) = self.sync_queue.pop_front() else {
                return;
            };
            if !self.nodes[peer.index()].alive {
                continue;
            }
            match self.nodes[publisher.index()].transfer.send_reliable(
                peer,
                FrameKind::BundleData,
                &payload,
            ) {
                Ok((message_id, actions)) => {
                    self.sync_inflight = Some(message_id);
                    self.process_actions(publisher, actions);
                }
                Err(err) => {
                    self.log_violation(publisher, format!("bundle send failed: {err}"));
                }
            }
        }
    }

    fn on_bundle_received(&mut self, me: NodeId, source: NodeId, payload: BundlePayload) {
        match payload {
            BundlePayload::Push(bundle) => {
                match apply_bundle(&mut self.nodes[me.index()].file, &bundle) {
                    Ok(ApplyOutcome::Advanced) => self.counters.bundles_applied += 1,
                    Ok(ApplyOutcome::AlreadyApplied) => {}
                    Err(err) => {
                        // Stale base: ask the sender for a full resync.
                        self.counters.bundle_rejects += 1;
                        self.log_violation(me, format!("bundle rejected: {err}"));
                        let current = self.nodes[me.index()].file.current_version;
                        let request = BundlePayload::ResyncRequest { current }.encode();
                        match self.nodes[me.index()].transfer.send_reliable(
                            source,
                            FrameKind::BundleData,
                            &request,
                        ) {
                            Ok((_, actions)) => {
                                self.counters.resync_requests += 1;
                                self.process_actions(me, actions);
                            }
                            Err(err) => {
                                self.log_violation(me, format!("resync request failed: {err}"))
                            }
                        }
                    }
                }
            }
            BundlePayload::ResyncRequest { current } => {
                let Some(sync) = self.cfg.sync else { return };
                if self.cfg.sync.map(|s| s.publisher) != Some(me) {
                    return;
                }
                if current == self.sync_head {
                    return;
                }
                let bundle = make_bundle(current, self.sync_head, sync.resync_bytes)
                    .expect("versions differ");
                let payload = BundlePayload::Push(bundle).encode();
                self.sync_queue.push_back((source, payload));
                self.advance_sync_queue();
            }
        }
    }

    // -- faults ----------------------------------------------------------------

    fn on_fault(&mut self, idx: usize) {
        let fault = self.cfg.faults[idx];
        match fault.action {
            FaultAction::KillNode(node) => self.kill_node(node),
            FaultAction::ReviveNode(node) => self.revive_node(node),
            FaultAction::KillService(svc) => self.kill_service(svc),
        }
    }

    fn kill_node(&mut self, node: NodeId) {
        let now = self.now();
        if !self.nodes[node.index()].alive {
            return;
        }
        self.medium.doom_active(node);
        // Outbound metric packets die with the node.
        let carried: Vec<(NodeId, u16)> = self
            .transfer_packets
            .keys()
            .filter(|(n, _)| *n == node)
            .copied()
            .collect();
        for key in carried {
            if let Some(pkt) = self.transfer_packets.remove(&key) {
                self.mark_packet_lost(pkt);
            }
        }
        let injections: Vec<(NodeId, u16)> = self
            .transfer_injections
            .keys()
            .filter(|(n, _)| *n == node)
            .copied()
            .collect();
        for key in injections {
            if let Some(i) = self.transfer_injections.remove(&key) {
                self.injection_results[i].failed = true;
            }
        }
        let buffered: Vec<(NodeId, u32)> = self.nodes[node.index()]
            .pending_metrics
            .iter()
            .map(|p| (p.source, p.sequence))
            .collect();
        for key in buffered {
            self.mark_packet_lost(key);
        }
        let running: Vec<ServiceIdx> =
            self.nodes[node.index()].running.iter().copied().collect();
        for svc in running {
            self.span_end(svc, node, now);
        }
        let runtime = &mut self.nodes[node.index()];
        runtime.alive = false;
        runtime.boot_gen += 1;
        runtime.running.clear();
        runtime.locally_lost.clear();
        runtime.starting.clear();
        runtime.pending_metrics.clear();
        runtime.transfer.reset();
        self.node_down_since[node.index()] = Some(now);
        if self.cfg.sync.map(|s| s.publisher) == Some(node) {
            self.sync_queue.clear();
            self.sync_inflight = None;
        }
    }

    /// A revived node boots fresh: it reads the static config (layout
    /// primaries), considers every peer alive, and does NOT restart the
    /// services it used to run; reclaiming requires explicit scenario
    /// action, never an automatic takeback.
    fn revive_node(&mut self, node: NodeId) {
        let now = self.now();
        if self.nodes[node.index()].alive {
            return;
        }
        let peers: Vec<NodeId> = (0..self.nodes.len() as u8)
            .map(NodeId)
            .filter(|&p| p != node)
            .collect();
        let placements = self
            .cfg
            .layout
            .indices()
            .map(|idx| (idx, self.cfg.layout.get(idx).primary))
            .collect();
        {
            let runtime = &mut self.nodes[node.index()];
            runtime.alive = true;
            runtime.boot_gen += 1;
            runtime.listening_since = now;
            runtime.liveness = LivenessTable::new(peers, now);
            runtime.placements = placements;
            runtime.transfer.reset();
        }
        self.node_down_since[node.index()] = None;

        let gen = self.nodes[node.index()].boot_gen;
        self.schedule_in(
            self.cfg.check_interval,
            EventTarget::Node(node),
            Ev::Maintenance { node, gen },
        );
        if self.cfg.heartbeat_interval > SimTime::ZERO {
            let first = self
                .cfg
                .heartbeat_interval
                .mul_f64(self.rng.draw("jitter").expect("jitter stream"));
            self.schedule_in(first, EventTarget::Node(node), Ev::Heartbeat { node, gen });
        }
        if self.nodes[node.index()].reports_metrics {
            // Rejoin the sampling grid at the next slot for this node.
            let offset = self.nodes[node.index()].metric_offset;
            let interval = self.cfg.metric_interval.as_micros();
            let elapsed = now.as_micros().saturating_sub(offset.as_micros());
            let next = offset.as_micros() + elapsed.div_ceil(interval).max(1) * interval;
            self.schedule(
                SimTime::from_micros(next),
                EventTarget::Node(node),
                Ev::MetricsSample { node, gen },
            );
        }
        if self.cfg.sync.map(|s| s.publisher) == Some(node) {
            let interval = self.cfg.sync.expect("checked").interval;
            self.schedule_in(interval, EventTarget::Node(node), Ev::BundlePublish { gen });
        }
    }

    fn kill_service(&mut self, svc: ServiceIdx) {
        let now = self.now();
        let host = self
            .nodes
            .iter()
            .find(|n| n.alive && n.running.contains(&svc))
            .map(|n| n.id);
        let Some(host) = host else { return };
        self.nodes[host.index()].running.remove(&svc);
        self.nodes[host.index()].locally_lost.insert(svc);
        self.span_end(svc, host, now);
        self.svc_kill_time.insert(svc, now);
    }

    // -- injections (test hook) ---------------------------------------------------

    fn on_inject(&mut self, idx: usize) {
        let injection = self.opts.injections[idx].clone();
        let source = injection.source;
        if !self.nodes[source.index()].alive {
            return;
        }
        match self.nodes[source.index()].transfer.send_reliable(
            injection.dest,
            injection.kind,
            &injection.payload,
        ) {
            Ok((message_id, actions)) => {
                self.injection_results[idx].sent = true;
                self.transfer_injections.insert((source, message_id), idx);
                self.process_actions(source, actions);
            }
            Err(TransferError::Codec(err)) => {
                self.log_violation(source, format!("injection rejected: {err}"))
            }
            Err(err) => self.log_violation(source, format!("injection rejected: {err}")),
        }
    }
}
