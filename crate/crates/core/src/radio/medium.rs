use super::duty::{Admission, DutyCycleLedger};
use super::params::{default_sensitivity_dbm, RadioParams, MAX_FRAME_BYTES};
use super::pathloss::{rssi_at, NodePosition, PathLossModel};
use super::RadioError;
use crate::kernel::SimTime;
use crate::NodeId;

/// Index into the medium's transmission log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransmissionId(pub u64);

/// One on-air transmission. Occupies the channel over [start, end).
#[derive(Debug, Clone)]
pub struct TransmissionRecord {
    pub id: TransmissionId,
    pub sender: NodeId,
    pub bytes: usize,
    pub start: SimTime,
    pub end: SimTime,
    /// Whether another same-channel transmission overlapped this one.
    pub collided: bool,
    /// Nodes that successfully decoded the frame, filled at resolution.
    pub delivered_to: Vec<NodeId>,
    /// Sender died mid-frame; nobody can decode it.
    pub doomed: bool,
}

/// Answer from [`Medium::try_transmit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxDecision {
    Accepted { start: SimTime, end: SimTime },
    Deferred { next_allowed: SimTime },
}

/// Why a receiver did or did not decode a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOutcome {
    Delivered,
    BelowSensitivity,
    Collided,
    /// The receiver's own radio was transmitting during the frame.
    HalfDuplex,
    /// The sender died mid-frame.
    SenderDied,
}

/// RSSI of one transmission as seen at a particular receiver.
#[derive(Debug, Clone, Copy)]
pub struct ReceptionEntry {
    pub id: TransmissionId,
    pub rssi_dbm: f64,
}

/// Decide which (if any) of a set of time-overlapping, same-channel
/// transmissions a receiver decodes.
///
/// A lone transmission is decoded when its RSSI reaches the sensitivity
/// floor. Overlapping transmissions destroy each other unless capture is
/// enabled and one exceeds every other by at least the capture margin, in
/// which case only that one survives. The result does not depend on the
/// order of `entries`.
pub fn resolve_reception(
    entries: &[ReceptionEntry],
    sensitivity_dbm: f64,
    capture_margin_db: Option<f64>,
) -> Option<TransmissionId> {
    match entries {
        [] => None,
        [only] => (only.rssi_dbm >= sensitivity_dbm).then_some(only.id),
        several => {
            let margin = capture_margin_db?;
            let mut best = several[0];
            let mut runner_up = f64::NEG_INFINITY;
            for entry in &several[1..] {
                if entry.rssi_dbm > best.rssi_dbm {
                    runner_up = best.rssi_dbm;
                    best = *entry;
                } else if entry.rssi_dbm > runner_up {
                    runner_up = entry.rssi_dbm;
                }
            }
            (best.rssi_dbm >= runner_up + margin && best.rssi_dbm >= sensitivity_dbm)
                .then_some(best.id)
        }
    }
}

/// The shared radio channel: per-node duty ledgers, the transmission log,
/// and frozen link RSSI values.
pub struct Medium {
    params: RadioParams,
    sensitivity_dbm: f64,
    capture_margin_db: Option<f64>,
    /// rssi[tx][rx]; NaN on the diagonal.
    rssi: Vec<Vec<f64>>,
    ledgers: Vec<DutyCycleLedger>,
    log: Vec<TransmissionRecord>,
    /// Per node: its transmission currently in the air, if any.
    active_tx: Vec<Option<TransmissionId>>,
}

impl Medium {
    /// `shadowing_db[i][j]` must be symmetric; it is added onto the
    /// deterministic path loss once, here, and never re-drawn.
    pub fn new(
        params: RadioParams,
        positions: &[NodePosition],
        link: &PathLossModel,
        shadowing_db: &[Vec<f64>],
        sensitivity_override_dbm: Option<f64>,
        capture_margin_db: Option<f64>,
        duty_window: SimTime,
        duty_budget: (u64, u64),
    ) -> Result<Self, RadioError> {
        params.validate()?;
        let n = positions.len();
        let mut rssi = vec![vec![f64::NAN; n]; n];
        for (i, tx) in positions.iter().enumerate() {
            for (j, rx) in positions.iter().enumerate() {
                if i == j {
                    continue;
                }
                rssi[i][j] = rssi_at(
                    tx,
                    rx,
                    params.tx_power_dbm as f64,
                    link,
                    shadowing_db[i][j],
                )?;
            }
        }
        let sensitivity_dbm = sensitivity_override_dbm.unwrap_or_else(|| {
            default_sensitivity_dbm(params.spreading_factor, params.bandwidth_hz)
        });
        Ok(Medium {
            params,
            sensitivity_dbm,
            capture_margin_db,
            rssi,
            ledgers: (0..n)
                .map(|_| DutyCycleLedger::new(duty_window, duty_budget.0, duty_budget.1))
                .collect(),
            log: Vec::new(),
            active_tx: vec![None; n],
        })
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn sensitivity_dbm(&self) -> f64 {
        self.sensitivity_dbm
    }

    pub fn rssi_between(&self, tx: NodeId, rx: NodeId) -> f64 {
        self.rssi[tx.index()][rx.index()]
    }

    pub fn log(&self) -> &[TransmissionRecord] {
        &self.log
    }

    pub fn transmissions(&self) -> usize {
        self.log.len()
    }

    /// Gate a frame through the sender's duty-cycle ledger. On admission
    /// the transmission is committed to the channel and its record created;
    /// the caller schedules the completion event at `end`. On deferral
    /// nothing is recorded: re-requesting is the caller's job.
    pub fn try_transmit(
        &mut self,
        sender: NodeId,
        frame_bytes: usize,
        now: SimTime,
    ) -> Result<TxDecision, RadioError> {
        if frame_bytes > MAX_FRAME_BYTES {
            return Err(RadioError::FrameTooLarge(frame_bytes));
        }
        if self.active_tx[sender.index()].is_some() {
            return Err(RadioError::RadioBusy);
        }
        let airtime = self.params.airtime(frame_bytes)?;
        let ledger = &mut self.ledgers[sender.index()];
        ledger.prune(now);
        match ledger.check(now, airtime)? {
            Admission::DeferUntil(next_allowed) => Ok(TxDecision::Deferred { next_allowed }),
            Admission::Admitted => {
                ledger.commit(now, airtime);
                let end = now + airtime;
                let id = TransmissionId(self.log.len() as u64);
                self.log.push(TransmissionRecord {
                    id,
                    sender,
                    bytes: frame_bytes,
                    start: now,
                    end,
                    collided: false,
                    delivered_to: Vec::new(),
                    doomed: false,
                });
                self.active_tx[sender.index()] = Some(id);
                Ok(TxDecision::Accepted { start: now, end })
            }
        }
    }

    /// Mark the sender's in-flight frame as undecodable (node killed).
    pub fn doom_active(&mut self, sender: NodeId) {
        if let Some(id) = self.active_tx[sender.index()] {
            self.log[id.0 as usize].doomed = true;
        }
    }

    /// Ids of transmissions overlapping `[start, end)` on the same channel,
    /// excluding `subject`.
    fn overlapping(&self, subject: TransmissionId, start: SimTime, end: SimTime) -> Vec<usize> {
        // Log is start-ordered; anything started more than a maximal frame
        // airtime before `start` has already ended.
        let horizon = self
            .params
            .airtime(MAX_FRAME_BYTES)
            .expect("max frame airtime");
        let mut out = Vec::new();
        for (idx, rec) in self.log.iter().enumerate().rev() {
            if rec.start + horizon < start {
                break;
            }
            if rec.id != subject && rec.start < end && rec.end > start {
                out.push(idx);
            }
        }
        out.reverse();
        out
    }

    /// Resolve the fate of a finished transmission at every candidate
    /// receiver and free the sender's radio. Returns (receiver, outcome)
    /// pairs in receiver order; the caller applies any additional loss and
    /// then records the final outcome via [`Medium::record_outcome`].
    ///
    /// `receiving[i]` is false for nodes that cannot listen (dead, or not
    /// alive for the frame's whole duration).
    pub fn finish_transmission(
        &mut self,
        id: TransmissionId,
        receiving: &[bool],
    ) -> Vec<(NodeId, DecodeOutcome)> {
        let idx = id.0 as usize;
        let (sender, start, end, doomed) = {
            let rec = &self.log[idx];
            (rec.sender, rec.start, rec.end, rec.doomed)
        };
        self.active_tx[sender.index()] = None;

        let overlap_idx = self.overlapping(id, start, end);
        let collided = !overlap_idx.is_empty();
        let mut outcomes = Vec::new();

        for rx in 0..self.rssi.len() {
            let rx_id = NodeId(rx as u8);
            if rx_id == sender || !receiving[rx] {
                continue;
            }
            if doomed {
                outcomes.push((rx_id, DecodeOutcome::SenderDied));
                continue;
            }
            // Half-duplex: a node that was itself transmitting during any
            // part of the frame hears nothing. Any such transmission is by
            // definition in the overlap set.
            let busy = overlap_idx.iter().any(|&i| self.log[i].sender == rx_id);
            if busy {
                outcomes.push((rx_id, DecodeOutcome::HalfDuplex));
                continue;
            }
            let mut entries = vec![ReceptionEntry {
                id,
                rssi_dbm: self.rssi[sender.index()][rx],
            }];
            for &oi in &overlap_idx {
                let other = &self.log[oi];
                if other.sender == rx_id {
                    continue;
                }
                entries.push(ReceptionEntry {
                    id: other.id,
                    rssi_dbm: self.rssi[other.sender.index()][rx],
                });
            }
            let winner = resolve_reception(&entries, self.sensitivity_dbm, self.capture_margin_db);
            let outcome = if winner == Some(id) {
                DecodeOutcome::Delivered
            } else if entries.len() == 1 {
                DecodeOutcome::BelowSensitivity
            } else {
                DecodeOutcome::Collided
            };
            outcomes.push((rx_id, outcome));
        }

        self.log[idx].collided = collided;
        outcomes
    }

    /// Record which receivers actually kept the frame.
    pub fn record_outcome(&mut self, id: TransmissionId, delivered_to: &[NodeId]) {
        self.log[id.0 as usize].delivered_to = delivered_to.to_vec();
    }
}
