//! LoRa physical/link layer model: per-frame time-on-air, log-distance
//! path loss with frozen per-link shadowing, destructive collisions with an
//! optional capture effect, and sliding-window duty-cycle accounting.

mod duty;
mod medium;
mod params;
mod pathloss;

pub use duty::{Admission, DutyCycleLedger};
pub use medium::{
    resolve_reception, DecodeOutcome, Medium, ReceptionEntry, TransmissionId, TransmissionRecord,
    TxDecision,
};
pub use params::{AirtimeBreakdown, RadioParams, MAX_FRAME_BYTES};
pub use pathloss::{rssi_at, NodePosition, PathLossModel};

use crate::kernel::SimTime;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RadioError {
    #[error("payload of {0} bytes exceeds the 255-byte LoRa limit")]
    PayloadTooLarge(usize),
    #[error("frame of {0} bytes exceeds the {max}-byte frame cap", max = MAX_FRAME_BYTES)]
    FrameTooLarge(usize),
    #[error("invalid radio parameter: {0}")]
    InvalidParams(String),
    #[error("transmitter and receiver are at the same position")]
    ZeroDistance,
    #[error("frame airtime {airtime} alone exceeds the duty-cycle budget {budget}")]
    AirtimeExceedsBudget { airtime: SimTime, budget: SimTime },
    #[error("node is already transmitting")]
    RadioBusy,
}
