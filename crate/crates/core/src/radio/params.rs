use super::RadioError;
use crate::kernel::SimTime;
use serde::{Deserialize, Serialize};

/// Hard cap on one on-air frame (header plus body).
pub const MAX_FRAME_BYTES: usize = 252;

/// LoRa modulation and transmit parameters for one scenario.
///
/// The default profile is SF7, 125 kHz, CR 4/5, 20 dBm at 868 MHz with an
/// 8-symbol preamble, explicit header, and CRC on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Chips-per-symbol exponent, 7..=12.
    pub spreading_factor: u8,
    /// One of 125000, 250000, 500000.
    pub bandwidth_hz: u32,
    /// Coding-rate denominator, 5..=8 (CR 4/5 .. 4/8).
    pub coding_rate_denominator: u8,
    /// Transmit power, -4..=20 dBm.
    pub tx_power_dbm: i8,
    pub frequency_hz: u32,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub crc_enabled: bool,
    /// Manual low-data-rate-optimize request. Regardless of this flag, LDRO
    /// is forced on whenever the symbol duration exceeds 16 ms, matching
    /// transceiver convention.
    pub low_data_rate_optimize: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            spreading_factor: 7,
            bandwidth_hz: 125_000,
            coding_rate_denominator: 5,
            tx_power_dbm: 20,
            frequency_hz: 868_000_000,
            preamble_symbols: 8,
            explicit_header: true,
            crc_enabled: true,
            low_data_rate_optimize: false,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(RadioError::InvalidParams(format!(
                "spreading_factor {} outside 7..=12",
                self.spreading_factor
            )));
        }
        if ![125_000, 250_000, 500_000].contains(&self.bandwidth_hz) {
            return Err(RadioError::InvalidParams(format!(
                "bandwidth_hz {} not one of 125000/250000/500000",
                self.bandwidth_hz
            )));
        }
        if !(5..=8).contains(&self.coding_rate_denominator) {
            return Err(RadioError::InvalidParams(format!(
                "coding_rate_denominator {} outside 5..=8",
                self.coding_rate_denominator
            )));
        }
        if !(-4..=20).contains(&self.tx_power_dbm) {
            return Err(RadioError::InvalidParams(format!(
                "tx_power_dbm {} outside -4..=20",
                self.tx_power_dbm
            )));
        }
        if self.preamble_symbols < 6 {
            return Err(RadioError::InvalidParams(format!(
                "preamble_symbols {} below the transceiver minimum of 6",
                self.preamble_symbols
            )));
        }
        Ok(())
    }

    /// Symbol duration in microseconds (exact for the supported SF/BW grid).
    pub fn symbol_time_us(&self) -> u64 {
        (1u64 << self.spreading_factor) * 1_000_000 / self.bandwidth_hz as u64
    }

    /// Effective low-data-rate-optimize: forced on above 16 ms symbols
    /// (SF11/SF12 at 125 kHz, SF12 at 250 kHz).
    pub fn effective_ldro(&self) -> bool {
        self.low_data_rate_optimize || self.symbol_time_us() > 16_000
    }

    /// Number of coded payload symbols beyond the fixed 8-symbol block.
    fn coded_block_symbols(&self, payload_len: usize) -> u64 {
        let sf = self.spreading_factor as i64;
        let de = if self.effective_ldro() { 1 } else { 0 };
        let ih = if self.explicit_header { 0 } else { 1 };
        let crc = if self.crc_enabled { 1 } else { 0 };
        let numerator = 8 * payload_len as i64 - 4 * sf + 28 + 16 * crc - 20 * ih;
        let denominator = 4 * (sf - 2 * de);
        let blocks = if numerator > 0 {
            (numerator + denominator - 1) / denominator
        } else {
            0
        };
        blocks as u64 * self.coding_rate_denominator as u64
    }

    /// Time on air for a frame of `payload_len` bytes, per the SX127x
    /// formula, rounded to the nearest microsecond.
    pub fn airtime(&self, payload_len: usize) -> Result<SimTime, RadioError> {
        Ok(self.airtime_breakdown(payload_len)?.total())
    }

    /// Same computation split into preamble, fixed payload block, and the
    /// coding-rate-scaled block; useful for analysing parameter sweeps.
    pub fn airtime_breakdown(&self, payload_len: usize) -> Result<AirtimeBreakdown, RadioError> {
        if payload_len > 255 {
            return Err(RadioError::PayloadTooLarge(payload_len));
        }
        let coded = self.coded_block_symbols(payload_len);
        // Work in quarter-symbols: preamble is n + 4.25 symbols.
        let preamble_qsym = 4 * self.preamble_symbols as u64 + 17;
        Ok(AirtimeBreakdown {
            preamble_us: self.quarter_symbols_to_us(preamble_qsym),
            base_payload_us: self.quarter_symbols_to_us(4 * 8),
            coded_block_us: self.quarter_symbols_to_us(4 * coded),
        })
    }

    fn quarter_symbols_to_us(&self, qsym: u64) -> SimTime {
        let numerator = qsym as u128 * (1u128 << self.spreading_factor) * 1_000_000;
        let denominator = 4 * self.bandwidth_hz as u128;
        SimTime::from_micros(((numerator + denominator / 2) / denominator) as u64)
    }
}

/// Airtime of a frame decomposed into its three additive parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AirtimeBreakdown {
    pub preamble_us: SimTime,
    /// The fixed 8-symbol payload block present in every frame.
    pub base_payload_us: SimTime,
    /// ceil-block count times the coding-rate denominator.
    pub coded_block_us: SimTime,
}

impl AirtimeBreakdown {
    pub fn total(&self) -> SimTime {
        self.preamble_us + self.base_payload_us + self.coded_block_us
    }
}

/// Receiver sensitivity in dBm for a (spreading factor, bandwidth) pair,
/// from standard SX127x datasheet figures.
pub fn default_sensitivity_dbm(spreading_factor: u8, bandwidth_hz: u32) -> f64 {
    let row = (spreading_factor.clamp(7, 12) - 7) as usize;
    match bandwidth_hz {
        125_000 => [-123.0, -126.0, -129.0, -132.0, -133.0, -136.0][row],
        250_000 => [-120.0, -123.0, -125.0, -128.0, -130.0, -133.0][row],
        _ => [-116.0, -119.0, -122.0, -125.0, -128.0, -130.0][row],
    }
}
