use super::RadioError;
use crate::NodeId;
use serde::{Deserialize, Serialize};

/// Static placement of a node, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePosition {
    pub node: NodeId,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NodePosition {
    pub fn distance_to(&self, other: &NodePosition) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Log-distance path loss with optional lognormal shadowing.
///
/// The shadowing term is drawn once per link at scenario start and held
/// fixed, so short indoor geometries stay stable across a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossModel {
    pub exponent: f64,
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            exponent: 2.7,
            reference_loss_db: 40.0,
            reference_distance_m: 1.0,
            shadowing_sigma_db: 3.0,
        }
    }
}

impl PathLossModel {
    /// Path loss in dB at distance `d` metres, excluding shadowing.
    pub fn path_loss_db(&self, d: f64) -> f64 {
        self.reference_loss_db + 10.0 * self.exponent * (d / self.reference_distance_m).log10()
    }
}

/// Received signal strength at `rx` for a transmission from `tx`.
/// `shadowing_db` is the frozen per-link draw (0 when shadowing is off).
pub fn rssi_at(
    tx: &NodePosition,
    rx: &NodePosition,
    tx_power_dbm: f64,
    model: &PathLossModel,
    shadowing_db: f64,
) -> Result<f64, RadioError> {
    let d = tx.distance_to(rx);
    if d <= 0.0 {
        return Err(RadioError::ZeroDistance);
    }
    Ok(tx_power_dbm - model.path_loss_db(d) + shadowing_db)
}
