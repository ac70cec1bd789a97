use serde::{Deserialize, Serialize};

use super::ModelError;

/// Channel access scheme modelled by the renewal-reward analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Aloha,
    Dcf,
}

/// PHY/MAC timing and contention constants.
///
/// Sizes are in bits, rates in bits per second and durations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub protocol: Protocol,
    /// Minimum contention window `W`, in slots.
    pub cw_min: u32,
    /// Number of backoff stages `m` (DCF only; the window caps at `2^m * W`).
    pub backoff_stages: u32,
    pub payload_bits: f64,
    pub mac_header_bits: f64,
    pub plcp_preamble_bits: f64,
    pub plcp_header_bits: f64,
    pub ack_bits: f64,
    pub data_rate: f64,
    pub basic_rate: f64,
    pub phy_rate: f64,
    /// Duration of an empty backoff slot (DCF).
    pub empty_slot: f64,
    pub difs: f64,
    pub sifs: f64,
}

impl ProtocolParams {
    /// IEEE 802.11b constants with a 1500 byte payload.
    pub fn ieee80211b(protocol: Protocol, cw_min: u32, backoff_stages: u32) -> Self {
        Self {
            protocol,
            cw_min,
            backoff_stages,
            payload_bits: 1500.0 * 8.0,
            mac_header_bits: 272.0,
            plcp_preamble_bits: 144.0,
            plcp_header_bits: 48.0,
            ack_bits: 112.0,
            data_rate: 11e6,
            basic_rate: 1e6,
            phy_rate: 1e6,
            empty_slot: 20e-6,
            difs: 50e-6,
            sifs: 10e-6,
        }
    }

    /// DCF with 802.11b timing.
    pub fn dcf(cw_min: u32, backoff_stages: u32) -> Self {
        Self::ieee80211b(Protocol::Dcf, cw_min, backoff_stages)
    }

    /// Aloha with 802.11b frame timing. `backoff_stages` is unused.
    pub fn aloha(cw_min: u32) -> Self {
        Self::ieee80211b(Protocol::Aloha, cw_min, 0)
    }

    pub fn with_payload_bytes(mut self, bytes: f64) -> Self {
        self.payload_bits = bytes * 8.0;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("payload_bits", self.payload_bits),
            ("mac_header_bits", self.mac_header_bits),
            ("plcp_preamble_bits", self.plcp_preamble_bits),
            ("plcp_header_bits", self.plcp_header_bits),
            ("ack_bits", self.ack_bits),
            ("data_rate", self.data_rate),
            ("basic_rate", self.basic_rate),
            ("phy_rate", self.phy_rate),
            ("empty_slot", self.empty_slot),
            ("difs", self.difs),
            ("sifs", self.sifs),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if self.cw_min < 1 {
            return Err(ModelError::InvalidParams {
                field: "cw_min",
                reason: "must be >= 1".into(),
            });
        }
        // 2^m * W must stay representable as a slot count.
        if self.backoff_stages > 20 {
            return Err(ModelError::InvalidParams {
                field: "backoff_stages",
                reason: format!("must be <= 20, got {}", self.backoff_stages),
            });
        }
        Ok(())
    }

    /// Largest contention window, `2^m * W`.
    pub fn cw_max(&self) -> u64 {
        u64::from(self.cw_min) << self.backoff_stages
    }
}

/// Frame exchange durations derived from [`ProtocolParams`], in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTimings {
    pub frame: f64,
    pub ack: f64,
    pub success: f64,
    pub collision: f64,
    /// Aloha contention slot; equal to a full frame exchange.
    pub aloha_slot: f64,
}

pub fn compute_timings(params: &ProtocolParams) -> FrameTimings {
    let plcp = (params.plcp_preamble_bits + params.plcp_header_bits) / params.phy_rate;
    let frame = plcp + params.mac_header_bits / params.basic_rate + params.payload_bits / params.data_rate;
    let ack = plcp + params.ack_bits / params.basic_rate;
    let success = params.difs + frame + params.sifs + ack;
    FrameTimings {
        frame,
        ack,
        success,
        collision: success,
        aloha_slot: success,
    }
}
