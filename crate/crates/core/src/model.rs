//! Shared domain types: band parameters, simulation time, slot numbers and
//! application configuration.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// Root of the DODAG is always node 0.
pub const ROOT: NodeId = 0;

/// Simulation time in integer microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s <= 0.0 {
            SimTime(0)
        } else {
            SimTime((s * 1e6).round() as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Absolute slot number within one band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Asn(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    #[serde(rename = "2.4GHz")]
    Band24GHz,
    #[serde(rename = "868MHz")]
    Band868MHz,
}

impl BandId {
    pub const ALL: [BandId; 2] = [BandId::Band24GHz, BandId::Band868MHz];

    /// Short label used in file names and stream derivation.
    pub fn tag(self) -> &'static str {
        match self {
            BandId::Band24GHz => "24ghz",
            BandId::Band868MHz => "868mhz",
        }
    }

    pub fn from_tag(tag: &str) -> Option<BandId> {
        match tag {
            "24ghz" | "2.4GHz" => Some(BandId::Band24GHz),
            "868mhz" | "868MHz" => Some(BandId::Band868MHz),
            _ => None,
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandId::Band24GHz => "2.4GHz",
            BandId::Band868MHz => "868MHz",
        })
    }
}

/// PHY/MAC parameters of one radio plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub band_id: BandId,
    pub center_frequency_hz: f64,
    pub channel_count: u32,
    pub channel_spacing_hz: f64,
    pub bitrate_bps: u32,
    pub slot_duration: SimTime,
    pub radio_sensitivity_dbm: f64,
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
}

pub const DEFAULT_TX_POWER_DBM: f64 = 0.0;
pub const DEFAULT_NOISE_FLOOR_DBM: f64 = -105.0;

impl BandConfig {
    /// IEEE 802.15.4 O-QPSK at 2.4 GHz, CC2538-class receiver.
    pub fn reference_24ghz() -> Self {
        BandConfig {
            band_id: BandId::Band24GHz,
            center_frequency_hz: 2.4e9,
            channel_count: 16,
            channel_spacing_hz: 5e6,
            bitrate_bps: 250_000,
            slot_duration: SimTime::from_micros(10_000),
            radio_sensitivity_dbm: -97.0,
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
        }
    }

    /// IEEE 802.15.4g SUN FSK operating mode #1 in the 863-870 MHz band,
    /// CC1352R-class receiver (13 dB more sensitive than the 2.4 GHz radio).
    pub fn reference_868mhz() -> Self {
        BandConfig {
            band_id: BandId::Band868MHz,
            center_frequency_hz: 868e6,
            channel_count: 34,
            channel_spacing_hz: 200e3,
            bitrate_bps: 50_000,
            slot_duration: SimTime::from_micros(29_380),
            radio_sensitivity_dbm: -110.0,
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
        }
    }

    pub fn reference(band: BandId) -> Self {
        match band {
            BandId::Band24GHz => Self::reference_24ghz(),
            BandId::Band868MHz => Self::reference_868mhz(),
        }
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::propagation::SPEED_OF_LIGHT / self.center_frequency_hz
    }
}

pub fn asn_to_time(asn: Asn, band: &BandConfig) -> SimTime {
    SimTime(asn.0 * band.slot_duration.0)
}

/// First slot whose start time is at or after `t`.
pub fn time_to_next_asn(t: SimTime, band: &BandConfig) -> Asn {
    let d = band.slot_duration.0;
    Asn(t.0.div_ceil(d))
}

/// Checks a band configuration. Structural constraints (positive and finite
/// values) are always checked; `strict_paper_mode` also
/// pins channel count, slot duration and bitrate to the reference values.
pub fn validate_band_config(band: &BandConfig, strict_paper_mode: bool) -> Result<()> {
    let mut violations = Vec::new();
    if !(band.center_frequency_hz > 0.0) {
        violations.push("center_frequency_hz must be positive".to_string());
    }
    if band.channel_count == 0 {
        violations.push("channel_count must be positive".to_string());
    }
    if !(band.channel_spacing_hz > 0.0) {
        violations.push("channel_spacing_hz must be positive".to_string());
    }
    if band.bitrate_bps == 0 {
        violations.push("bitrate_bps must be positive".to_string());
    }
    if band.slot_duration.0 == 0 {
        violations.push("slot_duration must be positive".to_string());
    }
    if !band.noise_floor_dbm.is_finite() || !band.radio_sensitivity_dbm.is_finite() {
        violations.push("noise_floor_dbm and radio_sensitivity_dbm must be finite".to_string());
    }
    if !band.tx_power_dbm.is_finite() {
        violations.push("tx_power_dbm must be finite".to_string());
    }
    if strict_paper_mode {
        let reference = BandConfig::reference(band.band_id);
        if band.channel_count != reference.channel_count {
            violations.push(format!("channel_count must be {} for {}", reference.channel_count, band.band_id));
        }
        if band.slot_duration != reference.slot_duration {
            violations.push(format!("slot_duration must be {} s for {}", reference.slot_duration, band.band_id));
        }
        if band.bitrate_bps != reference.bitrate_bps {
            violations.push(format!("bitrate_bps must be {} for {}", reference.bitrate_bps, band.band_id));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidBandConfig(violations))
    }
}

/// Application packet identity, shared by both band copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PacketId {
    pub source: NodeId,
    pub sequence: u32,
}

/// Traffic and timing parameters. Durations are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub message_interval: f64,
    pub interval_variance: f64,
    pub max_retransmissions: u32,
    pub setup_time: f64,
    pub duration: f64,
    pub payload_size: u32,
    pub seed: u64,
}

/// Seed listed in the reference scenario table.
pub const REFERENCE_SEED: u64 = 0x74C2A74018BDB;

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            message_interval: 10.0,
            interval_variance: 0.0,
            max_retransmissions: 3,
            setup_time: 5400.0,
            duration: 7200.0,
            payload_size: 90,
            seed: REFERENCE_SEED,
        }
    }
}

impl AppConfig {
    pub fn setup(&self) -> SimTime {
        SimTime::from_secs_f64(self.setup_time)
    }

    pub fn end(&self) -> SimTime {
        SimTime::from_secs_f64(self.setup_time + self.duration)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.message_interval > 0.0) {
            v.push("message_interval must be positive".to_string());
        }
        if !(self.interval_variance >= 0.0) {
            v.push("interval_variance must be non-negative".to_string());
        }
        if !(self.setup_time > 0.0) {
            v.push("setup_time must be positive".to_string());
        }
        if !(self.duration >= 0.0) {
            v.push("duration must be non-negative".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidAppConfig(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asn_to_time_examples() {
        let b24 = BandConfig::reference_24ghz();
        let b868 = BandConfig::reference_868mhz();
        assert_eq!(asn_to_time(Asn(0), &b24), SimTime::ZERO);
        assert_eq!(asn_to_time(Asn(0), &b868), SimTime::ZERO);
        assert_eq!(asn_to_time(Asn(100), &b24), SimTime::from_secs(1));
        assert_eq!(asn_to_time(Asn(100), &b868), SimTime::from_micros(2_938_000));
        assert_eq!(asn_to_time(Asn(100), &b868).as_secs_f64(), 2.938);
    }

    #[test]
    fn exact_over_full_run() {
        // 12600 s at 29.38 ms slots: no drift, exact integer arithmetic.
        let b868 = BandConfig::reference_868mhz();
        let n = 12_600_000_000 / 29_380;
        assert_eq!(asn_to_time(Asn(n), &b868).as_micros(), n * 29_380);
        assert_eq!(time_to_next_asn(SimTime::from_secs(5400), &b868), Asn(183_799));
        assert_eq!(time_to_next_asn(SimTime::from_secs(5400), &BandConfig::reference_24ghz()), Asn(540_000));
    }

    #[test]
    fn reference_configs_valid_in_strict_mode() {
        validate_band_config(&BandConfig::reference_24ghz(), true).unwrap();
        validate_band_config(&BandConfig::reference_868mhz(), true).unwrap();
    }

    #[test]
    fn strict_mode_rejects_wrong_channel_count() {
        let mut b = BandConfig::reference_868mhz();
        b.channel_count = 16;
        validate_band_config(&b, false).unwrap();
        match validate_band_config(&b, true) {
            Err(Error::InvalidBandConfig(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("channel_count"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_slot_duration_rejected() {
        let mut b = BandConfig::reference_24ghz();
        b.slot_duration = SimTime::ZERO;
        for strict in [false, true] {
            match validate_band_config(&b, strict) {
                Err(Error::InvalidBandConfig(v)) => {
                    assert!(v.iter().any(|s| s.contains("slot_duration")))
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn sim_time_display() {
        assert_eq!(SimTime::from_micros(5_400_500_000).to_string(), "5400.500000");
        assert_eq!(SimTime::from_secs_f64(0.02938), SimTime(29_380));
    }

    #[test]
    fn reference_app_defaults() {
        let a = AppConfig::default();
        assert_eq!(a.message_interval, 10.0);
        assert_eq!(a.interval_variance, 0.0);
        assert_eq!(a.max_retransmissions, 3);
        assert_eq!(a.setup_time, 5400.0);
        assert_eq!(a.duration, 7200.0);
        assert_eq!(a.payload_size, 90);
        assert_eq!(a.seed, 0x74C2A74018BDB);
    }
}
