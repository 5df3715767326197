//! Link model: Friis free-space loss plus a uniform 0..40 dB excess loss per
//! attempt (Pister-Hack), RSSI to PDR waterfall tables, and SINR reception.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandConfig, BandId, NodeId};
use crate::rng::SimRng;
use crate::topology::Topology;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Width of the uniform excess-loss window on top of free space.
pub const PISTER_HACK_SPREAD_DB: f64 = 40.0;

/// Sensitivity gap between the 2.4 GHz and the sub-GHz radio.
pub const SUBGHZ_TABLE_OFFSET_DB: f64 = 13.0;

/// Free-space path loss in dB: 20·log10(4π·d/λ).
pub fn friis_path_loss(distance_m: f64, frequency_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be positive, got {distance_m}")));
    }
    if !(frequency_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("frequency must be positive, got {frequency_hz}")));
    }
    let wavelength = SPEED_OF_LIGHT / frequency_hz;
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m / wavelength).log10())
}

/// One attempt's RSSI given the free-space loss of the link.
pub fn sample_rssi_from_loss(tx_power_dbm: f64, friis_db: f64, rng: &mut SimRng) -> f64 {
    let excess = rng.random_range(0.0..=PISTER_HACK_SPREAD_DB);
    tx_power_dbm - (friis_db + excess)
}

pub fn sample_rssi(distance_m: f64, band: &BandConfig, rng: &mut SimRng) -> Result<f64> {
    let loss = friis_path_loss(distance_m, band.center_frequency_hz)?;
    Ok(sample_rssi_from_loss(band.tx_power_dbm, loss, rng))
}

/// Piecewise-linear RSSI to PDR mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct WaterfallTable {
    anchors: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for WaterfallTable {
    type Error = Error;
    fn try_from(anchors: Vec<(f64, f64)>) -> Result<Self> {
        WaterfallTable::new(anchors)
    }
}

impl From<WaterfallTable> for Vec<(f64, f64)> {
    fn from(t: WaterfallTable) -> Self {
        t.anchors
    }
}

impl WaterfallTable {
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::Waterfall("need at least two anchors".into()));
        }
        for w in anchors.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Waterfall(format!("rssi must be strictly increasing ({} then {})", w[0].0, w[1].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Waterfall(format!("pdr must be non-decreasing ({} then {})", w[0].1, w[1].1)));
            }
        }
        if anchors.iter().any(|&(r, p)| !r.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::Waterfall("pdr must lie in [0, 1] and rssi be finite".into()));
        }
        if anchors[0].1 != 0.0 {
            return Err(Error::Waterfall("first anchor pdr must be 0".into()));
        }
        if anchors[anchors.len() - 1].1 != 1.0 {
            return Err(Error::Waterfall("last anchor pdr must be 1".into()));
        }
        Ok(WaterfallTable { anchors })
    }

    /// Default 2.4 GHz table: linear from (-97 dBm, 0) to (-83 dBm, 1) in
    /// 1 dB steps.
    pub fn default_24ghz() -> Self {
        let anchors = (0..=14).map(|i| (-97.0 + i as f64, i as f64 / 14.0)).collect();
        WaterfallTable::new(anchors).expect("default table is valid")
    }

    /// Table for a band in the reference configuration: the sub-GHz table is
    /// the 2.4 GHz one shifted by the sensitivity gap.
    pub fn for_band(band: BandId) -> Self {
        match band {
            BandId::Band24GHz => Self::default_24ghz(),
            BandId::Band868MHz => Self::default_24ghz().offset(SUBGHZ_TABLE_OFFSET_DB),
        }
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn pdr(&self, rssi: f64) -> f64 {
        let first = self.anchors[0];
        let last = self.anchors[self.anchors.len() - 1];
        if rssi <= first.0 {
            return first.1;
        }
        if rssi >= last.0 {
            return last.1;
        }
        // first anchor with rssi strictly greater
        let hi = self.anchors.partition_point(|&(r, _)| r <= rssi);
        let (r1, p1) = self.anchors[hi - 1];
        let (r2, p2) = self.anchors[hi];
        p1 + (p2 - p1) * (rssi - r1) / (r2 - r1)
    }

    /// Shifts every anchor by `-offset_db`: a radio `offset_db` more sensitive
    /// reaches the same PDR at a lower RSSI.
    pub fn offset(&self, offset_db: f64) -> Self {
        WaterfallTable { anchors: self.anchors.iter().map(|&(r, p)| (r - offset_db, p)).collect() }
    }

    /// Parses `<rssi_dbm> <pdr>` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut anchors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse { line: i + 1, msg: "expected `<rssi> <pdr>`".into() })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })
            };
            let r = parse(parts.next())?;
            let p = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Parse { line: i + 1, msg: "trailing fields".into() });
            }
            anchors.push((r, p));
        }
        WaterfallTable::new(anchors)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (r, p) in &self.anchors {
            let _ = writeln!(out, "{r} {p}");
        }
        out
    }
}

pub fn rssi_to_pdr(rssi: f64, table: &WaterfallTable) -> f64 {
    table.pdr(rssi)
}

pub fn offset_table(table: &WaterfallTable, offset_db: f64) -> WaterfallTable {
    table.offset(offset_db)
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn sinr_db(signal_dbm: f64, interferers_dbm: &[f64], noise_floor_dbm: f64) -> f64 {
    let denom: f64 = interferers_dbm.iter().map(|&i| dbm_to_mw(i)).sum::<f64>() + dbm_to_mw(noise_floor_dbm);
    signal_dbm - 10.0 * denom.log10()
}

/// Reception probability for a frame: the SINR is looked up on the table's
/// axis relative to the noise floor. With no interferers this reduces to
/// `table.pdr(signal)`.
pub fn reception_probability(
    signal_dbm: f64,
    interferers_dbm: &[f64],
    noise_floor_dbm: f64,
    table: &WaterfallTable,
) -> f64 {
    if interferers_dbm.is_empty() {
        return table.pdr(signal_dbm);
    }
    table.pdr(noise_floor_dbm + sinr_db(signal_dbm, interferers_dbm, noise_floor_dbm))
}

pub fn sinr_reception(
    signal_dbm: f64,
    interferers_dbm: &[f64],
    noise_floor_dbm: f64,
    table: &WaterfallTable,
    rng: &mut SimRng,
) -> bool {
    let p = reception_probability(signal_dbm, interferers_dbm, noise_floor_dbm, table);
    rng.random::<f64>() < p
}

/// Source of per-attempt RSSI values between node pairs.
pub trait LinkModel {
    fn rssi(&self, from: NodeId, to: NodeId, rng: &mut SimRng) -> f64;

    /// Best-case (no excess loss) RSSI of the link.
    fn best_rssi(&self, from: NodeId, to: NodeId) -> f64;
}

/// Pister-Hack model over a precomputed free-space loss matrix.
#[derive(Clone, Debug)]
pub struct PisterHack {
    n: usize,
    tx_power_dbm: f64,
    friis_db: Vec<f64>,
}

impl PisterHack {
    pub fn new(topology: &Topology, band: &BandConfig) -> Result<Self> {
        let n = topology.len();
        let mut friis_db = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let d = topology.positions[a].distance(&topology.positions[b]);
                let loss = friis_path_loss(d, band.center_frequency_hz)
                    .map_err(|_| Error::Topology(format!("nodes {a} and {b} share a position")))?;
                friis_db[a * n + b] = loss;
                friis_db[b * n + a] = loss;
            }
        }
        Ok(PisterHack { n, tx_power_dbm: band.tx_power_dbm, friis_db })
    }

    pub fn friis(&self, a: NodeId, b: NodeId) -> f64 {
        self.friis_db[a as usize * self.n + b as usize]
    }
}

impl LinkModel for PisterHack {
    fn rssi(&self, from: NodeId, to: NodeId, rng: &mut SimRng) -> f64 {
        sample_rssi_from_loss(self.tx_power_dbm, self.friis(from, to), rng)
    }

    fn best_rssi(&self, from: NodeId, to: NodeId) -> f64 {
        self.tx_power_dbm - self.friis(from, to)
    }
}

/// How often the Pister-Hack excess loss is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkVariation {
    /// A fresh draw for every frame and every ACK.
    #[default]
    PerAttempt,
    /// One draw per node pair for the whole run, shared by both directions.
    PerLink,
}

impl PisterHack {
    pub fn freeze(&self, rng: &mut SimRng) -> FixedLinks {
        let mut links = FixedLinks::new(self.n);
        for a in 0..self.n as NodeId {
            for b in (a + 1)..self.n as NodeId {
                links.set(a, b, sample_rssi_from_loss(self.tx_power_dbm, self.friis(a, b), rng));
            }
        }
        links
    }
}

/// Deterministic RSSI matrix; unset pairs are unreachable.
#[derive(Clone, Debug)]
pub struct FixedLinks {
    n: usize,
    rssi: Vec<f64>,
}

impl FixedLinks {
    pub fn new(n: usize) -> Self {
        FixedLinks { n, rssi: vec![-200.0; n * n] }
    }

    pub fn set(&mut self, a: NodeId, b: NodeId, rssi: f64) -> &mut Self {
        self.rssi[a as usize * self.n + b as usize] = rssi;
        self.rssi[b as usize * self.n + a as usize] = rssi;
        self
    }
}

impl LinkModel for FixedLinks {
    fn rssi(&self, from: NodeId, to: NodeId, _rng: &mut SimRng) -> f64 {
        self.rssi[from as usize * self.n + to as usize]
    }

    fn best_rssi(&self, from: NodeId, to: NodeId) -> f64 {
        self.rssi[from as usize * self.n + to as usize]
    }
}
