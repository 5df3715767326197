//! Per-band PDR and latency, and first-arrival combining of the two bands at
//! the DAG root.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandId, NodeId, PacketId, SimTime};
use crate::trace::{PacketRecord, RunTrace};

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Delivered / generated.
pub fn band_pdr(trace: &RunTrace) -> Result<f64> {
    if trace.records.is_empty() {
        return Err(Error::Metrics("no packets generated".into()));
    }
    Ok(trace.delivered().count() as f64 / trace.records.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_s: f64,
    /// Exact empirical CDF: one `(latency_s, P[L <= latency])` point per
    /// distinct latency.
    pub cdf: Vec<(f64, f64)>,
}

/// `None` when nothing was delivered.
pub fn band_latency(trace: &RunTrace) -> Option<LatencySummary> {
    latency_summary(trace.records.iter().filter_map(PacketRecord::latency).collect())
}

fn latency_summary(mut latencies: Vec<SimTime>) -> Option<LatencySummary> {
    if latencies.is_empty() {
        return None;
    }
    latencies.sort_unstable();
    let n = latencies.len();
    let total: u128 = latencies.iter().map(|l| l.as_micros() as u128).sum();
    let mean_s = total as f64 / n as f64 / 1e6;
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, l) in latencies.iter().enumerate() {
        if i + 1 < n && latencies[i + 1] == *l {
            continue;
        }
        cdf.push((l.as_secs_f64(), (i + 1) as f64 / n as f64));
    }
    Some(LatencySummary { mean_s, cdf })
}

/// Total retransmissions of application frames, and that total divided by
/// the number of non-root nodes.
pub fn retry_statistics(trace: &RunTrace) -> (u64, f64) {
    let total: u64 = trace.nodes.iter().map(|n| n.retries).sum();
    let nodes = trace.non_root_nodes();
    (total, if nodes == 0 { 0.0 } else { total as f64 / nodes as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandOutcome {
    pub delivered: bool,
    pub t_arrival: Option<SimTime>,
    pub retries: u32,
    pub hops: u32,
}

impl From<&PacketRecord> for BandOutcome {
    fn from(r: &PacketRecord) -> Self {
        BandOutcome { delivered: r.delivered(), t_arrival: r.t_arrival, retries: r.retries, hops: r.hops }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedPacketOutcome {
    pub packet: PacketId,
    pub t_gen: SimTime,
    pub delivered_any: bool,
    pub t_first_arrival: Option<SimTime>,
    pub winning_band: Option<BandId>,
    pub band24: BandOutcome,
    pub band868: BandOutcome,
}

impl CombinedPacketOutcome {
    pub fn latency(&self) -> Option<SimTime> {
        self.t_first_arrival.map(|t| t - self.t_gen)
    }

    /// Retries charged to the combined network: those of the winning band,
    /// or of the cheaper band when neither delivered.
    pub fn combined_retries(&self) -> u32 {
        self.retries_under(RetryAttribution::Winner)
    }

    pub fn retries_under(&self, rule: RetryAttribution) -> u32 {
        match (rule, self.winning_band) {
            (RetryAttribution::BothBands, _) => self.band24.retries + self.band868.retries,
            (RetryAttribution::Winner, Some(BandId::Band24GHz)) => self.band24.retries,
            (RetryAttribution::Winner, Some(BandId::Band868MHz)) => self.band868.retries,
            (RetryAttribution::Winner, None) => self.band24.retries.min(self.band868.retries),
        }
    }

    fn band(&self, band: BandId) -> &BandOutcome {
        match band {
            BandId::Band24GHz => &self.band24,
            BandId::Band868MHz => &self.band868,
        }
    }
}

/// How retries of a packet sent on both bands are charged to the combined
/// network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryAttribution {
    /// The winning band only; the cheaper band for undelivered packets.
    #[default]
    Winner,
    /// Every retry spent on either band.
    BothBands,
}

pub fn combined_total_retries(outcomes: &[CombinedPacketOutcome], rule: RetryAttribution) -> u64 {
    outcomes.iter().map(|o| o.retries_under(rule) as u64).sum()
}

fn combine_one(r24: &PacketRecord, r868: &PacketRecord) -> CombinedPacketOutcome {
    let (a, b) = (BandOutcome::from(r24), BandOutcome::from(r868));
    let (t_first_arrival, winning_band) =
        match (a.t_arrival.filter(|_| a.delivered), b.t_arrival.filter(|_| b.delivered)) {
            (Some(x), Some(y)) if y < x => (Some(y), Some(BandId::Band868MHz)),
            (Some(x), _) => (Some(x), Some(BandId::Band24GHz)),
            (None, Some(y)) => (Some(y), Some(BandId::Band868MHz)),
            (None, None) => (None, None),
        };
    CombinedPacketOutcome {
        packet: r24.packet,
        t_gen: r24.t_gen,
        delivered_any: a.delivered || b.delivered,
        t_first_arrival,
        winning_band,
        band24: a,
        band868: b,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: NodeId,
    pub mean_latency_24_s: Option<f64>,
    pub mean_latency_868_s: Option<f64>,
    pub winning_band: Option<BandId>,
    /// Packets of this node whose first arrival came over each band.
    pub first_arrivals_24: u64,
    pub first_arrivals_868: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub pdr: f64,
    pub mean_latency_s: Option<f64>,
    pub latency_cdf: Vec<(f64, f64)>,
    pub total_retries: u64,
    pub mean_retries_per_node: f64,
    pub mean_hops: Option<f64>,
    pub generated: u64,
    pub delivered: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub band24: BandMetrics,
    pub band868: BandMetrics,
    pub combined: BandMetrics,
    pub nodes: Vec<NodeSummary>,
}

fn mean_hops(hops: impl Iterator<Item = u32>) -> Option<f64> {
    let (s, n) = hops.fold((0u64, 0u64), |(s, n), h| (s + h as u64, n + 1));
    (n > 0).then(|| s as f64 / n as f64)
}

fn band_metrics(trace: &RunTrace) -> Result<BandMetrics> {
    let lat = band_latency(trace);
    let (total_retries, mean_retries_per_node) = retry_statistics(trace);
    Ok(BandMetrics {
        pdr: band_pdr(trace)?,
        mean_latency_s: lat.as_ref().map(|l| l.mean_s),
        latency_cdf: lat.map(|l| l.cdf).unwrap_or_default(),
        total_retries,
        mean_retries_per_node,
        mean_hops: mean_hops(trace.delivered().map(|r| r.hops)),
        generated: trace.records.len() as u64,
        delivered: trace.delivered().count() as u64,
    })
}

/// Matches both traces packet by packet and keeps the first arrival.
pub fn combine(trace24: &RunTrace, trace868: &RunTrace) -> Result<(Vec<CombinedPacketOutcome>, MetricsReport)> {
    if trace24.band != BandId::Band24GHz || trace868.band != BandId::Band868MHz {
        return Err(Error::Metrics(format!(
            "expected 2.4GHz and 868MHz traces, got {} and {}",
            trace24.band, trace868.band
        )));
    }
    if trace24.records.len() != trace868.records.len() {
        return Err(Error::Metrics("traces carry different packet sets".into()));
    }
    let by_id: HashMap<PacketId, &PacketRecord> = trace868.records.iter().map(|r| (r.packet, r)).collect();
    let mut outcomes = Vec::with_capacity(trace24.records.len());
    for r in &trace24.records {
        let other = by_id.get(&r.packet).filter(|o| o.t_gen == r.t_gen).ok_or_else(|| {
            Error::Metrics(format!("packet {}:{} missing from 868MHz trace", r.packet.source, r.packet.sequence))
        })?;
        outcomes.push(combine_one(r, other));
    }
    if outcomes.is_empty() {
        return Err(Error::Metrics("no packets generated".into()));
    }

    let delivered = outcomes.iter().filter(|o| o.delivered_any).count();
    let lat = latency_summary(outcomes.iter().filter_map(|o| o.latency()).collect());
    let total_retries = combined_total_retries(&outcomes, RetryAttribution::Winner);
    let non_root = trace24.non_root_nodes();
    let combined = BandMetrics {
        pdr: delivered as f64 / outcomes.len() as f64,
        mean_latency_s: lat.as_ref().map(|l| l.mean_s),
        latency_cdf: lat.map(|l| l.cdf).unwrap_or_default(),
        total_retries,
        mean_retries_per_node: if non_root == 0 { 0.0 } else { total_retries as f64 / non_root as f64 },
        mean_hops: mean_hops(outcomes.iter().filter_map(|o| o.winning_band.map(|b| o.band(b).hops))),
        generated: outcomes.len() as u64,
        delivered: delivered as u64,
    };
    let report = MetricsReport {
        format_version: METRICS_FORMAT_VERSION,
        band24: band_metrics(trace24)?,
        band868: band_metrics(trace868)?,
        combined,
        nodes: winning_band_per_node(&outcomes),
    };
    Ok((outcomes, report))
}

/// For each source, the band with the lower mean latency over the packets it
/// delivered (ties go to 2.4 GHz). Sources with no deliveries stay
/// unclassified.
pub fn winning_band_per_node(outcomes: &[CombinedPacketOutcome]) -> Vec<NodeSummary> {
    #[derive(Default)]
    struct Acc {
        sum: [u128; 2],
        n: [u64; 2],
        first: [u64; 2],
    }
    let mut acc: BTreeMap<NodeId, Acc> = BTreeMap::new();
    for o in outcomes {
        let a = acc.entry(o.packet.source).or_default();
        for (i, b) in [&o.band24, &o.band868].into_iter().enumerate() {
            if let (true, Some(t)) = (b.delivered, b.t_arrival) {
                a.sum[i] += (t - o.t_gen).as_micros() as u128;
                a.n[i] += 1;
            }
        }
        match o.winning_band {
            Some(BandId::Band24GHz) => a.first[0] += 1,
            Some(BandId::Band868MHz) => a.first[1] += 1,
            None => {}
        }
    }
    acc.into_iter()
        .map(|(node, a)| {
            let mean = |i: usize| (a.n[i] > 0).then(|| a.sum[i] as f64 / a.n[i] as f64 / 1e6);
            let (m24, m868) = (mean(0), mean(1));
            // compare exact integer means: s24/n24 <= s868/n868
            let winning_band = match (a.n[0], a.n[1]) {
                (0, 0) => None,
                (_, 0) => Some(BandId::Band24GHz),
                (0, _) => Some(BandId::Band868MHz),
                (n24, n868) => {
                    if a.sum[0] * n868 as u128 <= a.sum[1] * n24 as u128 {
                        Some(BandId::Band24GHz)
                    } else {
                        Some(BandId::Band868MHz)
                    }
                }
            };
            NodeSummary {
                node,
                mean_latency_24_s: m24,
                mean_latency_868_s: m868,
                winning_band,
                first_arrivals_24: a.first[0],
                first_arrivals_868: a.first[1],
            }
        })
        .collect()
}

/// Fraction of classified nodes whose winning band is 868 MHz.
pub fn fraction_favoring_868(nodes: &[NodeSummary]) -> Option<f64> {
    let classified: Vec<_> = nodes.iter().filter_map(|n| n.winning_band).collect();
    if classified.is_empty() {
        return None;
    }
    Some(classified.iter().filter(|&&b| b == BandId::Band868MHz).count() as f64 / classified.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsReport {
    pub fn band(&self, name: &str) -> Option<&BandMetrics> {
        match name {
            "24ghz" | "2.4GHz" => Some(&self.band24),
            "868mhz" | "868MHz" => Some(&self.band868),
            "combined" => Some(&self.combined),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV: `kind,series,key,value`, one row per scalar metric and one
    /// per CDF point.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {header}");
        out.push_str("kind,series,key,value\n");
        for (name, m) in [("24ghz", &self.band24), ("868mhz", &self.band868), ("combined", &self.combined)] {
            let rows = [
                ("pdr", m.pdr.to_string()),
                ("mean_latency_s", opt(m.mean_latency_s)),
                ("total_retries", m.total_retries.to_string()),
                ("mean_retries_per_node", m.mean_retries_per_node.to_string()),
                ("mean_hops", opt(m.mean_hops)),
                ("generated", m.generated.to_string()),
                ("delivered", m.delivered.to_string()),
            ];
            for (k, v) in rows {
                let _ = writeln!(out, "metric,{name},{k},{v}");
            }
        }
        for (name, m) in [("24ghz", &self.band24), ("868mhz", &self.band868), ("combined", &self.combined)] {
            for (x, p) in &m.latency_cdf {
                let _ = writeln!(out, "cdf,{name},{x},{p}");
            }
        }
        out
    }
}
