//! Run traces: the complete, deterministic output of one band's run.
//!
//! Two encodings are provided. The text form is a line-oriented summary with
//! one `pkt` record per generated packet; the JSON form is lossless and can
//! be read back. Both carry format version 1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandId, NodeId, PacketId, SimTime};
use crate::topology::Topology;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Delivered,
    QueueDrop,
    RetryDrop,
    /// Generated while the source had not joined this band's DODAG.
    NotJoined,
    /// Still queued somewhere when the run ended.
    InFlight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet: PacketId,
    pub t_gen: SimTime,
    pub fate: Fate,
    pub t_arrival: Option<SimTime>,
    /// MAC hops of the first copy to reach the root.
    pub hops: u32,
    pub attempts_per_hop: Vec<u8>,
    /// Non-first transmission attempts spent on this packet on every hop.
    pub retries: u32,
    /// Node where the last copy was lost, for dropped packets.
    pub dropped_at: Option<NodeId>,
}

impl PacketRecord {
    pub fn delivered(&self) -> bool {
        self.fate == Fate::Delivered
    }

    pub fn latency(&self) -> Option<SimTime> {
        self.t_arrival.map(|t| t - self.t_gen)
    }
}

/// Per-node counters. Drop counters are attributed to the node where a
/// packet's last live copy was lost, so they sum to the per-packet fates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub generated: u64,
    pub queue_drops: u64,
    pub retry_drops: u64,
    pub not_joined_drops: u64,
    /// Retransmissions of application frames sent by this node.
    pub retries: u64,
    /// Raw count of frames refused by a full queue, duplicates included.
    pub queue_overflows: u64,
    pub joined: bool,
    pub join_time: Option<SimTime>,
    pub parent: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub format_version: u32,
    pub band: BandId,
    pub seed: u64,
    pub topology: Topology,
    pub records: Vec<PacketRecord>,
    pub nodes: Vec<NodeCounters>,
    pub unjoined_at_setup: Vec<NodeId>,
    pub slots_executed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub generated: u64,
    pub delivered: u64,
    pub queue_dropped: u64,
    pub retry_dropped: u64,
    pub not_joined: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn balanced(&self) -> bool {
        self.generated == self.delivered + self.queue_dropped + self.retry_dropped + self.not_joined + self.in_flight
    }
}

impl RunTrace {
    pub fn generated(&self) -> usize {
        self.records.len()
    }

    pub fn delivered(&self) -> impl Iterator<Item = &PacketRecord> {
        self.records.iter().filter(|r| r.delivered())
    }

    pub fn find(&self, packet: PacketId) -> Option<&PacketRecord> {
        self.records.iter().find(|r| r.packet == packet)
    }

    pub fn non_root_nodes(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    /// Tallies per-packet fates.
    pub fn conservation(&self) -> Conservation {
        let mut c = Conservation { generated: self.records.len() as u64, ..Default::default() };
        for r in &self.records {
            match r.fate {
                Fate::Delivered => c.delivered += 1,
                Fate::QueueDrop => c.queue_dropped += 1,
                Fate::RetryDrop => c.retry_dropped += 1,
                Fate::NotJoined => c.not_joined += 1,
                Fate::InFlight => c.in_flight += 1,
            }
        }
        c
    }

    /// The same tally built from per-node counters (in-flight and delivered
    /// come from the records, which have no per-node counterpart).
    pub fn conservation_from_counters(&self) -> Conservation {
        let sum = |f: fn(&NodeCounters) -> u64| self.nodes.iter().map(f).sum::<u64>();
        let fates = self.conservation();
        Conservation {
            generated: sum(|n| n.generated),
            delivered: fates.delivered,
            queue_dropped: sum(|n| n.queue_drops),
            retry_dropped: sum(|n| n.retry_drops),
            not_joined: sum(|n| n.not_joined_drops),
            in_flight: fates.in_flight,
        }
    }

    pub fn to_text(&self, spec_hash: Option<&str>) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tracefmt={} band={} seed={} nodes={} packets={} spec={}",
            self.format_version,
            self.band,
            self.seed,
            self.nodes.len(),
            self.records.len(),
            spec_hash.unwrap_or("-")
        );
        out.push_str("# pkt src seq t_gen delivered t_arrival hops attempts_per_hop...\n");
        for r in &self.records {
            let _ = write!(
                out,
                "pkt {} {} {} {} {} {}",
                r.packet.source,
                r.packet.sequence,
                r.t_gen,
                u8::from(r.delivered()),
                r.t_arrival.map_or_else(|| "-".to_string(), |t| t.to_string()),
                r.hops
            );
            for a in &r.attempts_per_hop {
                let _ = write!(out, " {a}");
            }
            out.push('\n');
        }
        out.push_str(
            "# node id x y joined join_time parent generated queue_drops retry_drops not_joined_drops retries\n",
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let p = &self.topology.positions[i];
            let _ = writeln!(
                out,
                "node {i} {} {} {} {} {} {} {} {} {} {}",
                p.x,
                p.y,
                u8::from(n.joined),
                n.join_time.map_or_else(|| "-".to_string(), |t| t.to_string()),
                n.parent.map_or_else(|| "-".to_string(), |p| p.to_string()),
                n.generated,
                n.queue_drops,
                n.retry_drops,
                n.not_joined_drops,
                n.retries
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunTrace> {
        let t: RunTrace = serde_json::from_str(text)?;
        if t.format_version != TRACE_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported trace format version {}", t.format_version)));
        }
        Ok(t)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::trace;
    use super::*;

    #[test]
    fn text_format_lines() {
        let t = trace(BandId::Band24GHz, 2, &[(1, 5_400_000_000, Some(5_400_500_000), 0), (1, 5_410_000_000, None, 3)]);
        let text = t.to_text(Some("abc"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tracefmt=1 band=2.4GHz seed=1 nodes=2 packets=2 spec=abc");
        assert_eq!(lines[2], "pkt 1 0 5400.000000 1 5400.500000 1 1");
        assert_eq!(lines[3], "pkt 1 1 5410.000000 0 - 0");
        assert!(lines[5].starts_with("node 0 50 50 "));
    }

    #[test]
    fn json_round_trip() {
        let t = trace(BandId::Band868MHz, 3, &[(1, 10, Some(20), 1), (2, 10, None, 0)]);
        assert_eq!(RunTrace::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    #[test]
    fn conservation_tallies() {
        let t = trace(BandId::Band24GHz, 3, &[(1, 10, Some(20), 1), (2, 10, None, 0), (2, 20, Some(30), 0)]);
        let c = t.conservation();
        assert!(c.balanced());
        assert_eq!(c, t.conservation_from_counters());
        assert_eq!((c.generated, c.delivered, c.retry_dropped), (3, 2, 1));
    }
}
