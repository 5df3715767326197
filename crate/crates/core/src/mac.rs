//! TSCH MAC: cells and schedules, channel hopping, transmit queues, shared
//! cell backoff, and per-slot resolution of the shared medium.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Asn, NodeId, PacketId, SimTime};
use crate::propagation::{sinr_reception, LinkModel, WaterfallTable};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacParams {
    pub slotframe_length: u32,
    pub queue_capacity: usize,
    pub min_be: u8,
    pub max_be: u8,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams { slotframe_length: 101, queue_capacity: 10, min_be: 1, max_be: 7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    SharedMinimal,
    TxDedicated,
    RxDedicated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub slot_offset: u32,
    pub channel_offset: u32,
    pub kind: CellKind,
    pub peer: Option<NodeId>,
}

impl Cell {
    pub fn minimal() -> Self {
        Cell { slot_offset: 0, channel_offset: 0, kind: CellKind::SharedMinimal, peer: None }
    }

    pub fn tx(slot_offset: u32, channel_offset: u32, peer: NodeId) -> Self {
        Cell { slot_offset, channel_offset, kind: CellKind::TxDedicated, peer: Some(peer) }
    }

    pub fn rx(slot_offset: u32, channel_offset: u32, peer: NodeId) -> Self {
        Cell { slot_offset, channel_offset, kind: CellKind::RxDedicated, peer: Some(peer) }
    }
}

/// One node's slotframe: at most one cell per slot offset, minimal cell at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    slotframe_length: u32,
    cells: BTreeMap<u32, Cell>,
}

impl Schedule {
    pub fn new(slotframe_length: u32) -> Self {
        let mut cells = BTreeMap::new();
        cells.insert(0, Cell::minimal());
        Schedule { slotframe_length, cells }
    }

    pub fn slotframe_length(&self) -> u32 {
        self.slotframe_length
    }

    pub fn cell_at(&self, slot_offset: u32) -> Option<&Cell> {
        self.cells.get(&slot_offset)
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn add(&mut self, cell: Cell) -> Result<()> {
        if cell.slot_offset >= self.slotframe_length {
            return Err(Error::Schedule(format!("slot offset {} out of range", cell.slot_offset)));
        }
        let needs_peer = cell.kind != CellKind::SharedMinimal;
        if needs_peer != cell.peer.is_some() {
            return Err(Error::Schedule("dedicated cells carry a peer, shared cells do not".into()));
        }
        if self.cells.contains_key(&cell.slot_offset) {
            return Err(Error::Schedule(format!("slot {} already in use", cell.slot_offset)));
        }
        self.cells.insert(cell.slot_offset, cell);
        Ok(())
    }

    pub fn remove(&mut self, slot_offset: u32) -> Option<Cell> {
        if slot_offset == 0 {
            return None;
        }
        self.cells.remove(&slot_offset)
    }

    pub fn is_free(&self, slot_offset: u32) -> bool {
        !self.cells.contains_key(&slot_offset)
    }

    pub fn count(&self, kind: CellKind, peer: NodeId) -> usize {
        self.cells.values().filter(|c| c.kind == kind && c.peer == Some(peer)).count()
    }

    /// Removes every dedicated cell with `peer`, returning them.
    pub fn remove_peer(&mut self, peer: NodeId) -> Vec<Cell> {
        let slots: Vec<u32> = self.cells.values().filter(|c| c.peer == Some(peer)).map(|c| c.slot_offset).collect();
        slots.into_iter().filter_map(|s| self.cells.remove(&s)).collect()
    }
}

/// Network-wide permutation of physical channel indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopSequence(Vec<u32>);

impl HopSequence {
    pub fn new(seq: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; seq.len()];
        for &c in &seq {
            let slot =
                seen.get_mut(c as usize).ok_or_else(|| Error::InvalidArgument(format!("channel {c} out of range")))?;
            if *slot {
                return Err(Error::InvalidArgument(format!("channel {c} repeated")));
            }
            *slot = true;
        }
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty hop sequence".into()));
        }
        Ok(HopSequence(seq))
    }

    pub fn identity(channel_count: u32) -> Self {
        HopSequence((0..channel_count).collect())
    }

    pub fn shuffled(channel_count: u32, rng: &mut SimRng) -> Self {
        let mut seq: Vec<u32> = (0..channel_count).collect();
        seq.shuffle(rng);
        HopSequence(seq)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

pub fn hop_channel(asn: Asn, channel_offset: u32, hop_sequence: &HopSequence) -> u32 {
    let n = hop_sequence.0.len() as u64;
    hop_sequence.0[((asn.0 + channel_offset as u64) % n) as usize]
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fails unless a fixed cell visits every channel over `channel_count`
/// slotframes.
pub fn check_hopping_coverage(slotframe_length: u32, channel_count: u32) -> Result<()> {
    if gcd(slotframe_length as u64, channel_count as u64) != 1 {
        return Err(Error::Schedule(format!(
            "slotframe length {slotframe_length} is not coprime with {channel_count} channels"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueEntry {
    pub packet: PacketId,
    pub destination: NodeId,
    pub retries: u32,
    pub enqueued: SimTime,
    /// First slot in which the frame may be sent.
    pub ready: Asn,
    /// Attempts spent on each hop already traversed.
    pub hop_attempts: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct TxQueue {
    entries: VecDeque<QueueEntry>,
    capacity: usize,
    drops: u64,
}

impl TxQueue {
    pub fn new(capacity: usize) -> Self {
        TxQueue { entries: VecDeque::with_capacity(capacity), capacity, drops: 0 }
    }

    /// Appends if there is room; otherwise counts a queue drop.
    pub fn push(&mut self, entry: QueueEntry) -> bool {
        if self.entries.len() >= self.capacity {
            self.drops += 1;
            false
        } else {
            self.entries.push_back(entry);
            true
        }
    }

    pub fn enqueue_packet(&mut self, packet: PacketId, destination: NodeId, now: SimTime, ready: Asn) -> bool {
        self.push(QueueEntry { packet, destination, retries: 0, enqueued: now, ready, hop_attempts: Vec::new() })
    }

    pub fn head(&self) -> Option<&QueueEntry> {
        self.entries.front()
    }

    pub fn head_mut(&mut self) -> Option<&mut QueueEntry> {
        self.entries.front_mut()
    }

    pub fn pop(&mut self) -> Option<QueueEntry> {
        self.entries.pop_front()
    }

    /// Head of queue if it may go out in `asn`.
    pub fn ready_head(&self, asn: Asn) -> Option<&QueueEntry> {
        self.entries.front().filter(|e| e.ready <= asn)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn retarget(&mut self, destination: NodeId) {
        for e in &mut self.entries {
            e.destination = destination;
        }
    }
}

/// Slotted CSMA-CA state for unicast frames on the shared cell.
#[derive(Clone, Debug)]
pub struct Backoff {
    be: u8,
    remaining: u32,
    min_be: u8,
    max_be: u8,
}

impl Backoff {
    pub fn new(min_be: u8, max_be: u8) -> Self {
        Backoff { be: min_be, remaining: 0, min_be, max_be }
    }

    /// Called at every shared cell with a pending unicast frame; true when
    /// the frame may be sent in this cell.
    pub fn try_transmit(&mut self) -> bool {
        if self.remaining == 0 {
            true
        } else {
            self.remaining -= 1;
            false
        }
    }

    pub fn on_failure(&mut self, rng: &mut SimRng) {
        self.remaining = rng.random_range(1..=(1u32 << self.be));
        self.be = (self.be + 1).min(self.max_be);
    }

    pub fn on_success(&mut self) {
        self.reset();
    }

    /// Back to the initial window, as after a frame is delivered or dropped.
    pub fn reset(&mut self) {
        self.be = self.min_be;
        self.remaining = 0;
    }

    pub fn exponent(&self) -> u8 {
        self.be
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxResult {
    Delivered,
    AckMissed,
    NoAck,
    Collision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxAttemptOutcome {
    pub result: TxResult,
    pub channel: u32,
    pub asn: Asn,
}

/// What a node does with the radio in one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadioAction {
    Transmit { channel: u32, destination: Option<NodeId> },
    Listen { channel: u32 },
}

/// Result of one slot on the medium.
#[derive(Clone, Debug, Default)]
pub struct SlotReport {
    /// Unicast outcome per transmitter, in transmitter order.
    pub unicast: Vec<(NodeId, TxAttemptOutcome)>,
    /// Decoded frames: (listener, sender, rssi). A listener decodes at most one.
    pub receptions: Vec<(NodeId, NodeId, f64)>,
}

pub struct Radio<'a, L: LinkModel> {
    pub link: &'a L,
    pub table: &'a WaterfallTable,
    pub noise_floor_dbm: f64,
}

/// Resolves one slot. `actions` must be sorted by node id with at most one
/// entry per node, which makes the draw order deterministic.
///
/// Each listener decodes the strongest frame on its channel with the others
/// as interference. Receivers of unicast frames answer with an ACK on the
/// same channel; ACKs sent concurrently on one channel interfere.
pub fn execute_slot<L: LinkModel>(
    asn: Asn,
    actions: &[(NodeId, RadioAction)],
    radio: &Radio<'_, L>,
    rng: &mut SimRng,
) -> SlotReport {
    debug_assert!(actions.windows(2).all(|w| w[0].0 < w[1].0));
    let transmitters: Vec<(NodeId, u32, Option<NodeId>)> = actions
        .iter()
        .filter_map(|&(n, a)| match a {
            RadioAction::Transmit { channel, destination } => Some((n, channel, destination)),
            RadioAction::Listen { .. } => None,
        })
        .collect();
    let mut report = SlotReport::default();
    if transmitters.is_empty() {
        return report;
    }

    let mut listening: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut draws: Vec<(NodeId, f64)> = Vec::new();
    for &(node, action) in actions {
        let RadioAction::Listen { channel } = action else { continue };
        listening.insert(node, channel);
        draws.clear();
        for &(sender, ch, _) in &transmitters {
            if ch == channel {
                draws.push((sender, radio.link.rssi(sender, node, rng)));
            }
        }
        if draws.is_empty() {
            continue;
        }
        let best = draws.iter().enumerate().fold(0, |b, (i, d)| if d.1 > draws[b].1 { i } else { b });
        let (sender, signal) = draws[best];
        let interferers: Vec<f64> = draws.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, d)| d.1).collect();
        if sinr_reception(signal, &interferers, radio.noise_floor_dbm, radio.table, rng) {
            report.receptions.push((node, sender, signal));
        }
    }

    // ACKs go out from every receiver that decoded a frame addressed to it.
    let decoded = |sender: NodeId, dest: NodeId| report.receptions.iter().any(|&(l, s, _)| l == dest && s == sender);
    let acks: Vec<(NodeId, NodeId, u32)> = transmitters
        .iter()
        .filter_map(|&(sender, ch, dest)| {
            let d = dest?;
            decoded(sender, d).then_some((d, sender, ch))
        })
        .collect();

    for &(sender, channel, dest) in &transmitters {
        let Some(dest) = dest else { continue };
        let result = if let Some(&(acker, _, _)) = acks.iter().find(|a| a.1 == sender) {
            let signal = radio.link.rssi(acker, sender, rng);
            let interferers: Vec<f64> = acks
                .iter()
                .filter(|a| a.2 == channel && a.0 != acker)
                .map(|a| radio.link.rssi(a.0, sender, rng))
                .collect();
            if sinr_reception(signal, &interferers, radio.noise_floor_dbm, radio.table, rng) {
                TxResult::Delivered
            } else {
                TxResult::AckMissed
            }
        } else {
            let others_on_channel = transmitters.iter().filter(|t| t.1 == channel).count() > 1;
            if listening.get(&dest) == Some(&channel) && others_on_channel {
                TxResult::Collision
            } else {
                TxResult::NoAck
            }
        };
        report.unicast.push((sender, TxAttemptOutcome { result, channel, asn }));
    }
    report
}
