//! One band's run: a slot-by-slot loop over the whole network from ASN 0
//! until the end of the measurement window.
//!
//! Network formation (DIO/DAO, MSF cells) starts at time zero. Application
//! packets are generated from the setup time on, following a schedule that
//! depends only on the app config and the topology size, so both bands of an
//! experiment see the same packets at the same instants.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac::{
    check_hopping_coverage, execute_slot, hop_channel, Backoff, Cell, CellKind, HopSequence, MacParams, QueueEntry,
    Radio, RadioAction, Schedule, TxQueue, TxResult,
};
use crate::model::{asn_to_time, validate_band_config, AppConfig, Asn, BandConfig, NodeId, PacketId, SimTime, ROOT};
use crate::msf::{self, CellDecision, CellUsageWindow, MsfParams};
use crate::propagation::{LinkModel, LinkVariation, PisterHack, WaterfallTable};
use crate::rng::{derive_stream, SimRng};
use crate::rpl::{DioMessage, Dodag, ParentChange, RplParams};
use crate::topology::Topology;
use crate::trace::{Fate, NodeCounters, PacketRecord, RunTrace, TRACE_FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub topology: Topology,
    pub band: BandConfig,
    pub app: AppConfig,
    pub waterfall: WaterfallTable,
    pub hop_sequence: HopSequence,
    pub mac: MacParams,
    pub rpl: RplParams,
    pub msf: MsfParams,
    #[serde(default)]
    pub link_variation: LinkVariation,
    #[serde(default)]
    pub strict_paper_mode: bool,
    /// Verify DODAG and schedule invariants at every slotframe boundary.
    #[serde(default)]
    pub check_invariants: bool,
}

impl RunConfig {
    /// Reference configuration for `band`: matching waterfall table and a hop
    /// sequence drawn from the run seed.
    pub fn new(topology: Topology, band: BandConfig, app: AppConfig) -> Self {
        let waterfall = WaterfallTable::for_band(band.band_id);
        let hop_sequence = HopSequence::shuffled(
            band.channel_count,
            &mut derive_stream(app.seed, &format!("hopseq/{}", band.band_id.tag())),
        );
        RunConfig {
            topology,
            band,
            app,
            waterfall,
            hop_sequence,
            mac: MacParams::default(),
            rpl: RplParams::default(),
            msf: MsfParams::default(),
            link_variation: LinkVariation::PerAttempt,
            strict_paper_mode: false,
            check_invariants: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_band_config(&self.band, self.strict_paper_mode)?;
        self.app.validate()?;
        self.topology.validate()?;
        if self.hop_sequence.len() != self.band.channel_count as usize {
            return Err(Error::InvalidArgument(format!(
                "hop sequence has {} channels, band has {}",
                self.hop_sequence.len(),
                self.band.channel_count
            )));
        }
        if self.mac.slotframe_length < 2 {
            return Err(Error::Schedule("slotframe needs at least two slots".into()));
        }
        if self.mac.queue_capacity == 0 {
            return Err(Error::InvalidArgument("queue capacity must be positive".into()));
        }
        check_hopping_coverage(self.mac.slotframe_length, self.band.channel_count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledPacket {
    pub packet: PacketId,
    pub t_gen: SimTime,
}

/// Packet generation instants `W + k·T_a + v` for every source, with
/// `v ~ U[-V/2, V/2]` drawn from the `app` stream, covering `[W, W + duration)`.
/// Sorted by time, then source.
pub fn generate_app_schedule(app: &AppConfig, sources: &[NodeId]) -> Result<Vec<ScheduledPacket>> {
    app.validate()?;
    let interval = SimTime::from_secs_f64(app.message_interval).as_micros();
    let duration = SimTime::from_secs_f64(app.duration).as_micros();
    let setup = app.setup().as_micros();
    if interval == 0 {
        return Err(Error::InvalidAppConfig(vec!["message_interval below 1 us".into()]));
    }
    let mut rng = derive_stream(app.seed, "app");
    let half = app.interval_variance / 2.0;
    let mut out = Vec::new();
    let mut k = 0u64;
    while k * interval < duration {
        for &src in sources {
            let base = setup + k * interval;
            let t = if half > 0.0 {
                let v: f64 = rng.random_range(-half..=half);
                SimTime::from_secs_f64(base as f64 / 1e6 + v)
            } else {
                SimTime(base)
            };
            out.push(ScheduledPacket { packet: PacketId { source: src, sequence: k as u32 }, t_gen: t });
        }
        k += 1;
    }
    out.sort_by_key(|p| (p.t_gen, p.packet.source, p.packet.sequence));
    Ok(out)
}

pub fn run_band(config: &RunConfig) -> Result<RunTrace> {
    config.validate()?;
    let link = PisterHack::new(&config.topology, &config.band)?;
    match config.link_variation {
        LinkVariation::PerAttempt => run_band_with(config, &link),
        LinkVariation::PerLink => {
            let label = format!("links/{}", config.band.band_id.tag());
            run_band_with(config, &link.freeze(&mut derive_stream(config.app.seed, &label)))
        }
    }
}

/// Runs with a caller-supplied link model (used for constructed scenarios).
pub fn run_band_with<L: LinkModel>(config: &RunConfig, link: &L) -> Result<RunTrace> {
    config.validate()?;
    let sources: Vec<NodeId> = (1..config.topology.len() as NodeId).collect();
    let schedule = generate_app_schedule(&config.app, &sources)?;
    let mut sim = Sim::new(config, link);
    sim.run(&schedule)?;
    Ok(sim.into_trace())
}

#[derive(Clone, Copy, Debug)]
enum Frame {
    Dio(DioMessage),
    Dao(NodeId),
    Data(NodeId),
}

#[derive(Clone, Copy, Debug)]
struct DaoState {
    parent: NodeId,
    retries: u32,
}

struct NodeRuntime {
    queue: TxQueue,
    backoff: Backoff,
    dao: Option<DaoState>,
    usage: CellUsageWindow,
    seen: HashSet<PacketId>,
    counters: NodeCounters,
    dio_now: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Liveness {
    copies: u32,
    last_loss: Option<(Fate, NodeId)>,
}

enum Handoff {
    Root,
    Accepted,
    Duplicate,
    Refused,
}

struct Sim<'a, L: LinkModel> {
    cfg: &'a RunConfig,
    link: &'a L,
    dodag: Dodag,
    schedules: Vec<Schedule>,
    nodes: Vec<NodeRuntime>,
    records: Vec<PacketRecord>,
    index: HashMap<PacketId, usize>,
    live: Vec<Liveness>,
    prop_rng: SimRng,
    mac_rng: SimRng,
    slot_index: Vec<Vec<(NodeId, Cell)>>,
    index_dirty: bool,
    pending_msf: Vec<(NodeId, CellDecision)>,
    unjoined_at_setup: Option<Vec<NodeId>>,
    slots: u64,
    slotframe: u64,
}

impl<'a, L: LinkModel> Sim<'a, L> {
    fn new(cfg: &'a RunConfig, link: &'a L) -> Self {
        let n = cfg.topology.len();
        let tag = cfg.band.band_id.tag();
        let mut mac_rng = derive_stream(cfg.app.seed, &format!("mac/{tag}"));
        let mut dodag = Dodag::new(n, cfg.rpl.clone());
        dodag.reset_trickle(ROOT, 0, &mut mac_rng);
        let nodes = (0..n)
            .map(|_| NodeRuntime {
                queue: TxQueue::new(cfg.mac.queue_capacity),
                backoff: Backoff::new(cfg.mac.min_be, cfg.mac.max_be),
                dao: None,
                usage: CellUsageWindow::default(),
                seen: HashSet::new(),
                counters: NodeCounters::default(),
                dio_now: false,
            })
            .collect();
        Sim {
            cfg,
            link,
            dodag,
            schedules: vec![Schedule::new(cfg.mac.slotframe_length); n],
            nodes,
            records: Vec::new(),
            index: HashMap::new(),
            live: Vec::new(),
            prop_rng: derive_stream(cfg.app.seed, &format!("prop/{tag}")),
            mac_rng,
            slot_index: vec![Vec::new(); cfg.mac.slotframe_length as usize],
            index_dirty: true,
            pending_msf: Vec::new(),
            unjoined_at_setup: None,
            slots: 0,
            slotframe: 0,
        }
    }

    fn n(&self) -> usize {
        self.nodes.len()
    }

    fn max_retries(&self) -> u32 {
        self.cfg.app.max_retransmissions
    }

    fn run(&mut self, schedule: &[ScheduledPacket]) -> Result<()> {
        let band = &self.cfg.band;
        let len = self.cfg.mac.slotframe_length as u64;
        let end = self.cfg.app.end();
        let setup = self.cfg.app.setup();
        let mut next_gen = 0;
        let mut actions: Vec<(NodeId, RadioAction)> = Vec::new();
        let mut frames: Vec<(NodeId, Frame)> = Vec::new();
        let mut asn = Asn(0);
        loop {
            let now = asn_to_time(asn, band);
            if now >= end {
                break;
            }
            let offset = (asn.0 % len) as u32;
            if offset == 0 {
                self.slotframe = asn.0 / len;
                self.slotframe_boundary()?;
            }
            if self.unjoined_at_setup.is_none() && now >= setup {
                self.unjoined_at_setup = Some((0..self.n() as NodeId).filter(|&i| !self.dodag.is_joined(i)).collect());
            }
            while next_gen < schedule.len() && schedule[next_gen].t_gen <= now {
                self.generate(schedule[next_gen], asn);
                next_gen += 1;
            }

            actions.clear();
            frames.clear();
            if offset == 0 {
                self.shared_actions(asn, &mut actions, &mut frames);
            } else {
                if self.index_dirty {
                    self.rebuild_index();
                }
                self.dedicated_actions(asn, offset, &mut actions, &mut frames);
            }
            if !frames.is_empty() {
                let radio = Radio {
                    link: self.link,
                    table: &self.cfg.waterfall,
                    noise_floor_dbm: self.cfg.band.noise_floor_dbm,
                };
                let report = execute_slot(asn, &actions, &radio, &mut self.prop_rng);
                self.apply(asn, now, offset == 0, &frames, &report);
            }
            asn.0 += 1;
            self.slots += 1;
        }
        if self.unjoined_at_setup.is_none() {
            self.unjoined_at_setup = Some((0..self.n() as NodeId).filter(|&i| !self.dodag.is_joined(i)).collect());
        }
        Ok(())
    }

    fn slotframe_boundary(&mut self) -> Result<()> {
        let channels = self.cfg.band.channel_count;
        for (node, decision) in std::mem::take(&mut self.pending_msf) {
            let Some(parent) = self.dodag.parent(node).filter(|_| self.dodag.is_joined(node)) else {
                continue;
            };
            match decision {
                CellDecision::Add => {
                    let _ = msf::negotiate_cell(&mut self.schedules, node, parent, channels, &mut self.mac_rng);
                }
                CellDecision::Delete => {
                    msf::delete_cell(&mut self.schedules, node, parent, &mut self.mac_rng);
                }
                CellDecision::None => {}
            }
            self.index_dirty = true;
        }
        for node in 1..self.n() as NodeId {
            if !self.dodag.is_joined(node) {
                continue;
            }
            let parent = self.dodag.parent(node).expect("joined nodes have a parent");
            if self.schedules[node as usize].count(CellKind::TxDedicated, parent) == 0
                && msf::negotiate_cell(&mut self.schedules, node, parent, channels, &mut self.mac_rng).is_ok()
            {
                self.index_dirty = true;
            }
        }
        for node in 0..self.n() as NodeId {
            let due = self.dodag.is_joined(node) && self.dodag.dio_due(node, self.slotframe, &mut self.mac_rng);
            self.nodes[node as usize].dio_now = due;
        }
        if self.cfg.check_invariants {
            self.dodag
                .check_invariants()
                .and_then(|_| msf::check_consistency(&self.schedules))
                .map_err(|e| Error::Schedule(format!("slotframe {}: {e}", self.slotframe)))?;
            for node in 1..self.n() as NodeId {
                if let Some(p) = self.dodag.parent(node).filter(|_| self.dodag.is_joined(node)) {
                    for c in self.schedules[node as usize].cells() {
                        if c.kind == CellKind::TxDedicated && c.peer != Some(p) {
                            return Err(Error::Schedule(format!("node {node} keeps a cell to old parent")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn rebuild_index(&mut self) {
        for v in &mut self.slot_index {
            v.clear();
        }
        for (i, s) in self.schedules.iter().enumerate() {
            for c in s.cells() {
                if c.slot_offset != 0 {
                    self.slot_index[c.slot_offset as usize].push((i as NodeId, *c));
                }
            }
        }
        self.index_dirty = false;
    }

    fn generate(&mut self, p: ScheduledPacket, asn: Asn) {
        let src = p.packet.source;
        let idx = self.records.len();
        self.index.insert(p.packet, idx);
        self.records.push(PacketRecord {
            packet: p.packet,
            t_gen: p.t_gen,
            fate: Fate::InFlight,
            t_arrival: None,
            hops: 0,
            attempts_per_hop: Vec::new(),
            retries: 0,
            dropped_at: None,
        });
        self.live.push(Liveness::default());
        let node = &mut self.nodes[src as usize];
        node.counters.generated += 1;
        let parent = self.dodag.parent(src).filter(|_| self.dodag.is_joined(src));
        let Some(parent) = parent else {
            node.counters.not_joined_drops += 1;
            self.records[idx].fate = Fate::NotJoined;
            self.records[idx].dropped_at = Some(src);
            return;
        };
        if node.queue.enqueue_packet(p.packet, parent, p.t_gen, asn) {
            node.seen.insert(p.packet);
            self.live[idx].copies = 1;
        } else {
            node.counters.queue_overflows += 1;
            node.counters.queue_drops += 1;
            self.records[idx].fate = Fate::QueueDrop;
            self.records[idx].dropped_at = Some(src);
        }
    }

    fn shared_actions(
        &mut self,
        asn: Asn,
        actions: &mut Vec<(NodeId, RadioAction)>,
        frames: &mut Vec<(NodeId, Frame)>,
    ) {
        let channel = hop_channel(asn, 0, &self.cfg.hop_sequence);
        let band = self.cfg.band.band_id;
        for id in 0..self.n() as NodeId {
            let joined = self.dodag.is_joined(id);
            let parent = self.dodag.parent(id);
            let fallback_data = joined
                && id != ROOT
                && parent.is_some_and(|p| self.schedules[id as usize].count(CellKind::TxDedicated, p) == 0);
            let node = &mut self.nodes[id as usize];
            if node.dio_now {
                node.dio_now = false;
                if let Some(dio) = self.dodag.dio(id, band) {
                    actions.push((id, RadioAction::Transmit { channel, destination: None }));
                    frames.push((id, Frame::Dio(dio)));
                    continue;
                }
            }
            let unicast = if let Some(dao) = node.dao {
                Some((dao.parent, Frame::Dao(dao.parent)))
            } else if fallback_data && node.queue.ready_head(asn).is_some() {
                parent.map(|p| (p, Frame::Data(p)))
            } else {
                None
            };
            match unicast {
                Some((dest, frame)) if node.backoff.try_transmit() => {
                    actions.push((id, RadioAction::Transmit { channel, destination: Some(dest) }));
                    frames.push((id, frame));
                }
                _ => actions.push((id, RadioAction::Listen { channel })),
            }
        }
    }

    fn dedicated_actions(
        &mut self,
        asn: Asn,
        offset: u32,
        actions: &mut Vec<(NodeId, RadioAction)>,
        frames: &mut Vec<(NodeId, Frame)>,
    ) {
        for k in 0..self.slot_index[offset as usize].len() {
            let (id, cell) = self.slot_index[offset as usize][k];
            let channel = hop_channel(asn, cell.channel_offset, &self.cfg.hop_sequence);
            match cell.kind {
                CellKind::TxDedicated => {
                    let peer = cell.peer.expect("dedicated cell has a peer");
                    if !self.dodag.is_joined(id) || self.dodag.parent(id) != Some(peer) {
                        continue;
                    }
                    let node = &mut self.nodes[id as usize];
                    let ready = node.queue.ready_head(asn).is_some();
                    node.usage.record(ready);
                    if node.usage.is_full(&self.cfg.msf) {
                        let tx_cells = self.schedules[id as usize].count(CellKind::TxDedicated, peer);
                        let decision = msf::adapt_cells(tx_cells, &node.usage, &self.cfg.msf);
                        node.usage.reset();
                        if decision != CellDecision::None {
                            self.pending_msf.push((id, decision));
                        }
                    }
                    if ready {
                        actions.push((id, RadioAction::Transmit { channel, destination: Some(peer) }));
                        frames.push((id, Frame::Data(peer)));
                    }
                }
                CellKind::RxDedicated => actions.push((id, RadioAction::Listen { channel })),
                CellKind::SharedMinimal => {}
            }
        }
    }

    fn apply(
        &mut self,
        asn: Asn,
        now: SimTime,
        shared: bool,
        frames: &[(NodeId, Frame)],
        report: &crate::mac::SlotReport,
    ) {
        let frame_of = |sender: NodeId| frames.iter().find(|f| f.0 == sender).map(|f| f.1);
        for &(listener, sender, rssi) in &report.receptions {
            let Some(Frame::Dio(dio)) = frame_of(sender) else { continue };
            if listener == ROOT {
                continue;
            }
            let pdr = self.cfg.waterfall.pdr(rssi);
            let etx = 1.0 / pdr.max(1.0 / self.cfg.rpl.max_etx);
            let change = self.dodag.process_dio(listener, &dio, etx);
            self.on_parent_change(listener, change);
            let node = &mut self.nodes[listener as usize];
            if !self.dodag.is_joined(listener) && node.dao.is_none() {
                if let Some(p) = self.dodag.parent(listener) {
                    node.dao = Some(DaoState { parent: p, retries: 0 });
                }
            }
        }
        for &(sender, outcome) in &report.unicast {
            match frame_of(sender) {
                Some(Frame::Dao(parent)) => self.on_dao_outcome(sender, parent, outcome.result, now),
                Some(Frame::Data(dest)) => self.on_data_outcome(sender, dest, outcome.result, shared, asn, now),
                _ => {}
            }
        }
    }

    fn on_dao_outcome(&mut self, sender: NodeId, parent: NodeId, result: TxResult, now: SimTime) {
        let success = result == TxResult::Delivered;
        let change = self.dodag.record_link_attempt(sender, parent, success);
        let max_retries = self.max_retries();
        let node = &mut self.nodes[sender as usize];
        if success {
            node.backoff.on_success();
            node.dao = None;
        } else {
            node.backoff.on_failure(&mut self.mac_rng);
            if let Some(dao) = node.dao.as_mut() {
                dao.retries += 1;
                if dao.retries > max_retries {
                    node.dao = None;
                    node.backoff.reset();
                }
            }
        }
        if success && self.dodag.parent(sender) == Some(parent) && !self.dodag.is_joined(sender) {
            self.dodag.complete_join(sender, parent, now).expect("parent checked above");
            let _ = msf::negotiate_cell(
                &mut self.schedules,
                sender,
                parent,
                self.cfg.band.channel_count,
                &mut self.mac_rng,
            );
            self.index_dirty = true;
            self.dodag.reset_trickle(sender, self.slotframe, &mut self.mac_rng);
            self.nodes[sender as usize].usage.reset();
        }
        self.on_parent_change(sender, change);
    }

    fn on_data_outcome(
        &mut self,
        sender: NodeId,
        dest: NodeId,
        result: TxResult,
        shared: bool,
        asn: Asn,
        now: SimTime,
    ) {
        let Some(head) = self.nodes[sender as usize].queue.head().cloned() else { return };
        let idx = self.index[&head.packet];
        if head.retries > 0 {
            self.nodes[sender as usize].counters.retries += 1;
            self.records[idx].retries += 1;
        }
        let handoff = match result {
            TxResult::Delivered | TxResult::AckMissed => {
                let mut hops = head.hop_attempts.clone();
                hops.push((head.retries + 1) as u8);
                Some(self.handoff(dest, head.packet, hops, asn, now))
            }
            TxResult::NoAck | TxResult::Collision => None,
        };
        let success = result == TxResult::Delivered;
        let change = self.dodag.record_link_attempt(sender, dest, success);
        let max_retries = self.max_retries();
        let node = &mut self.nodes[sender as usize];
        if shared {
            if success {
                node.backoff.on_success();
            } else {
                node.backoff.on_failure(&mut self.mac_rng);
            }
        }
        if success {
            node.queue.pop();
            let cause = match handoff {
                Some(Handoff::Refused) => Some((Fate::QueueDrop, dest)),
                _ => None,
            };
            self.release(idx, cause, sender);
        } else {
            let h = node.queue.head_mut().expect("head exists");
            h.retries += 1;
            if h.retries > max_retries {
                node.queue.pop();
                if shared {
                    node.backoff.reset();
                }
                self.release(idx, Some((Fate::RetryDrop, sender)), sender);
            }
        }
        self.on_parent_change(sender, change);
    }

    fn handoff(&mut self, dest: NodeId, packet: PacketId, hop_attempts: Vec<u8>, asn: Asn, now: SimTime) -> Handoff {
        let idx = self.index[&packet];
        if dest == ROOT {
            let r = &mut self.records[idx];
            if r.fate == Fate::InFlight {
                r.fate = Fate::Delivered;
                r.t_arrival = Some(now);
                r.hops = hop_attempts.len() as u32;
                r.attempts_per_hop = hop_attempts;
            }
            return Handoff::Root;
        }
        if self.nodes[dest as usize].seen.contains(&packet) {
            return Handoff::Duplicate;
        }
        let Some(parent) = self.dodag.parent(dest) else {
            self.live[idx].last_loss = Some((Fate::QueueDrop, dest));
            return Handoff::Refused;
        };
        let node = &mut self.nodes[dest as usize];
        let entry =
            QueueEntry { packet, destination: parent, retries: 0, enqueued: now, ready: Asn(asn.0 + 1), hop_attempts };
        if node.queue.push(entry) {
            node.seen.insert(packet);
            self.live[idx].copies += 1;
            Handoff::Accepted
        } else {
            node.counters.queue_overflows += 1;
            self.live[idx].last_loss = Some((Fate::QueueDrop, dest));
            Handoff::Refused
        }
    }

    /// One queued copy of a packet leaves the network without being passed
    /// on. When no copy remains, the packet's fate is settled by the most
    /// recent loss.
    fn release(&mut self, idx: usize, cause: Option<(Fate, NodeId)>, at: NodeId) {
        let live = &mut self.live[idx];
        live.copies -= 1;
        if let Some(c) = cause {
            live.last_loss = Some(c);
        }
        if live.copies > 0 || self.records[idx].fate != Fate::InFlight {
            return;
        }
        let (fate, node) = live.last_loss.unwrap_or((Fate::RetryDrop, at));
        self.records[idx].fate = fate;
        self.records[idx].dropped_at = Some(node);
        let counters = &mut self.nodes[node as usize].counters;
        match fate {
            Fate::QueueDrop => counters.queue_drops += 1,
            _ => counters.retry_drops += 1,
        }
    }

    fn on_parent_change(&mut self, node: NodeId, change: ParentChange) {
        match change {
            ParentChange::None => {}
            ParentChange::Selected { parent } => {
                self.nodes[node as usize].dao = Some(DaoState { parent, retries: 0 });
            }
            ParentChange::Switched { old, new } => {
                if self.dodag.is_joined(node) {
                    let _ = msf::switch_parent(
                        &mut self.schedules,
                        node,
                        old,
                        new,
                        self.cfg.band.channel_count,
                        &mut self.mac_rng,
                    );
                    self.index_dirty = true;
                    self.pending_msf.retain(|(n, _)| *n != node);
                    let rt = &mut self.nodes[node as usize];
                    rt.queue.retarget(new);
                    rt.usage.reset();
                    self.dodag.reset_trickle(node, self.slotframe, &mut self.mac_rng);
                } else {
                    self.nodes[node as usize].dao = Some(DaoState { parent: new, retries: 0 });
                }
            }
        }
    }

    fn into_trace(self) -> RunTrace {
        let nodes = self
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, rt)| {
                let dag = self.dodag.state(i as NodeId);
                NodeCounters {
                    joined: dag.joined,
                    join_time: dag.join_time,
                    parent: dag.preferred_parent,
                    ..rt.counters
                }
            })
            .collect();
        RunTrace {
            format_version: TRACE_FORMAT_VERSION,
            band: self.cfg.band.band_id,
            seed: self.cfg.app.seed,
            topology: self.cfg.topology.clone(),
            records: self.records,
            nodes,
            unjoined_at_setup: self.unjoined_at_setup.unwrap_or_default(),
            slots_executed: self.slots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BandId;
    use crate::topology::{generate_random, Position};

    fn app(setup: f64, duration: f64) -> AppConfig {
        AppConfig { setup_time: setup, duration, ..AppConfig::default() }
    }

    #[test]
    fn schedule_with_zero_variance() {
        let s = generate_app_schedule(&app(5400.0, 7200.0), &[1, 2, 3]).unwrap();
        assert_eq!(s.len(), 3 * 720);
        let node1: Vec<u64> = s.iter().filter(|p| p.packet.source == 1).map(|p| p.t_gen.as_micros()).collect();
        assert_eq!(&node1[..3], &[5_400_000_000, 5_410_000_000, 5_420_000_000]);
        assert_eq!(*node1.last().unwrap(), 5_400_000_000 + 719 * 10_000_000);
        let seqs: Vec<u32> = s.iter().filter(|p| p.packet.source == 2).map(|p| p.packet.sequence).collect();
        assert_eq!(seqs, (0..720).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_is_independent_of_band() {
        // the schedule only sees the app config, so both bands get it verbatim
        let a = generate_app_schedule(&app(600.0, 900.0), &[1, 2]).unwrap();
        let b = generate_app_schedule(&app(600.0, 900.0), &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert!(generate_app_schedule(&app(600.0, 0.0), &[1, 2]).unwrap().is_empty());
    }

    #[test]
    fn schedule_with_variance_stays_in_window() {
        let mut cfg = app(600.0, 100.0);
        cfg.interval_variance = 2.0;
        let s = generate_app_schedule(&cfg, &[1, 2]).unwrap();
        assert_eq!(s.len(), 20);
        for p in &s {
            let nominal = 600.0 + 10.0 * p.packet.sequence as f64;
            assert!((p.t_gen.as_secs_f64() - nominal).abs() <= 1.0 + 1e-6);
        }
    }

    fn pair(band: BandConfig, setup: f64, duration: f64) -> RunConfig {
        let topo =
            Topology { side_length: 2.0, positions: vec![Position { x: 1.0, y: 1.0 }, Position { x: 1.0, y: 0.0 }] };
        let mut cfg = RunConfig::new(topo, band, app(setup, duration));
        cfg.check_invariants = true;
        cfg
    }

    #[test]
    fn perfect_pair_delivers_everything_in_one_hop() {
        for band in [BandConfig::reference_24ghz(), BandConfig::reference_868mhz()] {
            let frame = band.slot_duration.as_micros() * 101;
            let trace = run_band(&pair(band, 60.0, 100.0)).unwrap();
            assert_eq!(trace.generated(), 10);
            assert!(trace.unjoined_at_setup.is_empty());
            for r in &trace.records {
                assert!(r.delivered());
                assert_eq!(r.hops, 1);
                assert_eq!(r.attempts_per_hop, vec![1]);
                assert!(r.latency().unwrap().as_micros() < frame);
            }
            assert!(trace.conservation().balanced());
        }
    }

    #[test]
    fn zero_duration_is_formation_only() {
        let trace = run_band(&pair(BandConfig::reference_24ghz(), 30.0, 0.0)).unwrap();
        assert_eq!(trace.generated(), 0);
        assert!(trace.nodes[1].joined);
    }

    #[test]
    fn runs_are_deterministic_and_conserve_packets() {
        let band = BandConfig::reference_24ghz();
        let topo = generate_random(15, 100.0, &mut derive_stream(3, "topology"), &band, -97.0, 1000).unwrap();
        let mut cfg = RunConfig::new(topo, band, AppConfig { seed: 3, ..app(200.0, 200.0) });
        cfg.check_invariants = true;
        let a = run_band(&cfg).unwrap();
        let b = run_band(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(None), b.to_text(None));
        let c = a.conservation();
        assert!(c.balanced());
        assert_eq!(c, a.conservation_from_counters());
        for r in &a.records {
            assert!(r.attempts_per_hop.iter().all(|&x| x as u32 <= 1 + cfg.app.max_retransmissions));
            if let Some(t) = r.t_arrival {
                assert!(t >= r.t_gen);
            }
        }
    }

    #[test]
    fn unreachable_node_never_joins() {
        let topo =
            Topology { side_length: 2.0, positions: vec![Position { x: 1.0, y: 1.0 }, Position { x: 1.0, y: 0.0 }] };
        let cfg = RunConfig::new(topo, BandConfig::reference_24ghz(), app(20.0, 30.0));
        let mut links = crate::propagation::FixedLinks::new(2);
        links.set(0, 1, -150.0);
        let trace = run_band_with(&cfg, &links).unwrap();
        assert_eq!(trace.unjoined_at_setup, vec![1]);
        assert!(trace.records.iter().all(|r| r.fate == Fate::NotJoined));
        assert_eq!(trace.nodes[1].not_joined_drops, 3);
        assert!(trace.conservation().balanced());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = pair(BandConfig::reference_868mhz(), 60.0, 10.0);
        cfg.hop_sequence = HopSequence::identity(16);
        assert!(run_band(&cfg).is_err());
        let mut cfg = pair(BandConfig::reference_868mhz(), 60.0, 10.0);
        cfg.band.channel_count = 16;
        cfg.hop_sequence = HopSequence::identity(16);
        cfg.strict_paper_mode = true;
        assert!(matches!(run_band(&cfg), Err(Error::InvalidBandConfig(_))));
        assert_eq!(cfg.band.band_id, BandId::Band868MHz);
    }
}
