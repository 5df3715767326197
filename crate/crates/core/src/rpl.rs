//! One RPL DODAG per band. Parent selection is minimum rank with hysteresis
//! over an ETX link metric; DIOs follow a Trickle-like doubling timer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandId, NodeId, PacketId, SimTime, ROOT};
use crate::rng::SimRng;
use crate::trace::RunTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RplParams {
    pub root_rank: u32,
    /// rank increase = round(rank_factor * ETX)
    pub rank_factor: f64,
    pub hysteresis: u32,
    pub etx_alpha: f64,
    pub max_etx: f64,
    pub dio_min_slotframes: u32,
    pub dio_max_slotframes: u32,
}

impl Default for RplParams {
    fn default() -> Self {
        RplParams {
            root_rank: 256,
            rank_factor: 256.0,
            hysteresis: 192,
            etx_alpha: 0.1,
            max_etx: 16.0,
            dio_min_slotframes: 1,
            dio_max_slotframes: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DagState {
    /// `None` is infinite rank.
    pub rank: Option<u32>,
    pub preferred_parent: Option<NodeId>,
    pub joined: bool,
    pub join_time: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DioMessage {
    pub origin: NodeId,
    pub rank: u32,
    pub band: BandId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentChange {
    None,
    Selected { parent: NodeId },
    Switched { old: NodeId, new: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    advertised_rank: u32,
    /// EWMA of per-attempt success probability
    success: f64,
}

#[derive(Clone, Debug)]
struct Trickle {
    interval: u32,
    start: u64,
    fire: u64,
}

#[derive(Clone, Debug)]
struct RplNode {
    dag: DagState,
    neighbors: BTreeMap<NodeId, Neighbor>,
    trickle: Option<Trickle>,
}

#[derive(Clone, Debug)]
pub struct Dodag {
    params: RplParams,
    nodes: Vec<RplNode>,
}

impl Dodag {
    pub fn new(node_count: usize, params: RplParams) -> Self {
        let mut nodes =
            vec![RplNode { dag: DagState::default(), neighbors: BTreeMap::new(), trickle: None }; node_count];
        nodes[ROOT as usize].dag = DagState {
            rank: Some(params.root_rank),
            preferred_parent: None,
            joined: true,
            join_time: Some(SimTime::ZERO),
        };
        Dodag { params, nodes }
    }

    pub fn params(&self) -> &RplParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn state(&self, node: NodeId) -> &DagState {
        &self.nodes[node as usize].dag
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node as usize].dag.preferred_parent
    }

    pub fn is_joined(&self, node: NodeId) -> bool {
        self.nodes[node as usize].dag.joined
    }

    pub fn rank_increment(&self, etx: f64) -> u32 {
        (self.params.rank_factor * etx).round() as u32
    }

    /// ETX towards a known neighbour, capped at `max_etx`.
    pub fn etx(&self, node: NodeId, neighbor: NodeId) -> Option<f64> {
        self.nodes[node as usize].neighbors.get(&neighbor).map(|n| self.success_to_etx(n.success))
    }

    fn success_to_etx(&self, p: f64) -> f64 {
        (1.0 / p.max(1.0 / self.params.max_etx)).min(self.params.max_etx)
    }

    /// True if `candidate`'s parent chain passes through `node`.
    pub fn is_descendant(&self, candidate: NodeId, node: NodeId) -> bool {
        let mut cur = Some(candidate);
        let mut steps = 0;
        while let Some(c) = cur {
            if c == node {
                return true;
            }
            steps += 1;
            if steps > self.nodes.len() {
                return true;
            }
            cur = self.nodes[c as usize].dag.preferred_parent;
        }
        false
    }

    /// Handles a decoded DIO. `etx` initialises the link estimate the first
    /// time the sender is heard; later DIOs only refresh the advertised rank.
    pub fn process_dio(&mut self, node: NodeId, dio: &DioMessage, etx: f64) -> ParentChange {
        if node == ROOT || dio.origin == node {
            return ParentChange::None;
        }
        let success = 1.0 / etx.max(1.0);
        self.nodes[node as usize]
            .neighbors
            .entry(dio.origin)
            .and_modify(|n| n.advertised_rank = dio.rank)
            .or_insert(Neighbor { advertised_rank: dio.rank, success });
        self.reselect(node)
    }

    /// Folds one unicast attempt towards `neighbor` into its ETX estimate.
    pub fn record_link_attempt(&mut self, node: NodeId, neighbor: NodeId, success: bool) -> ParentChange {
        let alpha = self.params.etx_alpha;
        let Some(n) = self.nodes[node as usize].neighbors.get_mut(&neighbor) else {
            return ParentChange::None;
        };
        n.success = (1.0 - alpha) * n.success + alpha * if success { 1.0 } else { 0.0 };
        if self.parent(node) == Some(neighbor) {
            self.refresh_subtree(node);
        }
        self.reselect(node)
    }

    fn best_candidate(&self, node: NodeId) -> Option<(NodeId, u32)> {
        let mut best: Option<(NodeId, u32)> = None;
        for (&id, n) in &self.nodes[node as usize].neighbors {
            if self.is_descendant(id, node) {
                continue;
            }
            let rank = n.advertised_rank + self.rank_increment(self.success_to_etx(n.success));
            if best.is_none_or(|(_, r)| rank < r) {
                best = Some((id, rank));
            }
        }
        best
    }

    fn reselect(&mut self, node: NodeId) -> ParentChange {
        let Some((candidate, candidate_rank)) = self.best_candidate(node) else {
            return ParentChange::None;
        };
        let change = match (self.parent(node), self.nodes[node as usize].dag.rank) {
            (None, _) => ParentChange::Selected { parent: candidate },
            (Some(p), Some(current)) if p != candidate && candidate_rank + self.params.hysteresis < current => {
                ParentChange::Switched { old: p, new: candidate }
            }
            _ => return ParentChange::None,
        };
        let new_parent = match change {
            ParentChange::Selected { parent } => parent,
            ParentChange::Switched { new, .. } => new,
            ParentChange::None => unreachable!(),
        };
        self.nodes[node as usize].dag.preferred_parent = Some(new_parent);
        self.refresh_subtree(node);
        change
    }

    /// Recomputes the rank of `node` from its parent's current rank, then
    /// of every descendant.
    fn refresh_subtree(&mut self, node: NodeId) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x != ROOT {
                let Some(p) = self.parent(x) else { continue };
                let parent_rank = self.nodes[p as usize].dag.rank;
                let inc = self.etx(x, p).map(|e| self.rank_increment(e));
                self.nodes[x as usize].dag.rank = parent_rank.zip(inc).map(|(r, i)| r + i);
            }
            for (i, n) in self.nodes.iter().enumerate() {
                if n.dag.preferred_parent == Some(x) {
                    stack.push(i as NodeId);
                }
            }
        }
    }

    /// Marks the node joined once its DAO has been acknowledged by `parent`.
    pub fn complete_join(&mut self, node: NodeId, parent: NodeId, now: SimTime) -> Result<()> {
        let dag = &mut self.nodes[node as usize].dag;
        if dag.preferred_parent != Some(parent) {
            return Err(Error::InvalidArgument(format!("node {node} has not selected {parent} as parent")));
        }
        if dag.rank.is_none() {
            return Err(Error::InvalidArgument(format!("node {node} has no finite rank")));
        }
        if !dag.joined {
            dag.joined = true;
            dag.join_time = Some(now);
        }
        Ok(())
    }

    pub fn dio(&self, node: NodeId, band: BandId) -> Option<DioMessage> {
        let dag = &self.nodes[node as usize].dag;
        if !dag.joined {
            return None;
        }
        dag.rank.map(|rank| DioMessage { origin: node, rank, band })
    }

    /// Restarts the DIO timer at the minimum interval from `slotframe + 1`.
    pub fn reset_trickle(&mut self, node: NodeId, slotframe: u64, rng: &mut SimRng) {
        let interval = self.params.dio_min_slotframes.max(1);
        let start = if node == ROOT && self.nodes[node as usize].trickle.is_none() { slotframe } else { slotframe + 1 };
        let fire = Self::pick_fire(start, interval, rng);
        self.nodes[node as usize].trickle = Some(Trickle { interval, start, fire });
    }

    fn pick_fire(start: u64, interval: u32, rng: &mut SimRng) -> u64 {
        let half = interval / 2;
        start + if half == interval { 0 } else { rng.random_range(half..interval) as u64 }
    }

    /// Polled once per slotframe for joined nodes; true if a DIO goes out in
    /// this slotframe's minimal cell.
    pub fn dio_due(&mut self, node: NodeId, slotframe: u64, rng: &mut SimRng) -> bool {
        let max = self.params.dio_max_slotframes;
        let Some(t) = self.nodes[node as usize].trickle.as_mut() else {
            return false;
        };
        while slotframe >= t.start + t.interval as u64 {
            t.start += t.interval as u64;
            t.interval = (t.interval * 2).min(max);
            t.fire = Self::pick_fire(t.start, t.interval, rng);
        }
        slotframe == t.fire
    }

    /// Rank strictly increases along every parent chain and chains end at
    /// the root.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            let id = i as NodeId;
            if id == ROOT {
                if n.dag.preferred_parent.is_some() || n.dag.rank != Some(self.params.root_rank) {
                    return Err("root must have minimal rank and no parent".into());
                }
                continue;
            }
            if n.dag.joined && (n.dag.preferred_parent.is_none() || n.dag.rank.is_none()) {
                return Err(format!("joined node {id} lacks parent or rank"));
            }
            if let Some(p) = n.dag.preferred_parent {
                let (Some(r), Some(pr)) = (n.dag.rank, self.nodes[p as usize].dag.rank) else {
                    return Err(format!("node {id} or its parent {p} has infinite rank"));
                };
                if r <= pr {
                    return Err(format!("rank of {id} ({r}) not above parent {p} ({pr})"));
                }
                if self.is_descendant(p, id) {
                    return Err(format!("loop through node {id}"));
                }
            }
        }
        Ok(())
    }

    /// Hops from `node` to the root along preferred parents.
    pub fn depth(&self, node: NodeId) -> Option<u32> {
        let mut d = 0;
        let mut cur = node;
        while cur != ROOT {
            cur = self.parent(cur)?;
            d += 1;
            if d as usize > self.nodes.len() {
                return None;
            }
        }
        Some(d)
    }
}

/// MAC hops travelled by the first copy of `packet` to reach the root.
pub fn hop_count(trace: &RunTrace, packet: PacketId) -> Result<u32> {
    match trace.find(packet) {
        Some(r) if r.delivered() => Ok(r.hops),
        Some(_) => {
            Err(Error::InvalidArgument(format!("packet {}:{} was not delivered", packet.source, packet.sequence)))
        }
        None => Err(Error::InvalidArgument(format!("unknown packet {}:{}", packet.source, packet.sequence))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn dio(origin: NodeId, rank: u32) -> DioMessage {
        DioMessage { origin, rank, band: BandId::Band24GHz }
    }

    #[test]
    fn first_dio_adopts_sender() {
        let mut d = Dodag::new(3, RplParams::default());
        assert_eq!(d.process_dio(1, &dio(0, 256), 1.0), ParentChange::Selected { parent: 0 });
        assert_eq!(d.state(1).rank, Some(512));
        assert!(!d.state(1).joined);
        d.check_invariants().unwrap();
    }

    #[test]
    fn hysteresis_blocks_marginal_improvement() {
        let mut d = Dodag::new(4, RplParams::default());
        d.process_dio(1, &dio(0, 256), 1.0);
        d.complete_join(1, 0, SimTime::ZERO).unwrap();
        d.process_dio(2, &dio(0, 256), 2.0); // rank 768
                                             // via node 1: 512 + 256 = 768, not better by 192
        assert_eq!(d.process_dio(2, &dio(1, 512), 1.0), ParentChange::None);
        assert_eq!(d.parent(2), Some(0));
        // a clearly better route switches
        let mut d = Dodag::new(4, RplParams::default());
        d.process_dio(1, &dio(0, 256), 1.0);
        d.process_dio(2, &dio(0, 256), 4.0); // rank 1280
        assert_eq!(d.process_dio(2, &dio(1, 512), 1.0), ParentChange::Switched { old: 0, new: 1 });
        assert_eq!(d.state(2).rank, Some(768));
        d.check_invariants().unwrap();
    }

    #[test]
    fn equal_rank_tie_goes_to_lower_id() {
        let mut e = Dodag::new(5, RplParams::default());
        e.process_dio(4, &dio(2, 512), 1.0);
        e.process_dio(4, &dio(3, 512), 1.0);
        assert_eq!(e.parent(4), Some(2));
        // order of arrival does not matter once both are known
        let mut f = Dodag::new(5, RplParams::default());
        f.process_dio(4, &dio(3, 512), 1.0);
        f.process_dio(4, &dio(2, 512), 1.0);
        assert_eq!(f.best_candidate(4), Some((2, 768)));
    }

    #[test]
    fn descendants_never_become_parents() {
        let mut d = Dodag::new(3, RplParams::default());
        d.process_dio(1, &dio(0, 256), 4.0);
        d.process_dio(2, &dio(1, d.state(1).rank.unwrap()), 1.0);
        assert_eq!(d.parent(2), Some(1));
        // 2 advertises a tiny (stale) rank; 1 must still not pick its child
        assert_eq!(d.process_dio(1, &dio(2, 1), 1.0), ParentChange::None);
        d.check_invariants().unwrap();
    }

    #[test]
    fn failures_raise_rank_and_trigger_switch() {
        let mut d = Dodag::new(3, RplParams::default());
        d.process_dio(2, &dio(0, 256), 1.0);
        d.process_dio(1, &dio(0, 256), 1.0);
        d.process_dio(2, &dio(1, 512), 1.0);
        assert_eq!(d.parent(2), Some(0));
        let mut switched = false;
        for _ in 0..40 {
            if let ParentChange::Switched { new, .. } = d.record_link_attempt(2, 0, false) {
                assert_eq!(new, 1);
                switched = true;
                break;
            }
            d.check_invariants().unwrap();
        }
        assert!(switched);
        d.check_invariants().unwrap();
    }

    #[test]
    fn child_ranks_follow_parent_updates() {
        let mut d = Dodag::new(3, RplParams::default());
        d.process_dio(1, &dio(0, 256), 1.0);
        d.process_dio(2, &dio(1, 512), 1.0);
        let before = d.state(2).rank.unwrap();
        d.record_link_attempt(1, 0, false);
        assert!(d.state(2).rank.unwrap() > before);
        d.check_invariants().unwrap();
    }

    #[test]
    fn join_requires_selected_parent() {
        let mut d = Dodag::new(3, RplParams::default());
        assert!(d.complete_join(1, 0, SimTime::ZERO).is_err());
        d.process_dio(1, &dio(0, 256), 1.0);
        d.complete_join(1, 0, SimTime::from_secs(3)).unwrap();
        assert!(d.state(1).joined);
        assert_eq!(d.state(1).join_time, Some(SimTime::from_secs(3)));
        assert!(d.state(ROOT).joined);
        assert_eq!(d.state(ROOT).join_time, Some(SimTime::ZERO));
        assert_eq!(d.depth(1), Some(1));
    }

    #[test]
    fn trickle_doubles_to_max() {
        let mut d = Dodag::new(1, RplParams::default());
        let mut rng = derive_stream(1, "trickle");
        d.reset_trickle(ROOT, 0, &mut rng);
        let fires: Vec<u64> = (0..400).filter(|&sf| d.dio_due(ROOT, sf, &mut rng)).collect();
        assert_eq!(fires[0], 0);
        // intervals 1,2,4,...,64 start at 0,1,3,..,63, then every 64
        // slotframes from 127; the one starting at 383 fires after 400
        assert_eq!(fires.len(), 7 + 4);
        for w in fires.windows(2) {
            assert!(w[1] - w[0] <= 2 * 64);
        }
    }
}
