//! Node placement. Node 0 is the DAG root and always sits at the centre of
//! the square deployment area.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BandConfig;
use crate::propagation::friis_path_loss;
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deployment {
    Linear,
    Random,
}

impl Deployment {
    pub fn tag(self) -> &'static str {
        match self {
            Deployment::Linear => "linear",
            Deployment::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub side_length: f64,
    pub positions: Vec<Position>,
}

pub const DEFAULT_RESAMPLE_BUDGET: usize = 1000;

impl Topology {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.positions[a].distance(&self.positions[b])
    }

    /// Checks root placement, bounds and that no two nodes coincide.
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::Topology("need a root and at least one node".into()));
        }
        let l = self.side_length;
        if !(l > 0.0) {
            return Err(Error::Topology("side length must be positive".into()));
        }
        let root = self.positions[0];
        if root.x != l / 2.0 || root.y != l / 2.0 {
            return Err(Error::Topology(format!("root must be at ({}, {})", l / 2.0, l / 2.0)));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(0.0..=l).contains(&p.x) || !(0.0..=l).contains(&p.y) {
                return Err(Error::Topology(format!("node {i} outside the area")));
            }
        }
        for a in 0..self.len() {
            for b in (a + 1)..self.len() {
                if self.distance(a, b) == 0.0 {
                    return Err(Error::Topology(format!("nodes {a} and {b} share a position")));
                }
            }
        }
        Ok(())
    }

    /// `L=<meters>` header, then `node_id x y` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("L={}\n", self.side_length);
        for (i, p) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {}", p.x, p.y);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Topology> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing `L=` header".into() })?;
        let side_length = header
            .strip_prefix("L=")
            .ok_or(Error::Parse { line: hline, msg: "expected `L=<meters>`".into() })?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse { line: hline, msg: e.to_string() })?;
        let mut positions = Vec::new();
        for (line, l) in lines {
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line, msg: "expected `node_id x y`".into() });
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse { line, msg: e.to_string() });
            let id: usize = fields[0].parse().map_err(|_| Error::Parse { line, msg: "bad node id".into() })?;
            if id != positions.len() {
                return Err(Error::Parse { line, msg: format!("expected node id {}", positions.len()) });
            }
            positions.push(Position { x: num(fields[1])?, y: num(fields[2])? });
        }
        let topo = Topology { side_length, positions };
        topo.validate()?;
        Ok(topo)
    }
}

/// Uniform grid with `ceil(sqrt(n-1))` columns and cell-centred points, so
/// spacing is `L/cols` along x and `L/rows` along y. A grid point that falls
/// exactly on the centre is left to the root.
pub fn generate_linear(n: usize, side_length: f64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::Topology(format!("linear deployment needs n >= 2, got {n}")));
    }
    if !(side_length > 0.0) {
        return Err(Error::Topology("side length must be positive".into()));
    }
    let others = n - 1;
    let cols = (others as f64).sqrt().ceil() as usize;
    let mut rows = others.div_ceil(cols);
    let centre_taken = |rows: usize| cols % 2 == 1 && rows % 2 == 1;
    if centre_taken(rows) && rows * cols - 1 < others {
        rows += 1;
    }
    let dx = side_length / cols as f64;
    let dy = side_length / rows as f64;
    let centre = side_length / 2.0;
    let mut positions = vec![Position { x: centre, y: centre }];
    'fill: for r in 0..rows {
        for c in 0..cols {
            if positions.len() == n {
                break 'fill;
            }
            if centre_taken(rows) && 2 * c + 1 == cols && 2 * r + 1 == rows {
                continue;
            }
            positions.push(Position { x: (c as f64 + 0.5) * dx, y: (r as f64 + 0.5) * dy });
        }
    }
    debug_assert_eq!(positions.len(), n);
    Ok(Topology { side_length, positions })
}

/// Uniform random placement; each node is resampled until some already
/// placed node (the root included) is reachable at `connect_threshold_dbm`
/// with free-space loss only.
pub fn generate_random(
    n: usize,
    side_length: f64,
    rng: &mut SimRng,
    band: &BandConfig,
    connect_threshold_dbm: f64,
    resample_budget: usize,
) -> Result<Topology> {
    if n < 2 {
        return Err(Error::Topology(format!("random deployment needs n >= 2, got {n}")));
    }
    if !(side_length > 0.0) {
        return Err(Error::Topology("side length must be positive".into()));
    }
    let centre = side_length / 2.0;
    let mut positions = vec![Position { x: centre, y: centre }];
    while positions.len() < n {
        let mut placed = false;
        for _ in 0..resample_budget {
            let p = Position { x: rng.random_range(0.0..=side_length), y: rng.random_range(0.0..=side_length) };
            let reachable = positions.iter().all(|q| q.distance(&p) > 0.0)
                && positions.iter().any(|q| {
                    friis_path_loss(q.distance(&p), band.center_frequency_hz)
                        .map(|loss| band.tx_power_dbm - loss >= connect_threshold_dbm)
                        .unwrap_or(false)
                });
            if reachable {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Topology(format!(
                "node {} found no reachable neighbour after {resample_budget} attempts",
                positions.len()
            )));
        }
    }
    Ok(Topology { side_length, positions })
}

/// Best free-space RSSI from each node to any other node.
pub fn connectivity_report(topology: &Topology, band: &BandConfig) -> Result<Vec<f64>> {
    let n = topology.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    for (a, slot) in best.iter_mut().enumerate() {
        for b in (0..n).filter(|&b| b != a) {
            let loss = friis_path_loss(topology.distance(a, b), band.center_frequency_hz)?;
            *slot = slot.max(band.tx_power_dbm - loss);
        }
    }
    Ok(best)
}
