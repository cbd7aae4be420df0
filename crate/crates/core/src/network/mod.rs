//! Road-network model: intersections, roads, typed lanes and the four-phase
//! signal layout.
//!
//! Lanes carry the movement they perform at their downstream intersection.
//! Approach sides are derived from geometry: a road entering intersection `i`
//! from a node lying east of `i` is on the east approach.

mod io;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_roadnet, parse_roadnet};

/// Vehicle length (5 m) plus minimum gap (2.5 m).
pub const DEFAULT_CELL_LENGTH: f64 = 7.5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("road {road} references unknown intersection {intersection}")]
    DanglingReference { road: String, intersection: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("conflicting phase mapping at {intersection}: {reason}")]
    ConflictingPhaseMapping {
        intersection: String,
        reason: String,
    },
    #[error("invalid road {road}: {reason}")]
    InvalidRoad { road: String, reason: String },
    #[error("non-virtual intersections are not connected ({0} unreachable from {1})")]
    Disconnected(String, String),
    #[error("unknown intersection {0}")]
    UnknownIntersection(String),
    #[error("unknown lane {0}")]
    UnknownLane(String),
    #[error("intersection {0} is virtual and has no signal")]
    VirtualIntersection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Through,
    Left,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Through, Movement::Left, Movement::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Through => "through",
            Movement::Left => "left",
            Movement::Right => "right",
        }
    }
}

/// Compass side of an intersection, in N, E, S, W order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_index(k: usize) -> Direction {
        Direction::ALL[k % 4]
    }

    /// Side on which `to` lies as seen from `from`.
    pub fn between(from: (f64, f64), to: (f64, f64)) -> Direction {
        let dx = to.0 - from.0;
        let dy = to.1 - from.1;
        if dx.abs() >= dy.abs() {
            if dx >= 0.0 {
                Direction::East
            } else {
                Direction::West
            }
        } else if dy > 0.0 {
            Direction::North
        } else {
            Direction::South
        }
    }

    /// Exit side taken by a vehicle arriving on approach `self` performing `m`.
    pub fn exit_for(self, m: Movement) -> Direction {
        let k = self.index();
        match m {
            Movement::Through => Direction::from_index(k + 2),
            Movement::Left => Direction::from_index(k + 1),
            Movement::Right => Direction::from_index(k + 3),
        }
    }

    /// Movement connecting approach `self` to exit side `exit`, if any.
    pub fn movement_to(self, exit: Direction) -> Option<Movement> {
        Movement::ALL
            .into_iter()
            .find(|m| self.exit_for(*m) == exit)
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::East => 'E',
            Direction::South => 'S',
            Direction::West => 'W',
        }
    }
}

/// Signal phase. The declaration order is the tie-break order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseId {
    ETWT,
    ELWL,
    NTST,
    NLSL,
}

impl PhaseId {
    pub const ALL: [PhaseId; 4] = [PhaseId::ETWT, PhaseId::ELWL, PhaseId::NTST, PhaseId::NLSL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> PhaseId {
        PhaseId::ALL[k % 4]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseId::ETWT => "ETWT",
            PhaseId::ELWL => "ELWL",
            PhaseId::NTST => "NTST",
            PhaseId::NLSL => "NLSL",
        }
    }

    /// Approach sides and movement served by this phase.
    pub fn movements(self) -> ([Direction; 2], Movement) {
        match self {
            PhaseId::ETWT => ([Direction::East, Direction::West], Movement::Through),
            PhaseId::ELWL => ([Direction::East, Direction::West], Movement::Left),
            PhaseId::NTST => ([Direction::North, Direction::South], Movement::Through),
            PhaseId::NLSL => ([Direction::North, Direction::South], Movement::Left),
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            PhaseId::ETWT => "east and west approaches go through",
            PhaseId::ELWL => "east and west approaches turn left",
            PhaseId::NTST => "north and south approaches go through",
            PhaseId::NLSL => "north and south approaches turn left",
        }
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        PhaseId::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoadIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneIdx(pub u32);

macro_rules! idx_impl {
    ($t:ty) => {
        impl $t {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}
idx_impl!(NodeIdx);
idx_impl!(RoadIdx);
idx_impl!(LaneIdx);

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub road: RoadIdx,
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub length: f64,
    pub max_speed: f64,
    pub movement: Movement,
    pub capacity: u32,
    /// Approach side at `to`.
    pub side: Direction,
    /// Road entered after performing `movement` at `to`; `None` at sinks.
    pub downstream: Option<RoadIdx>,
}

impl Lane {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.max_speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub length: f64,
    pub max_speed: f64,
    pub lanes: Vec<LaneIdx>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub position: (f64, f64),
    pub is_virtual: bool,
    pub incoming: Vec<LaneIdx>,
    pub outgoing: Vec<LaneIdx>,
    /// Incoming road per approach side.
    pub approach: [Option<RoadIdx>; 4],
    /// Outgoing road per exit side.
    pub exit: [Option<RoadIdx>; 4],
}

/// One-hop neighbour of an intersection together with its connecting lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub node: NodeIdx,
    pub side: Direction,
    /// Lanes travelling from the neighbour into the intersection.
    pub lanes_in: Vec<LaneIdx>,
    /// Lanes travelling from the intersection to the neighbour.
    pub lanes_out: Vec<LaneIdx>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    intersections: Vec<Intersection>,
    roads: Vec<Road>,
    lanes: Vec<Lane>,
    node_ids: BTreeMap<String, NodeIdx>,
    road_ids: BTreeMap<String, RoadIdx>,
    lane_ids: BTreeMap<String, LaneIdx>,
    cell_length: f64,
    neighbors: Vec<Vec<Neighbor>>,
    boundary_neighbors: Vec<Vec<Neighbor>>,
}

/// Plain description of a road used to build a network.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub max_speed: f64,
    pub lanes: Vec<Movement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionSpec {
    pub id: String,
    pub position: (f64, f64),
    pub is_virtual: bool,
}

impl RoadNetwork {
    /// Validate and index a network. Lane ids are `{road}_{k}`.
    pub fn build(
        intersections: Vec<IntersectionSpec>,
        roads: Vec<RoadSpec>,
        cell_length: f64,
    ) -> Result<Self, NetworkError> {
        let mut node_ids = BTreeMap::new();
        let mut nodes = Vec::with_capacity(intersections.len());
        for (k, spec) in intersections.into_iter().enumerate() {
            if node_ids
                .insert(spec.id.clone(), NodeIdx(k as u32))
                .is_some()
            {
                return Err(NetworkError::DuplicateId(spec.id));
            }
            nodes.push(Intersection {
                id: spec.id,
                position: spec.position,
                is_virtual: spec.is_virtual,
                incoming: Vec::new(),
                outgoing: Vec::new(),
                approach: [None; 4],
                exit: [None; 4],
            });
        }

        let mut road_ids = BTreeMap::new();
        let mut lane_ids = BTreeMap::new();
        let mut road_list = Vec::with_capacity(roads.len());
        let mut lanes = Vec::new();
        for (r, spec) in roads.into_iter().enumerate() {
            let ridx = RoadIdx(r as u32);
            let lookup = |id: &str| {
                node_ids
                    .get(id)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingReference {
                        road: spec.id.clone(),
                        intersection: id.to_string(),
                    })
            };
            let from = lookup(&spec.from)?;
            let to = lookup(&spec.to)?;
            let invalid = |reason: &str| NetworkError::InvalidRoad {
                road: spec.id.clone(),
                reason: reason.to_string(),
            };
            if from == to {
                return Err(invalid("start and end intersection coincide"));
            }
            if !(spec.length.is_finite() && spec.length > 0.0) {
                return Err(invalid("length must be positive"));
            }
            if !(spec.max_speed.is_finite() && spec.max_speed > 0.0) {
                return Err(invalid("maxSpeed must be positive"));
            }
            if spec.lanes.is_empty() {
                return Err(invalid("road has no lanes"));
            }
            if road_ids.insert(spec.id.clone(), ridx).is_some() {
                return Err(NetworkError::DuplicateId(spec.id));
            }
            let side = Direction::between(nodes[to.index()].position, nodes[from.index()].position);
            let capacity = ((spec.length / cell_length).floor() as u32).max(1);
            let mut lane_list = Vec::with_capacity(spec.lanes.len());
            for (k, movement) in spec.lanes.iter().enumerate() {
                let lidx = LaneIdx(lanes.len() as u32);
                let id = format!("{}_{}", spec.id, k);
                if lane_ids.insert(id.clone(), lidx).is_some() {
                    return Err(NetworkError::DuplicateId(id));
                }
                lanes.push(Lane {
                    id,
                    road: ridx,
                    from,
                    to,
                    length: spec.length,
                    max_speed: spec.max_speed,
                    movement: *movement,
                    capacity,
                    side,
                    downstream: None,
                });
                lane_list.push(lidx);
                nodes[to.index()].incoming.push(lidx);
                nodes[from.index()].outgoing.push(lidx);
            }
            road_list.push(Road {
                id: spec.id,
                from,
                to,
                length: spec.length,
                max_speed: spec.max_speed,
                lanes: lane_list,
            });
        }

        // Approach/exit tables; only controlled intersections need them to be unambiguous.
        for (r, road) in road_list.iter().enumerate() {
            let ridx = RoadIdx(r as u32);
            let to_pos = nodes[road.to.index()].position;
            let from_pos = nodes[road.from.index()].position;
            let approach = Direction::between(to_pos, from_pos);
            let exit = Direction::between(from_pos, to_pos);
            for (node, side) in [(road.to, approach), (road.from, exit)] {
                let n = &mut nodes[node.index()];
                let slot = if node == road.to {
                    &mut n.approach[side.index()]
                } else {
                    &mut n.exit[side.index()]
                };
                if let Some(prev) = *slot {
                    if !n.is_virtual {
                        return Err(NetworkError::ConflictingPhaseMapping {
                            intersection: n.id.clone(),
                            reason: format!(
                                "roads {} and {} share the {:?} side",
                                road_list[prev.index()].id,
                                road.id,
                                side
                            ),
                        });
                    }
                } else {
                    *slot = Some(ridx);
                }
            }
        }

        for node in nodes.iter().filter(|n| !n.is_virtual) {
            for road in node.approach.iter().flatten() {
                let mut seen = BTreeSet::new();
                for l in &road_list[road.index()].lanes {
                    let m = lanes[l.index()].movement;
                    if !seen.insert(m) {
                        return Err(NetworkError::ConflictingPhaseMapping {
                            intersection: node.id.clone(),
                            reason: format!(
                                "road {} has more than one {} lane",
                                road_list[road.index()].id,
                                m.as_str()
                            ),
                        });
                    }
                }
            }
        }

        for lane in lanes.iter_mut() {
            let node = &nodes[lane.to.index()];
            if !node.is_virtual {
                lane.downstream = node.exit[lane.side.exit_for(lane.movement).index()];
            }
        }

        let mut net = RoadNetwork {
            intersections: nodes,
            roads: road_list,
            lanes,
            node_ids,
            road_ids,
            lane_ids,
            cell_length,
            neighbors: Vec::new(),
            boundary_neighbors: Vec::new(),
        };
        net.neighbors = (0..net.intersections.len())
            .map(|k| net.compute_neighbors(NodeIdx(k as u32), false))
            .collect();
        net.boundary_neighbors = (0..net.intersections.len())
            .map(|k| net.compute_neighbors(NodeIdx(k as u32), true))
            .collect();
        net.check_connected()?;
        Ok(net)
    }

    fn compute_neighbors(&self, i: NodeIdx, include_boundary: bool) -> Vec<Neighbor> {
        let node = &self.intersections[i.index()];
        let mut by_node: BTreeMap<NodeIdx, Neighbor> = BTreeMap::new();
        let mut visit = |other: NodeIdx, lane_list: &[LaneIdx], inbound: bool| {
            let o = &self.intersections[other.index()];
            if o.is_virtual && !include_boundary {
                return;
            }
            let e = by_node.entry(other).or_insert_with(|| Neighbor {
                node: other,
                side: Direction::between(node.position, o.position),
                lanes_in: Vec::new(),
                lanes_out: Vec::new(),
            });
            if inbound {
                e.lanes_in.extend_from_slice(lane_list);
            } else {
                e.lanes_out.extend_from_slice(lane_list);
            }
        };
        for road in &self.roads {
            if road.to == i {
                visit(road.from, &road.lanes, true);
            } else if road.from == i {
                visit(road.to, &road.lanes, false);
            }
        }
        let mut out: Vec<Neighbor> = by_node.into_values().collect();
        out.sort_by(|a, b| {
            (a.side, &self.intersections[a.node.index()].id)
                .cmp(&(b.side, &self.intersections[b.node.index()].id))
        });
        out
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let controlled: Vec<NodeIdx> = self.controlled().collect();
        let Some(&start) = controlled.first() else {
            return Ok(());
        };
        let mut seen = vec![false; self.intersections.len()];
        seen[start.index()] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for nb in &self.neighbors[n.index()] {
                if !seen[nb.node.index()] {
                    seen[nb.node.index()] = true;
                    queue.push_back(nb.node);
                }
            }
        }
        match controlled.iter().find(|n| !seen[n.index()]) {
            Some(n) => Err(NetworkError::Disconnected(
                self.intersections[n.index()].id.clone(),
                self.intersections[start.index()].id.clone(),
            )),
            None => Ok(()),
        }
    }

    pub fn with_cell_length(mut self, cell_length: f64) -> Self {
        self.cell_length = cell_length;
        for lane in &mut self.lanes {
            lane.capacity = ((lane.length / cell_length).floor() as u32).max(1);
        }
        self
    }

    pub fn cell_length(&self) -> f64 {
        self.cell_length
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    #[inline]
    pub fn node(&self, i: NodeIdx) -> &Intersection {
        &self.intersections[i.index()]
    }

    #[inline]
    pub fn road(&self, r: RoadIdx) -> &Road {
        &self.roads[r.index()]
    }

    #[inline]
    pub fn lane(&self, l: LaneIdx) -> &Lane {
        &self.lanes[l.index()]
    }

    pub fn node_idx(&self, id: &str) -> Result<NodeIdx, NetworkError> {
        self.node_ids
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownIntersection(id.to_string()))
    }

    pub fn road_idx(&self, id: &str) -> Option<RoadIdx> {
        self.road_ids.get(id).copied()
    }

    pub fn lane_idx(&self, id: &str) -> Result<LaneIdx, NetworkError> {
        self.lane_ids
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownLane(id.to_string()))
    }

    /// Non-virtual intersections in index order.
    pub fn controlled(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.intersections
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_virtual)
            .map(|(k, _)| NodeIdx(k as u32))
    }

    /// Incoming lane of `i` on approach `side` performing `m`.
    pub fn movement_lane(&self, i: NodeIdx, side: Direction, m: Movement) -> Option<LaneIdx> {
        let road = self.node(i).approach[side.index()]?;
        self.road(road)
            .lanes
            .iter()
            .copied()
            .find(|l| self.lane(*l).movement == m)
    }

    /// Lanes given green by `p`: its two movement lanes (where present) plus
    /// every right-turn lane, which is never stopped.
    pub fn phase_allowed_lanes(
        &self,
        i: NodeIdx,
        p: PhaseId,
    ) -> Result<BTreeSet<LaneIdx>, NetworkError> {
        let node = self.node(i);
        if node.is_virtual {
            return Err(NetworkError::VirtualIntersection(node.id.clone()));
        }
        let mut out: BTreeSet<LaneIdx> = self.phase_lanes(i, p).collect();
        out.extend(self.right_turn_lanes(i));
        Ok(out)
    }

    /// Controlled (non-right) lanes released by `p`.
    pub fn phase_lanes(&self, i: NodeIdx, p: PhaseId) -> impl Iterator<Item = LaneIdx> + '_ {
        let (sides, m) = p.movements();
        sides
            .into_iter()
            .filter_map(move |s| self.movement_lane(i, s, m))
    }

    pub fn right_turn_lanes(&self, i: NodeIdx) -> impl Iterator<Item = LaneIdx> + '_ {
        self.node(i)
            .incoming
            .iter()
            .copied()
            .filter(|l| self.lane(*l).movement == Movement::Right)
    }

    /// Whether lane `l` (incoming to `i`) is released by `p`; right turns always are.
    pub fn phase_allows(&self, p: PhaseId, l: LaneIdx) -> bool {
        let lane = self.lane(l);
        if lane.movement == Movement::Right {
            return true;
        }
        let (sides, m) = p.movements();
        lane.movement == m && sides.contains(&lane.side)
    }

    /// One-hop neighbours in N, E, S, W order, ties broken by id.
    pub fn neighbors(&self, i: NodeIdx, include_boundary: bool) -> &[Neighbor] {
        if include_boundary {
            &self.boundary_neighbors[i.index()]
        } else {
            &self.neighbors[i.index()]
        }
    }

    /// Lanes of `i`'s non-virtual neighbours that interact with `i`: the
    /// receiving lanes of roads `i -> j` and the lanes at `j` feeding road `j -> i`.
    pub fn neighbor_scope(&self, i: NodeIdx) -> Vec<(NodeIdx, LaneRelation, LaneIdx)> {
        let mut out = Vec::new();
        for nb in self.neighbors(i, false) {
            let mut receivers = nb.lanes_out.clone();
            receivers.sort_by_key(|l| self.lane_order_key(*l));
            out.extend(
                receivers
                    .into_iter()
                    .map(|l| (nb.node, LaneRelation::Receiver, l)),
            );
            let feeds_i: BTreeSet<RoadIdx> =
                nb.lanes_in.iter().map(|l| self.lane(*l).road).collect();
            let mut feeders: Vec<LaneIdx> = self
                .node(nb.node)
                .incoming
                .iter()
                .copied()
                .filter(|l| {
                    self.lane(*l)
                        .downstream
                        .is_some_and(|d| feeds_i.contains(&d))
                })
                .collect();
            feeders.sort_by_key(|l| self.lane_order_key(*l));
            out.extend(
                feeders
                    .into_iter()
                    .map(|l| (nb.node, LaneRelation::Feeder, l)),
            );
        }
        out
    }

    /// Sort key: approach side, then movement, then id.
    pub fn lane_order_key(&self, l: LaneIdx) -> (Direction, Movement, LaneIdx) {
        let lane = self.lane(l);
        (lane.side, lane.movement, l)
    }

    /// Incoming lanes of `i` and of all its non-virtual neighbours.
    pub fn queue_scope(&self, i: NodeIdx, include_self: bool) -> Vec<LaneIdx> {
        let mut set = BTreeSet::new();
        if include_self {
            set.extend(self.node(i).incoming.iter().copied());
        }
        for nb in self.neighbors(i, false) {
            set.extend(self.node(nb.node).incoming.iter().copied());
        }
        set.into_iter().collect()
    }
}

/// Role of a neighbour-scope lane relative to the assigned intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneRelation {
    /// Downstream lane receiving traffic released by the assigned intersection.
    Receiver,
    /// Upstream lane at a neighbour that discharges into the assigned intersection.
    Feeder,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::grid;

    #[test]
    fn exit_sides_follow_turn_geometry() {
        // Arriving from the east means heading west.
        assert_eq!(Direction::East.exit_for(Movement::Through), Direction::West);
        assert_eq!(Direction::East.exit_for(Movement::Left), Direction::South);
        assert_eq!(Direction::East.exit_for(Movement::Right), Direction::North);
        assert_eq!(Direction::South.exit_for(Movement::Left), Direction::West);
        for s in Direction::ALL {
            for m in Movement::ALL {
                assert_eq!(s.movement_to(s.exit_for(m)), Some(m));
            }
        }
    }

    #[test]
    fn phase_parse_is_case_insensitive() {
        assert_eq!("ntst".parse::<PhaseId>().unwrap(), PhaseId::NTST);
        assert_eq!(" ElWl ".parse::<PhaseId>().unwrap(), PhaseId::ELWL);
        assert!("NSLT".parse::<PhaseId>().is_err());
    }

    #[test]
    fn etwt_allows_east_west_through_and_all_rights() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let i = net.node_idx("intersection_1_1").unwrap();
        let allowed = net.phase_allowed_lanes(i, PhaseId::ETWT).unwrap();
        assert_eq!(allowed.len(), 6);
        let through: BTreeSet<_> = allowed
            .iter()
            .filter(|l| net.lane(**l).movement == Movement::Through)
            .map(|l| net.lane(*l).side)
            .collect();
        assert_eq!(through, BTreeSet::from([Direction::East, Direction::West]));
        assert_eq!(
            allowed
                .iter()
                .filter(|l| net.lane(**l).movement == Movement::Right)
                .count(),
            4
        );
    }

    #[test]
    fn nlsl_allows_north_south_left() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let i = net.node_idx("intersection_1_1").unwrap();
        let allowed = net.phase_allowed_lanes(i, PhaseId::NLSL).unwrap();
        let lefts: BTreeSet<_> = allowed
            .iter()
            .filter(|l| net.lane(**l).movement == Movement::Left)
            .map(|l| net.lane(*l).side)
            .collect();
        assert_eq!(lefts, BTreeSet::from([Direction::North, Direction::South]));
    }

    #[test]
    fn virtual_intersection_has_no_phase() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let v = net.node_idx("intersection_0_1").unwrap();
        assert!(matches!(
            net.phase_allowed_lanes(v, PhaseId::ETWT),
            Err(NetworkError::VirtualIntersection(_))
        ));
    }

    #[test]
    fn three_way_intersection_skips_missing_approach() {
        let net = RoadNetwork::build(
            vec![
                IntersectionSpec {
                    id: "c".into(),
                    position: (0.0, 0.0),
                    is_virtual: false,
                },
                IntersectionSpec {
                    id: "e".into(),
                    position: (300.0, 0.0),
                    is_virtual: true,
                },
                IntersectionSpec {
                    id: "w".into(),
                    position: (-300.0, 0.0),
                    is_virtual: true,
                },
                IntersectionSpec {
                    id: "s".into(),
                    position: (0.0, -300.0),
                    is_virtual: true,
                },
            ],
            ["e", "w", "s"]
                .iter()
                .flat_map(|o| {
                    let lanes = vec![Movement::Left, Movement::Through, Movement::Right];
                    [
                        RoadSpec {
                            id: format!("{o}_in"),
                            from: o.to_string(),
                            to: "c".into(),
                            length: 300.0,
                            max_speed: 10.0,
                            lanes: lanes.clone(),
                        },
                        RoadSpec {
                            id: format!("{o}_out"),
                            from: "c".into(),
                            to: o.to_string(),
                            length: 300.0,
                            max_speed: 10.0,
                            lanes,
                        },
                    ]
                })
                .collect(),
            DEFAULT_CELL_LENGTH,
        )
        .unwrap();
        let c = net.node_idx("c").unwrap();
        assert_eq!(net.phase_lanes(c, PhaseId::ETWT).count(), 2);
        assert_eq!(net.phase_lanes(c, PhaseId::NTST).count(), 1);
        assert_eq!(net.phase_allowed_lanes(c, PhaseId::NTST).unwrap().len(), 4);
    }

    #[test]
    fn grid_neighbors_follow_compass_order() {
        let net = grid(3, 3, 300.0, 300.0, 10.0).build().unwrap();
        let center = net.node_idx("intersection_2_2").unwrap();
        let sides: Vec<_> = net
            .neighbors(center, false)
            .iter()
            .map(|n| n.side)
            .collect();
        assert_eq!(sides, Direction::ALL.to_vec());
        let corner = net.node_idx("intersection_1_1").unwrap();
        assert_eq!(net.neighbors(corner, false).len(), 2);
        assert_eq!(net.neighbors(corner, true).len(), 4);

        let toy = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let only = toy.node_idx("intersection_1_1").unwrap();
        assert!(toy.neighbors(only, false).is_empty());
    }

    #[test]
    fn capacity_uses_cell_length() {
        let net = grid(1, 1, 300.0, 100.0, 10.0).build().unwrap();
        let caps: BTreeSet<u32> = net.lanes().iter().map(|l| l.capacity).collect();
        assert_eq!(caps, BTreeSet::from([13, 40]));
    }

    #[test]
    fn downstream_road_matches_movement() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let i = net.node_idx("intersection_1_1").unwrap();
        let east_through = net
            .movement_lane(i, Direction::East, Movement::Through)
            .unwrap();
        let down = net.lane(east_through).downstream.unwrap();
        let west = net.node(i).exit[Direction::West.index()].unwrap();
        assert_eq!(down, west);
    }
}
