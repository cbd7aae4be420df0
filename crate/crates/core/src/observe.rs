//! Lane observations, the neighbour view filtered by occupancy, the local
//! road graph and the decision history.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::network::{Direction, LaneIdx, LaneRelation, Movement, NodeIdx, PhaseId, RoadNetwork};
use crate::sim::SimState;
use crate::util::EPS;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneObservation {
    pub n_queue: u32,
    pub n_move: u32,
    /// Mean seconds the queued vehicles have spent in this queue.
    pub tau: f64,
    /// Occupied share of the lane, clamped to 1.
    pub rho: f64,
}

impl LaneObservation {
    pub const EMPTY: LaneObservation = LaneObservation {
        n_queue: 0,
        n_move: 0,
        tau: 0.0,
        rho: 0.0,
    };

    pub fn from_counts(n_queue: u32, n_move: u32, tau: f64, length: f64, cell_length: f64) -> Self {
        let rho = ((n_queue + n_move) as f64 * cell_length / length).min(1.0);
        LaneObservation {
            n_queue,
            n_move,
            tau,
            rho,
        }
    }
}

/// How a lane row relates to the observing intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Incoming,
    Outgoing,
    Receiver,
    Feeder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRow {
    pub lane: String,
    /// Intersection whose stopline this lane reaches.
    pub node: String,
    /// Approach side at `node` for incoming rows; exit side at the observer for outgoing rows.
    pub side: Direction,
    pub movement: Movement,
    pub kind: RowKind,
    pub capacity: u32,
    #[serde(flatten)]
    pub obs: LaneObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub intersection: String,
    pub timestamp: f64,
    pub alpha: f64,
    /// Every incoming then outgoing lane of the intersection, unfiltered.
    pub local: Vec<LaneRow>,
    /// Neighbour-scope lanes with `rho >= alpha`.
    pub neighbor: Vec<LaneRow>,
}

impl ObservationSet {
    /// The same snapshot seen through a stricter (or equal) threshold.
    pub fn filtered(&self, alpha: f64) -> ObservationSet {
        ObservationSet {
            intersection: self.intersection.clone(),
            timestamp: self.timestamp,
            alpha,
            local: self.local.clone(),
            neighbor: self
                .neighbor
                .iter()
                .filter(|r| passes(r.obs.rho, alpha))
                .cloned()
                .collect(),
        }
    }

    pub fn local_row(&self, lane: &str) -> Option<&LaneRow> {
        self.local.iter().find(|r| r.lane == lane)
    }

    pub fn incoming(&self) -> impl Iterator<Item = &LaneRow> {
        self.local.iter().filter(|r| r.kind == RowKind::Incoming)
    }

    pub fn rows(&self) -> impl Iterator<Item = &LaneRow> {
        self.local.iter().chain(self.neighbor.iter())
    }

    /// Short stable hash of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_json(&serde_json::to_vec(self).expect("observation serializes"))
    }
}

pub(crate) fn digest_json(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn passes(rho: f64, alpha: f64) -> bool {
    rho + EPS >= alpha
}

pub fn observe_lane(state: &SimState, net: &RoadNetwork, lane: LaneIdx) -> LaneObservation {
    let clock = state.clock();
    let n_queue = state.queue_len(lane) as u32;
    let tau = if n_queue == 0 {
        0.0
    } else {
        state
            .queue(lane)
            .map(|v| clock - v.queue_join_time)
            .sum::<f64>()
            / n_queue as f64
    };
    LaneObservation::from_counts(
        n_queue,
        state.moving_len(lane) as u32,
        tau,
        net.lane(lane).length,
        state.cell_length(),
    )
}

fn row(
    state: &SimState,
    net: &RoadNetwork,
    lane: LaneIdx,
    kind: RowKind,
    side: Direction,
) -> LaneRow {
    let l = net.lane(lane);
    LaneRow {
        lane: l.id.clone(),
        node: net.node(l.to).id.clone(),
        side,
        movement: l.movement,
        kind,
        capacity: state.capacity(lane),
        obs: observe_lane(state, net, lane),
    }
}

/// Observation of `i` with neighbour lanes filtered at `alpha`.
pub fn collect(state: &SimState, net: &RoadNetwork, i: NodeIdx, alpha: f64) -> ObservationSet {
    let node = net.node(i);
    let mut incoming = node.incoming.clone();
    incoming.sort_by_key(|l| net.lane_order_key(*l));
    let exit_side =
        |l: LaneIdx| Direction::between(node.position, net.node(net.lane(l).to).position);
    let mut outgoing = node.outgoing.clone();
    outgoing.sort_by_key(|l| (exit_side(*l), net.lane(*l).movement, *l));

    let mut local: Vec<LaneRow> = incoming
        .iter()
        .map(|l| row(state, net, *l, RowKind::Incoming, net.lane(*l).side))
        .collect();
    local.extend(
        outgoing
            .iter()
            .map(|l| row(state, net, *l, RowKind::Outgoing, exit_side(*l))),
    );

    let neighbor = net
        .neighbor_scope(i)
        .into_iter()
        .map(|(_, rel, l)| {
            let kind = match rel {
                LaneRelation::Receiver => RowKind::Receiver,
                LaneRelation::Feeder => RowKind::Feeder,
            };
            row(state, net, l, kind, net.lane(l).side)
        })
        .filter(|r| passes(r.obs.rho, alpha))
        .collect();

    ObservationSet {
        intersection: node.id.clone(),
        timestamp: state.clock(),
        alpha,
        local,
        neighbor,
    }
}

/// Number of critical neighbour lanes: those that passed the occupancy filter.
pub fn congestion_risk(obs: &ObservationSet) -> usize {
    obs.neighbor.len()
}

/// Reasoning depth chosen for a decision. `Baseline` marks decisions that
/// came from a fallback policy rather than the tiered reasoning path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    NoCoop,
    Simple,
    Complex,
    Baseline,
}

impl Tier {
    pub fn from_risk(n_c: usize) -> Tier {
        match n_c {
            0 => Tier::NoCoop,
            1 => Tier::Simple,
            _ => Tier::Complex,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::NoCoop => "no_coop",
            Tier::Simple => "simple",
            Tier::Complex => "complex",
            Tier::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub road: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    /// Side of the neighbour as seen from the observer.
    pub direction: Direction,
    pub movements: Vec<Movement>,
}

/// The observer and its one-hop controlled neighbours with the roads between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
}

pub fn local_graph(net: &RoadNetwork, i: NodeIdx) -> SpatioTemporalGraph {
    let mut nodes = vec![net.node(i).id.clone()];
    let mut edges = Vec::new();
    for nb in net.neighbors(i, false) {
        nodes.push(net.node(nb.node).id.clone());
        for lanes in [&nb.lanes_out, &nb.lanes_in] {
            let Some(first) = lanes.first() else { continue };
            let road = net.road(net.lane(*first).road);
            edges.push(GraphEdge {
                road: road.id.clone(),
                from: net.node(road.from).id.clone(),
                to: net.node(road.to).id.clone(),
                length: road.length,
                direction: nb.side,
                movements: road.lanes.iter().map(|l| net.lane(*l).movement).collect(),
            });
        }
    }
    SpatioTemporalGraph { nodes, edges }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub obs: ObservationSet,
    /// `(intersection, phase)` for the observer then its neighbours.
    pub phases: Vec<(String, PhaseId)>,
}

/// The last `window` decision-time snapshots of one intersection, oldest first.
/// Snapshots are stored unfiltered; [`HistoryBuffer::view`] applies the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    window: usize,
    entries: VecDeque<HistoryEntry>,
}

impl HistoryBuffer {
    pub fn new(window: usize) -> Self {
        HistoryBuffer {
            window,
            entries: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        if self.window == 0 {
            return;
        }
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    /// Last `window` entries, neighbour rows filtered at `alpha`.
    pub fn view(&self, window: usize, alpha: f64) -> Vec<HistoryEntry> {
        let skip = self.entries.len().saturating_sub(window);
        self.entries
            .iter()
            .skip(skip)
            .map(|e| HistoryEntry {
                obs: e.obs.filtered(alpha),
                phases: e.phases.clone(),
            })
            .collect()
    }
}

/// Current phases of `i` and its controlled neighbours.
pub fn phase_vector(state: &SimState, net: &RoadNetwork, i: NodeIdx) -> Vec<(String, PhaseId)> {
    std::iter::once(i)
        .chain(net.neighbors(i, false).iter().map(|n| n.node))
        .filter_map(|n| state.current_phase(n).map(|p| (net.node(n).id.clone(), p)))
        .collect()
}

/// Everything a controller sees at one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionView {
    pub obs: ObservationSet,
    pub graph: SpatioTemporalGraph,
    pub history: Vec<HistoryEntry>,
    pub n_c: usize,
    pub tier: Tier,
}

impl DecisionView {
    /// Build from an unfiltered snapshot and the stored history.
    pub fn new(
        full: &ObservationSet,
        graph: SpatioTemporalGraph,
        history: &HistoryBuffer,
        alpha: f64,
        window: usize,
    ) -> Self {
        let obs = full.filtered(alpha);
        let n_c = congestion_risk(&obs);
        DecisionView {
            obs,
            graph,
            history: history.view(window, alpha),
            n_c,
            tier: Tier::from_risk(n_c),
        }
    }
}
