//! Point-queue traffic dynamics.
//!
//! Vehicles travel their lane at free-flow speed, join a FIFO queue at the
//! stopline and discharge at saturation flow while their movement has green
//! and the next lane on their route has room. One call to [`SimState::step`]
//! advances the clock by one tick in this order: expired greens are renewed,
//! queued time accrues, arrivals are injected, moving vehicles advance,
//! queues discharge, signal timers advance.

pub mod flow;
pub mod run;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LaneIdx, NodeIdx, PhaseId, RoadNetwork};
use crate::util::EPS;
use flow::{FlowPlan, FlowSpec};

pub use run::{run, Episode, EpisodeTrace, MetricsReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("intersection {intersection} is not at a decision boundary at t={t}")]
    NotAtBoundary { intersection: String, t: f64 },
    #[error("intersection {0} is virtual and has no signal")]
    VirtualIntersection(String),
    #[error("flow plan does not match the network: {0}")]
    PlanMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub tick: f64,
    pub green: f64,
    pub yellow: f64,
    pub all_red: f64,
    pub saturation_headway: f64,
    pub vehicle_length: f64,
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick: 1.0,
            green: 30.0,
            yellow: 3.0,
            all_red: 2.0,
            saturation_headway: 2.0,
            vehicle_length: 5.0,
            min_gap: 2.5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let named = [
            ("tick", self.tick),
            ("green", self.green),
            ("yellow", self.yellow),
            ("all_red", self.all_red),
            ("saturation_headway", self.saturation_headway),
            ("vehicle_length", self.vehicle_length),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
            return Err(SimError::InvalidConfig(
                "min_gap must be non-negative".into(),
            ));
        }
        for (name, v) in [
            ("green", self.green),
            ("yellow", self.yellow),
            ("all_red", self.all_red),
        ] {
            let n = (v / self.tick).round();
            if (n * self.tick - v).abs() > 1e-6 {
                return Err(SimError::InvalidConfig(format!(
                    "tick does not divide {name}"
                )));
            }
        }
        Ok(())
    }

    pub fn cell_length(&self) -> f64 {
        self.vehicle_length + self.min_gap
    }

    fn ticks(&self, seconds: f64) -> u32 {
        (seconds / self.tick).round() as u32
    }

    /// Seconds between two decisions when the phase is kept.
    pub fn hold_interval(&self) -> f64 {
        self.green
    }

    /// Seconds between two decisions when the phase changes.
    pub fn change_interval(&self) -> f64 {
        self.green + self.yellow + self.all_red
    }

    /// Most vehicles one lane can release during a full green.
    pub fn green_discharge_cap(&self) -> u32 {
        (self.green / self.saturation_headway + EPS).floor() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleStatus {
    /// Scheduled but held at the network edge because the entry lane is full.
    Waiting,
    Moving,
    Queued,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub route: u32,
    pub lane_index: u16,
    pub distance_to_stopline: f64,
    pub status: VehicleStatus,
    pub enter_time: f64,
    pub exit_time: Option<f64>,
    pub queued_seconds: f64,
    pub queue_join_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Green,
    Yellow,
    AllRed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalState {
    /// Phase currently green, or the one the intergreen leads into.
    pub phase: PhaseId,
    pub stage: Stage,
    pub remaining_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct LaneState {
    moving: Vec<u32>,
    queue: VecDeque<u32>,
    backlog: VecDeque<u32>,
    credit: f64,
}

impl LaneState {
    fn occupancy(&self) -> usize {
        self.moving.len() + self.queue.len()
    }
}

/// Full simulation snapshot. Cloning it (see [`SimState::fork`]) yields an
/// independent copy; the flow plan and lane capacities are shared read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    ticks: u64,
    tick: f64,
    cfg: SimConfig,
    vehicles: Vec<Vehicle>,
    lanes: Vec<LaneState>,
    signals: Vec<Option<SignalState>>,
    plan: Arc<FlowPlan>,
    capacity: Arc<Vec<u32>>,
    next_arrival: usize,
    finished: u64,
    road_entries: Vec<u64>,
    finished_travel: f64,
    finished_wait: f64,
}

impl SimState {
    pub fn new(net: &RoadNetwork, cfg: &SimConfig, flows: &FlowSpec) -> Result<Self, SimError> {
        cfg.validate()?;
        flows
            .validate(net)
            .map_err(|e| SimError::PlanMismatch(e.to_string()))?;
        let plan = flows.compile(net, cfg.tick);
        Self::with_plan(net, cfg, Arc::new(plan))
    }

    /// Start from an already compiled plan (shared between many episodes).
    pub fn with_plan(
        net: &RoadNetwork,
        cfg: &SimConfig,
        plan: Arc<FlowPlan>,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let n_lanes = net.lanes().len();
        if plan.routes.iter().flatten().any(|l| l.index() >= n_lanes) {
            return Err(SimError::PlanMismatch("route lane out of range".into()));
        }
        let cell = cfg.cell_length();
        let capacity = net
            .lanes()
            .iter()
            .map(|l| ((l.length / cell + EPS).floor() as u32).max(1))
            .collect();
        let signals = net
            .intersections()
            .iter()
            .map(|n| {
                (!n.is_virtual).then_some(SignalState {
                    phase: PhaseId::ETWT,
                    stage: Stage::Green,
                    remaining_ticks: 0,
                })
            })
            .collect();
        Ok(SimState {
            ticks: 0,
            tick: cfg.tick,
            cfg: cfg.clone(),
            vehicles: Vec::new(),
            lanes: vec![LaneState::default(); n_lanes],
            signals,
            plan,
            capacity: Arc::new(capacity),
            next_arrival: 0,
            finished: 0,
            road_entries: vec![0; net.roads().len()],
            finished_travel: 0.0,
            finished_wait: 0.0,
        })
    }

    /// Independent copy for what-if rollouts.
    pub fn fork(&self) -> SimState {
        self.clone()
    }

    pub fn clock(&self) -> f64 {
        self.ticks as f64 * self.tick
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn cell_length(&self) -> f64 {
        self.cfg.cell_length()
    }

    pub fn plan(&self) -> &FlowPlan {
        &self.plan
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn route_of(&self, v: &Vehicle) -> &[LaneIdx] {
        &self.plan.routes[v.route as usize]
    }

    pub fn capacity(&self, l: LaneIdx) -> u32 {
        self.capacity[l.index()]
    }

    pub fn queue(&self, l: LaneIdx) -> impl Iterator<Item = &Vehicle> + '_ {
        self.lanes[l.index()]
            .queue
            .iter()
            .map(|id| &self.vehicles[*id as usize])
    }

    pub fn queue_len(&self, l: LaneIdx) -> usize {
        self.lanes[l.index()].queue.len()
    }

    pub fn moving_len(&self, l: LaneIdx) -> usize {
        self.lanes[l.index()].moving.len()
    }

    pub fn backlog_len(&self, l: LaneIdx) -> usize {
        self.lanes[l.index()].backlog.len()
    }

    /// Moving plus queued vehicles; entry is refused once this reaches capacity.
    pub fn occupancy(&self, l: LaneIdx) -> usize {
        self.lanes[l.index()].occupancy()
    }

    pub fn signal(&self, i: NodeIdx) -> Option<&SignalState> {
        self.signals[i.index()].as_ref()
    }

    pub fn current_phase(&self, i: NodeIdx) -> Option<PhaseId> {
        self.signal(i).map(|s| s.phase)
    }

    pub fn at_decision_boundary(&self, i: NodeIdx) -> bool {
        matches!(
            self.signal(i),
            Some(SignalState {
                stage: Stage::Green,
                remaining_ticks: 0,
                ..
            })
        )
    }

    /// Controlled intersections currently waiting for a decision, in index order.
    pub fn boundary_nodes(&self) -> Vec<NodeIdx> {
        (0..self.signals.len())
            .map(|k| NodeIdx(k as u32))
            .filter(|i| self.at_decision_boundary(*i))
            .collect()
    }

    pub fn injected(&self) -> u64 {
        self.vehicles.len() as u64
    }

    pub fn finished(&self) -> u64 {
        self.finished
    }

    /// Vehicles on a lane or held at an entry, counted from the lane tables.
    pub fn in_network(&self) -> u64 {
        self.lanes
            .iter()
            .map(|l| (l.moving.len() + l.queue.len() + l.backlog.len()) as u64)
            .sum()
    }

    /// Vehicles that have entered each road so far (injections included).
    pub fn road_entries(&self) -> &[u64] {
        &self.road_entries
    }

    pub fn total_queue(&self, lanes: &[LaneIdx]) -> usize {
        lanes.iter().map(|l| self.queue_len(*l)).sum()
    }

    /// Running sums over finished vehicles: travel seconds and queued seconds.
    pub fn finished_totals(&self) -> (f64, f64) {
        (self.finished_travel, self.finished_wait)
    }

    pub fn pending_arrivals(&self) -> usize {
        self.plan.arrivals.len() - self.next_arrival
    }

    /// Choose the next phase at a decision boundary. Keeping the phase renews
    /// green; changing it inserts yellow and all-red first.
    pub fn set_phase(&mut self, net: &RoadNetwork, i: NodeIdx, p: PhaseId) -> Result<(), SimError> {
        let clock = self.clock();
        let cfg = &self.cfg;
        let Some(sig) = self.signals[i.index()].as_mut() else {
            return Err(SimError::VirtualIntersection(net.node(i).id.clone()));
        };
        if !(sig.stage == Stage::Green && sig.remaining_ticks == 0) {
            return Err(SimError::NotAtBoundary {
                intersection: net.node(i).id.clone(),
                t: clock,
            });
        }
        *sig = if sig.phase == p {
            SignalState {
                phase: p,
                stage: Stage::Green,
                remaining_ticks: cfg.ticks(cfg.green),
            }
        } else {
            SignalState {
                phase: p,
                stage: Stage::Yellow,
                remaining_ticks: cfg.ticks(cfg.yellow),
            }
        };
        Ok(())
    }

    fn lane_allowed(&self, net: &RoadNetwork, l: LaneIdx) -> bool {
        let lane = net.lane(l);
        match &self.signals[lane.to.index()] {
            None => true,
            Some(sig) => {
                lane.movement == crate::network::Movement::Right
                    || (sig.stage == Stage::Green && net.phase_allows(sig.phase, l))
            }
        }
    }

    pub fn step(&mut self, net: &RoadNetwork) {
        let t = self.clock();
        let tick = self.tick;
        let green_ticks = self.cfg.ticks(self.cfg.green);

        for sig in self.signals.iter_mut().flatten() {
            if sig.stage == Stage::Green && sig.remaining_ticks == 0 {
                sig.remaining_ticks = green_ticks;
            }
        }

        // Vehicles queued at the start of the tick wait through it, including
        // any that discharge at its end.
        for lane in &self.lanes {
            for id in &lane.queue {
                self.vehicles[*id as usize].queued_seconds += tick;
            }
        }

        self.inject(net, t);
        self.advance(net, t);
        self.discharge(net);

        let all_red = self.cfg.ticks(self.cfg.all_red);
        for sig in self.signals.iter_mut().flatten() {
            sig.remaining_ticks = sig.remaining_ticks.saturating_sub(1);
            if sig.remaining_ticks == 0 {
                match sig.stage {
                    Stage::Yellow => {
                        sig.stage = Stage::AllRed;
                        sig.remaining_ticks = all_red;
                    }
                    Stage::AllRed => {
                        sig.stage = Stage::Green;
                        sig.remaining_ticks = green_ticks;
                    }
                    Stage::Green => {}
                }
            }
        }
        self.ticks += 1;
    }

    pub fn step_n(&mut self, net: &RoadNetwork, n: u64) {
        for _ in 0..n {
            self.step(net);
        }
    }

    fn inject(&mut self, net: &RoadNetwork, t: f64) {
        while let Some(&(time, route)) = self.plan.arrivals.get(self.next_arrival) {
            if time > t + EPS {
                break;
            }
            self.next_arrival += 1;
            let id = self.vehicles.len() as u32;
            let first = self.plan.routes[route as usize][0];
            self.vehicles.push(Vehicle {
                id,
                route,
                lane_index: 0,
                distance_to_stopline: net.lane(first).length,
                status: VehicleStatus::Waiting,
                enter_time: time,
                exit_time: None,
                queued_seconds: 0.0,
                queue_join_time: 0.0,
            });
            self.lanes[first.index()].backlog.push_back(id);
        }
        // Admit held vehicles wherever there is room, oldest first per lane.
        for k in 0..self.lanes.len() {
            while !self.lanes[k].backlog.is_empty()
                && self.lanes[k].occupancy() < self.capacity[k] as usize
            {
                let id = self.lanes[k].backlog.pop_front().expect("non-empty");
                let v = &mut self.vehicles[id as usize];
                v.status = VehicleStatus::Moving;
                v.distance_to_stopline = net.lanes()[k].length;
                self.lanes[k].moving.push(id);
                self.road_entries[net.lanes()[k].road.index()] += 1;
            }
        }
    }

    fn advance(&mut self, net: &RoadNetwork, t: f64) {
        let tick = self.tick;
        for k in 0..self.lanes.len() {
            if self.lanes[k].moving.is_empty() {
                continue;
            }
            let lane = &net.lanes()[k];
            let step = lane.max_speed * tick;
            let moving = std::mem::take(&mut self.lanes[k].moving);
            let mut still = Vec::with_capacity(moving.len());
            for id in moving {
                let v = &mut self.vehicles[id as usize];
                v.distance_to_stopline -= step;
                if v.distance_to_stopline > EPS {
                    still.push(id);
                    continue;
                }
                v.distance_to_stopline = 0.0;
                let route_len = self.plan.routes[v.route as usize].len();
                if v.lane_index as usize + 1 == route_len {
                    v.status = VehicleStatus::Finished;
                    v.exit_time = Some(t + tick);
                    self.finished += 1;
                    self.finished_travel += t + tick - v.enter_time;
                    self.finished_wait += v.queued_seconds;
                } else {
                    v.status = VehicleStatus::Queued;
                    v.queue_join_time = t + tick;
                    self.lanes[k].queue.push_back(id);
                }
            }
            self.lanes[k].moving = still;
        }
    }

    fn discharge(&mut self, net: &RoadNetwork) {
        let rate = self.tick / self.cfg.saturation_headway;
        let cap = rate.max(1.0);
        for node in net.intersections() {
            for &l in &node.incoming {
                let k = l.index();
                if !self.lane_allowed(net, l) {
                    self.lanes[k].credit = 0.0;
                    continue;
                }
                let credit = (self.lanes[k].credit + rate).min(cap);
                self.lanes[k].credit = credit;
                while self.lanes[k].credit >= 1.0 - EPS {
                    let Some(&id) = self.lanes[k].queue.front() else {
                        break;
                    };
                    let v = &self.vehicles[id as usize];
                    let next = self.plan.routes[v.route as usize][v.lane_index as usize + 1];
                    let n = next.index();
                    if self.lanes[n].occupancy() >= self.capacity[n] as usize {
                        break;
                    }
                    self.lanes[k].queue.pop_front();
                    self.lanes[k].credit -= 1.0;
                    let v = &mut self.vehicles[id as usize];
                    v.lane_index += 1;
                    v.status = VehicleStatus::Moving;
                    v.distance_to_stopline = net.lane(next).length;
                    self.lanes[n].moving.push(id);
                    self.road_entries[net.lane(next).road.index()] += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Direction, IntersectionSpec, Movement, RoadSpec, DEFAULT_CELL_LENGTH};
    use crate::scenario::grid;
    use flow::FlowEntry;

    fn line_net(len: f64) -> RoadNetwork {
        // a -> c -> b, with c controlled.
        let n = |id: &str, x: f64, v: bool| IntersectionSpec {
            id: id.into(),
            position: (x, 0.0),
            is_virtual: v,
        };
        let r = |id: &str, from: &str, to: &str| RoadSpec {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length: len,
            max_speed: 10.0,
            lanes: vec![Movement::Through],
        };
        RoadNetwork::build(
            vec![n("a", -len, true), n("c", 0.0, false), n("b", len, true)],
            vec![r("ac", "a", "c"), r("cb", "c", "b")],
            DEFAULT_CELL_LENGTH,
        )
        .unwrap()
    }

    fn one_vehicle(route: &[&str]) -> FlowSpec {
        FlowSpec {
            entries: vec![FlowEntry {
                route: route.iter().map(|s| s.to_string()).collect(),
                start_time: 0.0,
                end_time: 0.0,
                interval: 1.0,
            }],
        }
    }

    #[test]
    fn empty_network_only_advances_clock() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let mut s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
        s.step_n(&net, 10);
        assert_eq!(s.clock(), 10.0);
        assert_eq!(s.injected(), 0);
    }

    #[test]
    fn free_flow_vehicle_finishes_at_length_over_speed() {
        let net = line_net(300.0);
        let mut s = SimState::new(&net, &SimConfig::default(), &one_vehicle(&["cb_0"])).unwrap();
        s.step_n(&net, 40);
        let v = &s.vehicles()[0];
        assert_eq!(v.status, VehicleStatus::Finished);
        assert_eq!(v.exit_time, Some(300.0 / 10.0));
        assert_eq!(v.queued_seconds, 0.0);
    }

    #[test]
    fn ten_queued_vehicles_clear_in_twenty_seconds() {
        let net = line_net(300.0);
        let flows = FlowSpec {
            entries: vec![
                FlowEntry {
                    route: vec!["ac_0".into(), "cb_0".into()],
                    start_time: 0.0,
                    end_time: 0.0,
                    interval: 1.0,
                };
                10
            ],
        };
        let cfg = SimConfig::default();
        let mut s = SimState::new(&net, &cfg, &flows).unwrap();
        let c = net.node_idx("c").unwrap();
        let ac = net.lane_idx("ac_0").unwrap();
        // Hold red (NTST) until all ten have queued.
        s.set_phase(&net, c, PhaseId::NTST).unwrap();
        s.step_n(&net, 35);
        assert_eq!(s.queue_len(ac), 10);
        assert!(s.at_decision_boundary(c));
        s.set_phase(&net, c, PhaseId::ETWT).unwrap();
        // Yellow then all-red; green from t = 40.
        s.step_n(&net, 5);
        let mut leave = Vec::new();
        for _ in 0..30 {
            let before = s.queue_len(ac);
            s.step(&net);
            if s.queue_len(ac) < before {
                leave.push(s.clock() - 40.0);
            }
        }
        let expected: Vec<f64> = (1..=10).map(|k| 2.0 * k as f64).collect();
        assert_eq!(leave, expected);
        assert!(leave.len() as u32 <= cfg.green_discharge_cap());
    }

    #[test]
    fn decision_intervals_are_thirty_and_thirty_five() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let i = net.node_idx("intersection_1_1").unwrap();
        let mut s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
        let until_boundary = |s: &mut SimState| {
            let start = s.clock();
            s.step(&net);
            while !s.at_decision_boundary(i) {
                s.step(&net);
            }
            s.clock() - start
        };
        s.set_phase(&net, i, PhaseId::ETWT).unwrap();
        assert_eq!(until_boundary(&mut s), 30.0);
        s.set_phase(&net, i, PhaseId::NTST).unwrap();
        assert_eq!(until_boundary(&mut s), 35.0);
        assert!(s.set_phase(&net, i, PhaseId::NTST).is_ok());
        s.step(&net);
        assert!(matches!(
            s.set_phase(&net, i, PhaseId::ETWT),
            Err(SimError::NotAtBoundary { .. })
        ));
        let v = net.node_idx("intersection_0_1").unwrap();
        assert!(matches!(
            s.set_phase(&net, v, PhaseId::ETWT),
            Err(SimError::VirtualIntersection(_))
        ));
    }

    #[test]
    fn no_discharge_during_intergreen_except_right_turns() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let i = net.node_idx("intersection_1_1").unwrap();
        let east_through = net
            .movement_lane(i, Direction::East, Movement::Through)
            .unwrap();
        let s0 = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
        let mut s = s0.fork();
        s.set_phase(&net, i, PhaseId::NTST).unwrap();
        assert!(!s.lane_allowed(&net, east_through));
        let right = net.right_turn_lanes(i).next().unwrap();
        assert!(s.lane_allowed(&net, right));
    }

    #[test]
    fn full_lane_blocks_entry() {
        // A 15 m lane holds two vehicles.
        let net = line_net(15.0);
        let flows = FlowSpec {
            entries: vec![
                FlowEntry {
                    route: vec!["ac_0".into(), "cb_0".into()],
                    start_time: 0.0,
                    end_time: 0.0,
                    interval: 1.0,
                };
                5
            ],
        };
        let mut s = SimState::new(&net, &SimConfig::default(), &flows).unwrap();
        let c = net.node_idx("c").unwrap();
        s.set_phase(&net, c, PhaseId::NTST).unwrap();
        s.step_n(&net, 5);
        let ac = net.lane_idx("ac_0").unwrap();
        assert_eq!(s.occupancy(ac), 2);
        assert_eq!(s.backlog_len(ac), 3);
        assert_eq!(s.injected(), s.finished() + s.in_network());
    }

    #[test]
    fn fork_is_independent() {
        let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
        let flows = crate::scenario::named("toy1x1").unwrap().flows;
        let mut parent = SimState::new(&net, &SimConfig::default(), &flows).unwrap();
        parent.step_n(&net, 50);
        let before = serde_json::to_vec(&parent).unwrap();
        let mut child = parent.fork();
        child.step_n(&net, 100);
        assert_eq!(serde_json::to_vec(&parent).unwrap(), before);
        assert_eq!(parent.clock(), 50.0);

        let empty = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
        assert_eq!(
            serde_json::to_vec(&empty.fork()).unwrap(),
            serde_json::to_vec(&empty).unwrap()
        );
    }

    #[test]
    fn config_rejects_nondividing_tick() {
        let cfg = SimConfig {
            tick: 4.0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
