//! Episode loop: steps the state, queries each controller at its decision
//! boundary and records a JSON-lines trace.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::flow::{FlowPlan, FlowSpec};
use super::{SimConfig, SimError, SimState, VehicleStatus};
use crate::control::{ControlError, Controller, ControllerConfig, Decision, DecisionContext};
use crate::network::{NodeIdx, PhaseId, RoadNetwork};
use crate::observe::{
    collect, local_graph, phase_vector, DecisionView, HistoryBuffer, HistoryEntry, ObservationSet,
    Tier, DEFAULT_ALPHA, DEFAULT_WINDOW,
};
use crate::util::{round2, ser_round2, ser_round2_opt};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no controller assigned to intersection {0}")]
    MissingController(String),
    #[error("controller at {intersection} failed at t={t}: {source}")]
    Controller {
        intersection: String,
        t: f64,
        #[source]
        source: ControlError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub duration: f64,
    pub alpha: f64,
    pub window: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            duration: 3600.0,
            alpha: DEFAULT_ALPHA,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Episode {
        duration: f64,
        tick: f64,
        alpha: f64,
        window: usize,
        intersections: usize,
        scheduled_vehicles: usize,
    },
    Decision {
        t: f64,
        intersection: String,
        phase: PhaseId,
        tier: Tier,
        n_c: usize,
        obs_digest: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        fallback: bool,
    },
    /// Vehicles that entered a road linking two controlled intersections.
    Crossings {
        road: String,
        from: String,
        to: String,
        length: f64,
        max_speed: f64,
        count: u64,
    },
    Vehicle {
        id: u32,
        origin: String,
        destination: String,
        #[serde(serialize_with = "ser_round2")]
        enter_time: f64,
        #[serde(serialize_with = "ser_round2_opt")]
        exit_time: Option<f64>,
        #[serde(serialize_with = "ser_round2")]
        queued_seconds: f64,
        status: VehicleStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<TraceRecord>,
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), RunError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, RunError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for (k, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|e| RunError::TraceParse {
                    line: k + 1,
                    message: e.to_string(),
                })?,
            );
        }
        Ok(EpisodeTrace { records })
    }

    pub fn duration(&self) -> Option<f64> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Episode { duration, .. } => Some(*duration),
            _ => None,
        })
    }

    pub fn decisions(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Decision { .. }))
    }
}

/// Deterministic episode summary (wall-clock timing lives in [`TimingReport`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "ser_round2")]
    pub duration: f64,
    pub vehicles_scheduled: u64,
    pub vehicles_entered: u64,
    pub vehicles_finished: u64,
    pub vehicles_in_network: u64,
    /// Absent when no vehicle entered.
    #[serde(serialize_with = "ser_round2_opt")]
    pub att: Option<f64>,
    #[serde(serialize_with = "ser_round2_opt")]
    pub awt: Option<f64>,
    pub decisions: u64,
    pub tier_counts: BTreeMap<Tier, u64>,
    pub fallbacks: u64,
    /// Mean queued vehicles over the incoming lanes of each intersection.
    pub mean_queue: BTreeMap<String, f64>,
    pub controllers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerTiming {
    pub decisions: u64,
    pub total_ms: f64,
    pub mean_ms: f64,
}

/// Wall-clock decision time per controller kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub controllers: BTreeMap<String, ControllerTiming>,
}

/// Passed to the decision hook for every decision, before it is applied.
pub struct DecisionEvent<'a> {
    pub state: &'a SimState,
    pub node: NodeIdx,
    /// Observation with every neighbour lane (no threshold).
    pub full: &'a ObservationSet,
    pub view: &'a DecisionView,
    pub history: &'a HistoryBuffer,
    pub decision: &'a Decision,
}

type Hook<'a> = Box<dyn FnMut(&DecisionEvent<'_>) + 'a>;

pub struct Episode<'a> {
    net: &'a RoadNetwork,
    state: SimState,
    opts: RunOptions,
    controllers: Vec<Option<(String, Box<dyn Controller>)>>,
    histories: Vec<HistoryBuffer>,
    trace: Vec<TraceRecord>,
    tier_counts: BTreeMap<Tier, u64>,
    fallbacks: u64,
    queue_sums: Vec<f64>,
    timing: BTreeMap<String, ControllerTiming>,
    hook: Option<Hook<'a>>,
}

impl<'a> Episode<'a> {
    /// `controllers` must cover every controlled intersection.
    pub fn new(
        net: &'a RoadNetwork,
        cfg: &SimConfig,
        plan: Arc<FlowPlan>,
        mut controllers: BTreeMap<NodeIdx, (String, Box<dyn Controller>)>,
        opts: RunOptions,
    ) -> Result<Self, RunError> {
        let state = SimState::with_plan(net, cfg, plan.clone())?;
        let mut slots: Vec<Option<(String, Box<dyn Controller>)>> = Vec::new();
        for k in 0..net.intersections().len() {
            let i = NodeIdx(k as u32);
            if net.node(i).is_virtual {
                slots.push(None);
                continue;
            }
            let c = controllers
                .remove(&i)
                .ok_or_else(|| RunError::MissingController(net.node(i).id.clone()))?;
            slots.push(Some(c));
        }
        let trace = vec![TraceRecord::Episode {
            duration: opts.duration,
            tick: cfg.tick,
            alpha: opts.alpha,
            window: opts.window,
            intersections: net.controlled().count(),
            scheduled_vehicles: plan.arrivals.len(),
        }];
        Ok(Episode {
            net,
            state,
            opts,
            controllers: slots,
            histories: vec![HistoryBuffer::new(opts.window); net.intersections().len()],
            trace,
            tier_counts: BTreeMap::new(),
            fallbacks: 0,
            queue_sums: vec![0.0; net.intersections().len()],
            timing: BTreeMap::new(),
            hook: None,
        })
    }

    /// Build controllers from a per-intersection config map.
    pub fn from_configs(
        net: &'a RoadNetwork,
        cfg: &SimConfig,
        plan: Arc<FlowPlan>,
        configs: &BTreeMap<NodeIdx, ControllerConfig>,
        opts: RunOptions,
    ) -> Result<Self, RunError> {
        let mut built = BTreeMap::new();
        for (i, c) in configs {
            let ctl = c.build().map_err(|source| RunError::Controller {
                intersection: net.node(*i).id.clone(),
                t: 0.0,
                source,
            })?;
            built.insert(*i, (c.label().to_string(), ctl));
        }
        Self::new(net, cfg, plan, built, opts)
    }

    pub fn on_decision(mut self, hook: impl FnMut(&DecisionEvent<'_>) + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    fn end_tick(&self) -> u64 {
        (self.opts.duration / self.state.config().tick).round() as u64
    }

    pub fn is_done(&self) -> bool {
        self.state.ticks() >= self.end_tick()
    }

    /// Decide at every pending boundary, then advance one tick.
    pub fn advance(&mut self) -> Result<(), RunError> {
        self.decide_pending()?;
        self.state.step(self.net);
        for i in self.net.controlled() {
            let q: usize = self
                .net
                .node(i)
                .incoming
                .iter()
                .map(|l| self.state.queue_len(*l))
                .sum();
            self.queue_sums[i.index()] += q as f64;
        }
        Ok(())
    }

    fn decide_pending(&mut self) -> Result<(), RunError> {
        let boundary = self.state.boundary_nodes();
        if boundary.is_empty() {
            return Ok(());
        }
        let net = self.net;
        let t = self.state.clock();
        let mut chosen = Vec::with_capacity(boundary.len());
        let mut snapshots = Vec::with_capacity(boundary.len());
        for &i in &boundary {
            let full = collect(&self.state, net, i, 0.0);
            let view = DecisionView::new(
                &full,
                local_graph(net, i),
                &self.histories[i.index()],
                self.opts.alpha,
                self.opts.window,
            );
            let (label, ctl) = self.controllers[i.index()]
                .as_mut()
                .expect("boundary nodes are controlled");
            let ctx = DecisionContext {
                net,
                state: &self.state,
                node: i,
                view: &view,
            };
            let started = Instant::now();
            let mut decision = ctl.decide(&ctx).map_err(|source| RunError::Controller {
                intersection: net.node(i).id.clone(),
                t,
                source,
            })?;
            if decision.latency_ms == 0.0 {
                decision.latency_ms = started.elapsed().as_secs_f64() * 1e3;
            }
            let timing = self.timing.entry(label.clone()).or_default();
            timing.decisions += 1;
            timing.total_ms += decision.latency_ms;
            if let Some(hook) = self.hook.as_mut() {
                hook(&DecisionEvent {
                    state: &self.state,
                    node: i,
                    full: &full,
                    view: &view,
                    history: &self.histories[i.index()],
                    decision: &decision,
                });
            }
            *self.tier_counts.entry(decision.tier).or_default() += 1;
            self.fallbacks += decision.fallback as u64;
            self.trace.push(TraceRecord::Decision {
                t,
                intersection: net.node(i).id.clone(),
                phase: decision.phase,
                tier: decision.tier,
                n_c: view.n_c,
                obs_digest: view.obs.digest(),
                fallback: decision.fallback,
            });
            chosen.push((i, decision.phase));
            snapshots.push((i, full));
        }
        for (i, p) in chosen {
            self.state.set_phase(net, i, p)?;
        }
        for (i, full) in snapshots {
            let phases = phase_vector(&self.state, net, i);
            self.histories[i.index()].push(HistoryEntry { obs: full, phases });
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<(MetricsReport, EpisodeTrace, TimingReport), RunError> {
        while !self.is_done() {
            self.advance()?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> (MetricsReport, EpisodeTrace, TimingReport) {
        let net = self.net;
        let s = &self.state;
        let duration = s.clock();
        let entries = s.road_entries();
        for (k, road) in net.roads().iter().enumerate() {
            if net.node(road.from).is_virtual || net.node(road.to).is_virtual {
                continue;
            }
            self.trace.push(TraceRecord::Crossings {
                road: road.id.clone(),
                from: net.node(road.from).id.clone(),
                to: net.node(road.to).id.clone(),
                length: road.length,
                max_speed: road.max_speed,
                count: entries[k],
            });
        }
        for v in s.vehicles() {
            let route = s.route_of(v);
            self.trace.push(TraceRecord::Vehicle {
                id: v.id,
                origin: net.lane(route[0]).id.clone(),
                destination: net.lane(*route.last().expect("non-empty route")).id.clone(),
                enter_time: v.enter_time,
                exit_time: v.exit_time,
                queued_seconds: v.queued_seconds,
                status: v.status,
            });
        }

        // Online totals: finished vehicles were summed as they left.
        let (mut travel, mut wait) = s.finished_totals();
        for v in s.vehicles().iter().filter(|v| v.exit_time.is_none()) {
            travel += duration - v.enter_time;
            wait += v.queued_seconds;
        }
        let n = s.injected();
        let ticks = s.ticks().max(1) as f64;
        let mean_queue = net
            .controlled()
            .map(|i| {
                (
                    net.node(i).id.clone(),
                    round2(self.queue_sums[i.index()] / ticks),
                )
            })
            .collect();
        let controllers = net
            .controlled()
            .map(|i| {
                let label = self.controllers[i.index()]
                    .as_ref()
                    .map(|c| c.0.clone())
                    .unwrap_or_default();
                (net.node(i).id.clone(), label)
            })
            .collect();
        let report = MetricsReport {
            duration,
            vehicles_scheduled: s.plan().arrivals.len() as u64,
            vehicles_entered: n,
            vehicles_finished: s.finished(),
            vehicles_in_network: s.in_network(),
            att: (n > 0).then(|| travel / n as f64),
            awt: (n > 0).then(|| wait / n as f64),
            decisions: self.tier_counts.values().sum(),
            tier_counts: self.tier_counts,
            fallbacks: self.fallbacks,
            mean_queue,
            controllers,
        };
        let mut timing = TimingReport {
            controllers: self.timing,
        };
        for t in timing.controllers.values_mut() {
            t.mean_ms = if t.decisions > 0 {
                t.total_ms / t.decisions as f64
            } else {
                0.0
            };
        }
        (
            report,
            EpisodeTrace {
                records: self.trace,
            },
            timing,
        )
    }
}

/// Run one episode with per-intersection controller configs.
pub fn run(
    net: &RoadNetwork,
    cfg: &SimConfig,
    flows: &FlowSpec,
    controllers: &BTreeMap<NodeIdx, ControllerConfig>,
    opts: RunOptions,
) -> Result<(MetricsReport, EpisodeTrace, TimingReport), RunError> {
    flows
        .validate(net)
        .map_err(|e| SimError::PlanMismatch(e.to_string()))?;
    let plan = Arc::new(flows.compile(net, cfg.tick));
    Episode::from_configs(net, cfg, plan, controllers, opts)?.run()
}

/// Same controller config at every controlled intersection.
pub fn uniform(
    net: &RoadNetwork,
    config: &ControllerConfig,
) -> BTreeMap<NodeIdx, ControllerConfig> {
    net.controlled().map(|i| (i, config.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{grid, named};

    #[test]
    fn empty_flows_report_zero_vehicles() {
        let net = grid(2, 2, 300.0, 300.0, 10.0).build().unwrap();
        let (m, trace, _) = run(
            &net,
            &SimConfig::default(),
            &FlowSpec::default(),
            &uniform(&net, &ControllerConfig::fixed_time()),
            RunOptions {
                duration: 300.0,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(m.vehicles_entered, 0);
        assert_eq!(m.att, None);
        // Fixed time always changes phase: a decision every 35 s from t = 0.
        assert_eq!(m.decisions, 4 * 9);
        assert_eq!(trace.decisions().count(), 36);
    }

    #[test]
    fn missing_controller_is_an_error() {
        let net = grid(2, 2, 300.0, 300.0, 10.0).build().unwrap();
        let mut configs = uniform(&net, &ControllerConfig::MaxPressure);
        configs.pop_first();
        let err = run(
            &net,
            &SimConfig::default(),
            &FlowSpec::default(),
            &configs,
            RunOptions::default(),
        );
        assert!(matches!(err, Err(RunError::MissingController(_))));
    }

    #[test]
    fn online_totals_match_vehicle_records() {
        let s = named("toy1x1").unwrap();
        let (m, trace, _) = run(
            &s.net,
            &SimConfig::default(),
            &s.flows,
            &uniform(&s.net, &ControllerConfig::MaxPressure),
            RunOptions {
                duration: 900.0,
                ..RunOptions::default()
            },
        )
        .unwrap();
        let mut travel = 0.0;
        let mut n = 0.0;
        for r in &trace.records {
            if let TraceRecord::Vehicle {
                enter_time,
                exit_time,
                ..
            } = r
            {
                travel += exit_time.unwrap_or(900.0) - enter_time;
                n += 1.0;
            }
        }
        assert!(n > 0.0);
        assert!((m.att.unwrap() - travel / n).abs() < 1e-9);
        let text = trace.to_jsonl();
        let back: Vec<TraceRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back.len(), trace.records.len());
    }
}
