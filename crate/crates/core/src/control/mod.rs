//! Signal controllers.
//!
//! Every controller sees the same [`DecisionContext`]: the frozen simulation
//! snapshot at the decision boundary plus the observation view built from it.
//! Fixed-time and max-pressure decisions are tagged [`Tier::Baseline`]; the
//! complexity-aware policy tags each decision with the tier its neighbour
//! congestion selected.

mod llm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LaneIdx, NodeIdx, PhaseId, RoadIdx, RoadNetwork};
use crate::observe::{DecisionView, ObservationSet, RowKind};
use crate::oracle::{self, NeighborPolicy, RolloutSpec};
use crate::prompting::EndpointConfig;
use crate::sim::SimState;
use crate::util::{first_argmax, first_argmin};

pub use crate::observe::Tier;
pub use llm::LlmController;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("lane {0} missing from the observation")]
    MissingLane(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub phase: PhaseId,
    pub tier: Tier,
    pub rationale_digest: String,
    /// Wall-clock milliseconds spent deciding; kept out of deterministic outputs.
    #[serde(skip)]
    pub latency_ms: f64,
    /// Set when the controller's own path failed and a fallback decided.
    #[serde(default)]
    pub fallback: bool,
}

impl Decision {
    pub fn new(phase: PhaseId, tier: Tier) -> Self {
        Decision {
            phase,
            tier,
            rationale_digest: String::new(),
            latency_ms: 0.0,
            fallback: false,
        }
    }
}

pub struct DecisionContext<'a> {
    pub net: &'a RoadNetwork,
    pub state: &'a SimState,
    pub node: NodeIdx,
    pub view: &'a DecisionView,
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, ControlError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    FixedTime {
        #[serde(default = "default_cycle")]
        cycle: Vec<PhaseId>,
    },
    MaxPressure,
    ComplexityAware {
        #[serde(default = "default_rollout_horizon")]
        rollout_horizon: usize,
        #[serde(default = "default_true")]
        include_self: bool,
    },
    Llm {
        endpoint: EndpointConfig,
        #[serde(default)]
        task: Option<String>,
        #[serde(default = "default_fallback")]
        fallback: Box<ControllerConfig>,
    },
}

fn default_cycle() -> Vec<PhaseId> {
    PhaseId::ALL.to_vec()
}

fn default_rollout_horizon() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_fallback() -> Box<ControllerConfig> {
    Box::new(ControllerConfig::MaxPressure)
}

impl ControllerConfig {
    pub fn complexity_aware() -> Self {
        ControllerConfig::ComplexityAware {
            rollout_horizon: default_rollout_horizon(),
            include_self: true,
        }
    }

    pub fn fixed_time() -> Self {
        ControllerConfig::FixedTime {
            cycle: default_cycle(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ControllerConfig::FixedTime { .. } => "fixed_time",
            ControllerConfig::MaxPressure => "max_pressure",
            ControllerConfig::ComplexityAware { .. } => "complexity_aware",
            ControllerConfig::Llm { .. } => "llm",
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        match self {
            ControllerConfig::FixedTime { cycle } if cycle.is_empty() => {
                Err(ControlError::Config("fixed-time cycle is empty".into()))
            }
            ControllerConfig::ComplexityAware {
                rollout_horizon: 0, ..
            } => Err(ControlError::Config(
                "rollout_horizon must be at least 1".into(),
            )),
            ControllerConfig::Llm {
                endpoint, fallback, ..
            } => {
                endpoint
                    .validate()
                    .map_err(|e| ControlError::Config(e.to_string()))?;
                if matches!(**fallback, ControllerConfig::Llm { .. }) {
                    return Err(ControlError::Config(
                        "an LLM controller cannot fall back to another".into(),
                    ));
                }
                fallback.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Controller>, ControlError> {
        self.validate()?;
        Ok(match self {
            ControllerConfig::FixedTime { cycle } => Box::new(FixedTime::new(cycle.clone())),
            ControllerConfig::MaxPressure => Box::new(MaxPressure),
            ControllerConfig::ComplexityAware {
                rollout_horizon,
                include_self,
            } => Box::new(ComplexityAware {
                rollout: RolloutSpec {
                    horizon: *rollout_horizon,
                    policy: NeighborPolicy::MaxPressure,
                    include_self: *include_self,
                },
            }),
            ControllerConfig::Llm {
                endpoint,
                task,
                fallback,
            } => Box::new(LlmController::new(
                endpoint.clone(),
                task.clone(),
                fallback.build()?,
            )),
        })
    }
}

/// Cycles through a fixed phase order, one phase per decision.
pub struct FixedTime {
    cycle: Vec<PhaseId>,
    step: usize,
}

impl FixedTime {
    pub fn new(cycle: Vec<PhaseId>) -> Self {
        FixedTime { cycle, step: 0 }
    }
}

pub fn fixed_time_decide(step_index: usize) -> Decision {
    Decision::new(PhaseId::from_index(step_index % 4), Tier::Baseline)
}

impl Controller for FixedTime {
    fn name(&self) -> &str {
        "fixed_time"
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> Result<Decision, ControlError> {
        let phase = self.cycle[self.step % self.cycle.len()];
        self.step += 1;
        Ok(Decision::new(phase, Tier::Baseline))
    }
}

/// Pressure of each phase: over its controlled lanes, the lane queue minus the
/// queue waiting on the road that lane feeds.
pub fn phase_pressures(net: &RoadNetwork, i: NodeIdx, queue: impl Fn(LaneIdx) -> f64) -> [f64; 4] {
    let road_queue = |r: RoadIdx| net.road(r).lanes.iter().map(|l| queue(*l)).sum::<f64>();
    PhaseId::ALL.map(|p| {
        net.phase_lanes(i, p)
            .map(|l| queue(l) - net.lane(l).downstream.map_or(0.0, road_queue))
            .sum()
    })
}

fn argmax_phase(scores: &[f64; 4]) -> PhaseId {
    PhaseId::from_index(first_argmax(scores).unwrap_or(0))
}

/// Queue counts from the observation's local rows, indexed by lane.
fn local_queues(
    obs: &ObservationSet,
    net: &RoadNetwork,
) -> Result<BTreeMap<LaneIdx, f64>, ControlError> {
    obs.local
        .iter()
        .map(|r| {
            net.lane_idx(&r.lane)
                .map(|l| (l, r.obs.n_queue as f64))
                .map_err(|_| ControlError::MissingLane(r.lane.clone()))
        })
        .collect()
}

pub fn max_pressure_decide(
    obs: &ObservationSet,
    net: &RoadNetwork,
    i: NodeIdx,
) -> Result<Decision, ControlError> {
    let q = local_queues(obs, net)?;
    let pressures = phase_pressures(net, i, |l| q.get(&l).copied().unwrap_or(0.0));
    Ok(Decision::new(argmax_phase(&pressures), Tier::Baseline))
}

/// Max-pressure straight from a simulation state (used inside rollouts).
pub fn max_pressure_phase(state: &SimState, net: &RoadNetwork, i: NodeIdx) -> PhaseId {
    argmax_phase(&phase_pressures(net, i, |l| state.queue_len(l) as f64))
}

pub struct MaxPressure;

impl Controller for MaxPressure {
    fn name(&self) -> &str {
        "max_pressure"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, ControlError> {
        max_pressure_decide(&ctx.view.obs, ctx.net, ctx.node)
    }
}

/// Deterministic three-tier policy.
///
/// - No critical neighbour lane: serve the phase releasing the most queued
///   vehicles in one green.
/// - One: the same local score, minus the vehicles a phase would push into a
///   critical receiving lane beyond its spare room, plus the queue of a
///   critical feeder lane for phases that drain the road it feeds.
/// - Several: short rollouts of every phase, pick the lowest resulting queue;
///   on rollout failure the one-lane scoring is used.
pub struct ComplexityAware {
    pub rollout: RolloutSpec,
}

/// Vehicles each phase can release from its controlled lanes in one green.
pub fn local_scores(
    net: &RoadNetwork,
    i: NodeIdx,
    q: &BTreeMap<LaneIdx, f64>,
    green_cap: f64,
) -> [f64; 4] {
    PhaseId::ALL.map(|p| {
        net.phase_lanes(i, p)
            .map(|l| q.get(&l).copied().unwrap_or(0.0).min(green_cap))
            .sum()
    })
}

/// Local scores adjusted for the critical neighbour lanes in `obs`.
pub fn cooperative_scores(
    obs: &ObservationSet,
    net: &RoadNetwork,
    i: NodeIdx,
    green_cap: f64,
) -> Result<[f64; 4], ControlError> {
    let q = local_queues(obs, net)?;
    let mut scores = local_scores(net, i, &q, green_cap);
    for row in &obs.neighbor {
        let lane = net
            .lane_idx(&row.lane)
            .map_err(|_| ControlError::MissingLane(row.lane.clone()))?;
        let road = net.lane(lane).road;
        for (k, p) in PhaseId::ALL.into_iter().enumerate() {
            match row.kind {
                RowKind::Receiver => {
                    let released: f64 = net
                        .phase_lanes(i, p)
                        .filter(|l| net.lane(*l).downstream == Some(road))
                        .map(|l| q.get(&l).copied().unwrap_or(0.0).min(green_cap))
                        .sum();
                    let spare = row.capacity as f64 - (row.obs.n_queue + row.obs.n_move) as f64;
                    scores[k] -= (released - spare.max(0.0)).max(0.0);
                }
                RowKind::Feeder => {
                    let Some(fed) = net.lane(lane).downstream else {
                        continue;
                    };
                    let drains = net.phase_lanes(i, p).any(|l| net.lane(l).road == fed);
                    if drains {
                        scores[k] += row.obs.n_queue as f64;
                    }
                }
                RowKind::Incoming | RowKind::Outgoing => {}
            }
        }
    }
    Ok(scores)
}

pub fn complexity_aware_decide(
    ctx: &DecisionContext<'_>,
    rollout: &RolloutSpec,
) -> Result<Decision, ControlError> {
    let obs = &ctx.view.obs;
    let cap = ctx.state.config().green_discharge_cap() as f64;
    let tier = ctx.view.tier;
    let simple = |tier| -> Result<Decision, ControlError> {
        let scores = cooperative_scores(obs, ctx.net, ctx.node, cap)?;
        Ok(Decision::new(argmax_phase(&scores), tier))
    };
    match tier {
        Tier::NoCoop => {
            let q = local_queues(obs, ctx.net)?;
            Ok(Decision::new(
                argmax_phase(&local_scores(ctx.net, ctx.node, &q, cap)),
                Tier::NoCoop,
            ))
        }
        Tier::Simple | Tier::Baseline => simple(Tier::Simple),
        Tier::Complex => match oracle::evaluate_actions(ctx.state, ctx.net, ctx.node, rollout) {
            Ok(outcomes) => {
                let totals: Vec<u64> = outcomes.iter().map(|o| o.total_queue).collect();
                let best = PhaseId::from_index(first_argmin(&totals).unwrap_or(0));
                Ok(Decision::new(best, Tier::Complex))
            }
            Err(e) => {
                log::warn!(
                    "rollout failed at {}: {e}; using one-lane scoring",
                    obs.intersection
                );
                simple(Tier::Simple)
            }
        },
    }
}

impl Controller for ComplexityAware {
    fn name(&self) -> &str {
        "complexity_aware"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, ControlError> {
        complexity_aware_decide(ctx, &self.rollout)
    }
}
