//! What-if rollouts over forked states, the feedback score derived from them,
//! and the reasoning-corpus pipeline built on top.

mod corpus;
mod schema;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::max_pressure_phase;
use crate::network::{LaneIdx, NodeIdx, PhaseId, RoadNetwork};
use crate::sim::{SimError, SimState};
use crate::util::{first_argmax, first_argmin};

pub use corpus::{datagen, to_line, RefineInput};
pub use corpus::{
    refine_filter, rule_based_analysis, synthesize_record, validate_corpus, validate_record,
    CorpusIssue, DatagenOptions, DatagenSummary, FeedbackLabel, ReasoningRecord, RefineStats,
    Summarizer, TargetReply, CORPUS_SCHEMA, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("intersection {intersection} is not at a decision boundary at t={t}")]
    NotAtBoundary { intersection: String, t: f64 },
    #[error("intersection {0} is virtual")]
    Virtual(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Other(String),
}

/// How intersections choose phases inside a rollout once the forced first action is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborPolicy {
    #[default]
    MaxPressure,
    HoldCurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSpec {
    /// Number of decision intervals of the assigned intersection to simulate.
    pub horizon: usize,
    pub policy: NeighborPolicy,
    /// Count the assigned intersection's own incoming lanes in the queue total.
    pub include_self: bool,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        RolloutSpec {
            horizon: 5,
            policy: NeighborPolicy::MaxPressure,
            include_self: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub action: PhaseId,
    pub horizon: usize,
    pub total_queue: u64,
    pub q_value: f64,
}

/// Higher is better; 1 for an empty scope.
pub fn feedback_q(total_queue: u64) -> f64 {
    1.0 / (1.0 + total_queue as f64)
}

fn policy_phase(
    state: &SimState,
    net: &RoadNetwork,
    j: NodeIdx,
    policy: NeighborPolicy,
) -> PhaseId {
    match policy {
        NeighborPolicy::MaxPressure => max_pressure_phase(state, net, j),
        NeighborPolicy::HoldCurrent => state.current_phase(j).unwrap_or(PhaseId::ETWT),
    }
}

fn apply_policy(
    state: &mut SimState,
    net: &RoadNetwork,
    nodes: &[NodeIdx],
    policy: NeighborPolicy,
) -> Result<(), SimError> {
    // Decide every node against the same snapshot, then apply.
    let choices: Vec<(NodeIdx, PhaseId)> = nodes
        .iter()
        .map(|j| (*j, policy_phase(state, net, *j, policy)))
        .collect();
    for (j, p) in choices {
        state.set_phase(net, j, p)?;
    }
    Ok(())
}

fn check_boundary(state: &SimState, net: &RoadNetwork, i: NodeIdx) -> Result<(), OracleError> {
    let node = net.node(i);
    if node.is_virtual {
        return Err(OracleError::Virtual(node.id.clone()));
    }
    if !state.at_decision_boundary(i) {
        return Err(OracleError::NotAtBoundary {
            intersection: node.id.clone(),
            t: state.clock(),
        });
    }
    Ok(())
}

/// Roll the network forward from a fork of `state` with `action` forced at `i`.
/// When `capture_after` is `Some(k)`, also returns the forked state as it was
/// when `i` completed its `k`-th decision interval.
pub fn rollout_capture(
    state: &SimState,
    net: &RoadNetwork,
    i: NodeIdx,
    action: PhaseId,
    spec: &RolloutSpec,
    capture_after: Option<usize>,
) -> Result<(RolloutOutcome, Option<SimState>), OracleError> {
    check_boundary(state, net, i)?;
    let horizon = spec.horizon.max(1);
    let scope: Vec<LaneIdx> = net.queue_scope(i, spec.include_self);
    let mut s = state.fork();
    s.set_phase(net, i, action)?;
    let others: Vec<NodeIdx> = s.boundary_nodes().into_iter().filter(|j| *j != i).collect();
    apply_policy(&mut s, net, &others, spec.policy)?;

    let mut done = 0usize;
    let mut captured = None;
    loop {
        s.step(net);
        let boundary = s.boundary_nodes();
        if boundary.contains(&i) {
            done += 1;
            if capture_after == Some(done) {
                captured = Some(s.clone());
            }
            if done == horizon {
                break;
            }
        }
        apply_policy(&mut s, net, &boundary, spec.policy)?;
    }
    if let Some(k) = capture_after {
        if k > horizon && captured.is_none() {
            return Err(OracleError::Other(format!(
                "capture step {k} beyond horizon {horizon}"
            )));
        }
    }
    let total_queue = s.total_queue(&scope) as u64;
    Ok((
        RolloutOutcome {
            action,
            horizon,
            total_queue,
            q_value: feedback_q(total_queue),
        },
        captured,
    ))
}

pub fn rollout(
    state: &SimState,
    net: &RoadNetwork,
    i: NodeIdx,
    action: PhaseId,
    spec: &RolloutSpec,
) -> Result<RolloutOutcome, OracleError> {
    rollout_capture(state, net, i, action, spec, None).map(|(o, _)| o)
}

/// One rollout per phase, in phase order, run in parallel.
pub fn evaluate_actions(
    state: &SimState,
    net: &RoadNetwork,
    i: NodeIdx,
    spec: &RolloutSpec,
) -> Result<Vec<RolloutOutcome>, OracleError> {
    check_boundary(state, net, i)?;
    PhaseId::ALL
        .par_iter()
        .map(|p| rollout(state, net, i, *p, spec))
        .collect()
}

/// The phase with the smallest rolled-out queue (first in phase order on ties).
pub fn pseudo_golden(
    state: &SimState,
    net: &RoadNetwork,
    i: NodeIdx,
    spec: &RolloutSpec,
) -> Result<(PhaseId, Vec<RolloutOutcome>), OracleError> {
    let outcomes = evaluate_actions(state, net, i, spec)?;
    Ok((golden_of(&outcomes), outcomes))
}

pub fn golden_of(outcomes: &[RolloutOutcome]) -> PhaseId {
    let totals: Vec<u64> = outcomes.iter().map(|o| o.total_queue).collect();
    outcomes[first_argmin(&totals).unwrap_or(0)].action
}

/// The phase with the highest feedback score (first in phase order on ties).
pub fn best_by_q(q_values: &[f64]) -> Option<PhaseId> {
    first_argmax(q_values).map(PhaseId::from_index)
}

#[cfg(test)]
mod tests;
