//! Cooperative traffic-signal control on a point-queue microsimulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`]: road graph, phase semantics, roadnet ingestion.
//! - [`sim`]: deterministic discrete-time dynamics, forking, episode runner.
//! - [`observe`]: lane observations, neighbour filtering, history, congestion risk.
//! - [`control`]: fixed-time, max-pressure, complexity-aware and LLM-backed controllers.
//! - [`prompting`]: prompt rendering, chat-completions client, reply parsing.
//! - [`oracle`]: rollout oracle, feedback score, corpus synthesis and refinement.
//! - [`metrics`]: travel/waiting time, connectivity index, reports.

pub mod control;
pub mod metrics;
pub mod network;
pub mod observe;
pub mod oracle;
pub mod prompting;
pub mod scenario;
pub mod sim;
mod util;

pub use control::{Controller, ControllerConfig, Decision, Tier};
pub use network::{Direction, Movement, PhaseId, RoadNetwork};
pub use observe::{LaneObservation, ObservationSet};
pub use sim::{SimConfig, SimState};
