//! Prompt rendering for the three reasoning tiers, the chat-completions
//! client and strict parsing of model replies.

mod client;
pub mod mock;
mod parse;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::network::PhaseId;
use crate::observe::{DecisionView, HistoryEntry, LaneRow, RowKind, SpatioTemporalGraph, Tier};

pub use client::{chat_complete, ChatError, EndpointConfig};
pub use parse::{parse, ParseError, ParsedReply};

/// Built-in task description.
pub const DEFAULT_TASK: &str =
    "You operate the traffic signal of one intersection inside a connected road \
network. Choose the next signal phase so that traffic keeps moving across the whole neighbourhood, \
not only at your own stop lines. Avoid releasing vehicles toward a downstream lane that is already \
full or about to fill, and give priority to approaches whose upstream neighbours are backing up \
because your lanes are not draining.";

const SYSTEM_TEXT: &str =
    "You are a traffic signal controller. Reply with a single JSON object that \
follows the output format exactly. Do not add any other JSON objects.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub tier: Tier,
    pub token_estimate: usize,
}

impl PromptBundle {
    /// System and user text joined, as stored in corpus records.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

fn lane_table(out: &mut String, rows: &[&LaneRow]) {
    out.push_str("lane | at | side | movement | role | queued | moving | wait_s | occupancy\n");
    for r in rows {
        let role = match r.kind {
            RowKind::Incoming => "incoming",
            RowKind::Outgoing => "outgoing",
            RowKind::Receiver => "downstream",
            RowKind::Feeder => "upstream",
        };
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {} | {} | {} | {:.1} | {:.2}",
            r.lane,
            r.node,
            r.side.letter(),
            r.movement.as_str(),
            role,
            r.obs.n_queue,
            r.obs.n_move,
            r.obs.tau,
            r.obs.rho
        );
    }
}

fn graph_section(out: &mut String, graph: &SpatioTemporalGraph) {
    if graph.edges.is_empty() {
        out.push_str("No controlled neighbouring intersections.\n");
        return;
    }
    let _ = writeln!(out, "Intersections: {}", graph.nodes.join(", "));
    for e in &graph.edges {
        let movements: Vec<&str> = e.movements.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(
            out,
            "{}: {} -> {}, {:.0} m, neighbour on {} side, lanes {}",
            e.road,
            e.from,
            e.to,
            e.length,
            e.direction.letter(),
            movements.join("/")
        );
    }
}

fn history_section(out: &mut String, history: &[HistoryEntry]) {
    if history.is_empty() {
        out.push_str("No history.\n");
        return;
    }
    for h in history {
        let phases: Vec<String> = h.phases.iter().map(|(n, p)| format!("{n}={p}")).collect();
        let _ = writeln!(
            out,
            "t={:.0}s phases: {}",
            h.obs.timestamp,
            phases.join(", ")
        );
        let rows: Vec<String> = h
            .obs
            .incoming()
            .chain(h.obs.neighbor.iter())
            .map(|r| {
                format!(
                    "{}:{}/{}/{:.2}",
                    r.lane, r.obs.n_queue, r.obs.n_move, r.obs.rho
                )
            })
            .collect();
        let _ = writeln!(out, "  queued/moving/occupancy {}", rows.join(" "));
    }
}

fn schema_section(out: &mut String, tier: Tier, n_c: usize) {
    let names: Vec<&str> = PhaseId::ALL.iter().map(|p| p.as_str()).collect();
    match tier {
        Tier::NoCoop | Tier::Baseline => {
            out.push_str("No neighbouring lane is critical; decide from your own lanes.\n");
            let _ = writeln!(out, "{{\"signal\": \"<one of {}>\"}}", names.join("|"));
        }
        Tier::Simple => {
            let _ = writeln!(
                out,
                "Exactly {n_c} neighbouring lane is critical. First analyse how it interacts with your \
                 lanes, then choose the signal."
            );
            let _ = writeln!(
                out,
                "{{\"n_c\": {n_c}, \"analysis\": \"<local and neighbour interaction>\", \"signal\": \"<one of {}>\"}}",
                names.join("|")
            );
        }
        Tier::Complex => {
            let _ = writeln!(
                out,
                "{n_c} neighbouring lanes are critical. Work in three steps: (1) analyse the \
                 interactions across intersections, (2) predict the next-step state of the critical \
                 lanes under each phase, (3) select the phase with the best predicted outcome."
            );
            let slots: Vec<String> = names
                .iter()
                .map(|n| format!("\"{n}\": \"<predicted state>\""))
                .collect();
            let _ = writeln!(
                out,
                "{{\"n_c\": {n_c}, \"analysis\": \"<analysis>\", \"predictions\": {{{}}}, \"signal\": \"<one of {}>\"}}",
                slots.join(", "),
                names.join("|")
            );
        }
    }
}

/// Deterministic prompt for one decision. Numbers use fixed precision so
/// identical views give identical bytes.
pub fn render(view: &DecisionView, tier: Tier, task: &str) -> PromptBundle {
    let obs = &view.obs;
    let mut user = String::new();
    user.push_str("## Task\n");
    user.push_str(task);
    user.push_str("\n\n## Current observations\n");
    let _ = writeln!(
        user,
        "Intersection {} at t={:.0}s. Neighbour lanes shown when occupancy >= {:.2}.",
        obs.intersection, obs.timestamp, obs.alpha
    );
    let local: Vec<&LaneRow> = obs.local.iter().collect();
    lane_table(&mut user, &local);
    let _ = writeln!(user, "Critical neighbouring lanes: {}", obs.neighbor.len());
    if !obs.neighbor.is_empty() {
        let nb: Vec<&LaneRow> = obs.neighbor.iter().collect();
        lane_table(&mut user, &nb);
    }
    user.push_str("\n## Spatial relations\n");
    graph_section(&mut user, &view.graph);
    user.push_str("\n## History\n");
    history_section(&mut user, &view.history);
    user.push_str("\n## Action space\n");
    for p in PhaseId::ALL {
        let _ = writeln!(user, "{}: {}", p, p.describe());
    }
    user.push_str("Right turns are always allowed.\n");
    user.push_str("\n## Output format\n");
    schema_section(&mut user, tier, view.n_c);

    let token_estimate = (SYSTEM_TEXT.len() + user.len()).div_ceil(4);
    PromptBundle {
        system: SYSTEM_TEXT.to_string(),
        user,
        tier,
        token_estimate,
    }
}
