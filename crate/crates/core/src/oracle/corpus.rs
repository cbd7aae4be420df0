//! Reasoning-record synthesis, validation and feedback refinement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    evaluate_actions, golden_of, rollout_capture, OracleError, RolloutOutcome, RolloutSpec,
};
use crate::control::ControllerConfig;
use crate::network::{NodeIdx, PhaseId, RoadNetwork};
use crate::observe::{collect, DecisionView, ObservationSet, RowKind, Tier};
use crate::prompting::{chat_complete, parse, render, EndpointConfig, PromptBundle, DEFAULT_TASK};
use crate::sim::flow::FlowSpec;
use crate::sim::run::{Episode, RunOptions};
use crate::sim::{SimConfig, SimState};
use crate::util::first_argmax;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema for one corpus line.
pub const CORPUS_SCHEMA: &str = include_str!("../../schema/reasoning_record.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRecord {
    pub schema_version: u32,
    pub intersection: String,
    pub timestamp: f64,
    pub tier: Tier,
    pub n_c: usize,
    pub prompt: String,
    pub analysis: String,
    /// Observation of the intersection one decision after each action (complex tier only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future_states: Option<BTreeMap<PhaseId, ObservationSet>>,
    pub golden_action: PhaseId,
    pub outcomes: Vec<RolloutOutcome>,
    /// Action taken by the policy that drove the episode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_action: Option<PhaseId>,
    pub target_reply: String,
}

/// Canonical reply the model should learn to emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReply {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<BTreeMap<PhaseId, String>>,
    pub signal: PhaseId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summarizer {
    #[default]
    RuleBased,
    Llm {
        endpoint: EndpointConfig,
    },
}

fn phase_queue(obs: &ObservationSet, net: &RoadNetwork, i: NodeIdx, p: PhaseId) -> u32 {
    net.phase_lanes(i, p)
        .filter_map(|l| obs.local_row(&net.lane(l).id))
        .map(|r| r.obs.n_queue)
        .sum()
}

fn incoming_queue(obs: &ObservationSet) -> u32 {
    obs.incoming().map(|r| r.obs.n_queue).sum()
}

/// Deterministic traffic summary: critical lanes, dominant local queues and
/// the queue trend over the history window. Empty for the no-cooperation tier.
pub fn rule_based_analysis(view: &DecisionView, net: &RoadNetwork, i: NodeIdx) -> String {
    if view.tier == Tier::NoCoop {
        return String::new();
    }
    let obs = &view.obs;
    let mut out = String::new();
    let critical: Vec<String> = obs
        .neighbor
        .iter()
        .map(|r| {
            let role = match r.kind {
                RowKind::Receiver => "downstream",
                _ => "upstream",
            };
            format!(
                "{} ({role} at {}, {} queued, occupancy {:.2})",
                r.lane, r.node, r.obs.n_queue, r.obs.rho
            )
        })
        .collect();
    let _ = write!(out, "Critical neighbour lanes: {}.", critical.join("; "));
    let mut by_phase: Vec<(PhaseId, u32)> = PhaseId::ALL
        .iter()
        .map(|p| (*p, phase_queue(obs, net, i, *p)))
        .collect();
    by_phase.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let _ = write!(
        out,
        " Largest local queues: {} {}, {} {}.",
        by_phase[0].0, by_phase[0].1, by_phase[1].0, by_phase[1].1
    );
    if let Some(first) = view.history.first() {
        let _ = write!(
            out,
            " Local queue {} -> {} since t={:.0}s.",
            incoming_queue(&first.obs),
            incoming_queue(obs),
            first.obs.timestamp
        );
    }
    out
}

fn llm_analysis(endpoint: &EndpointConfig, bundle: &PromptBundle, facts: &str) -> Option<String> {
    let ask = PromptBundle {
        system:
            "You summarise traffic conditions for a signal controller in two or three sentences."
                .into(),
        user: format!(
            "{}\n\nKey facts: {facts}\nWrite the summary as plain text.",
            bundle.user
        ),
        tier: bundle.tier,
        token_estimate: bundle.token_estimate,
    };
    match chat_complete(endpoint, &ask) {
        Ok(text) if !text.trim().is_empty() => Some(text.trim().to_string()),
        Ok(_) => None,
        Err(e) => {
            log::warn!("summarizer failed, using rule-based text: {e}");
            None
        }
    }
}

fn prediction_text(future: &ObservationSet, now: &ObservationSet) -> String {
    let mut parts: Vec<String> = now
        .neighbor
        .iter()
        .map(|r| {
            let (q, rho) = future
                .rows()
                .find(|f| f.lane == r.lane)
                .map_or((0, 0.0), |f| (f.obs.n_queue, f.obs.rho));
            format!("{} {} queued, occupancy {:.2}", r.lane, q, rho)
        })
        .collect();
    parts.push(format!("local queue {}", incoming_queue(future)));
    parts.join("; ")
}

/// Build one training record at `i`'s decision boundary.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_record(
    state: &SimState,
    net: &RoadNetwork,
    i: NodeIdx,
    view: &DecisionView,
    spec: &RolloutSpec,
    summarizer: &Summarizer,
    task: &str,
) -> Result<ReasoningRecord, OracleError> {
    let tier = view.tier;
    let bundle = render(view, tier, task);
    let (outcomes, future_states) = if tier == Tier::Complex {
        let mut outcomes = Vec::with_capacity(4);
        let mut futures = BTreeMap::new();
        let runs: Vec<_> = {
            use rayon::prelude::*;
            PhaseId::ALL
                .par_iter()
                .map(|p| rollout_capture(state, net, i, *p, spec, Some(1)))
                .collect::<Result<Vec<_>, _>>()?
        };
        for (outcome, captured) in runs {
            let snap =
                captured.ok_or_else(|| OracleError::Other("missing one-step capture".into()))?;
            futures.insert(outcome.action, collect(&snap, net, i, view.obs.alpha));
            outcomes.push(outcome);
        }
        (outcomes, Some(futures))
    } else {
        (evaluate_actions(state, net, i, spec)?, None)
    };
    let golden = golden_of(&outcomes);

    let mut analysis = rule_based_analysis(view, net, i);
    if let (Summarizer::Llm { endpoint }, false) = (summarizer, tier == Tier::NoCoop) {
        if let Some(text) = llm_analysis(endpoint, &bundle, &analysis) {
            analysis = text;
        }
    }
    let target = TargetReply {
        n_c: (tier != Tier::NoCoop).then_some(view.n_c),
        analysis: (tier != Tier::NoCoop).then(|| analysis.clone()),
        predictions: future_states.as_ref().map(|f| {
            f.iter()
                .map(|(p, o)| (*p, prediction_text(o, &view.obs)))
                .collect()
        }),
        signal: golden,
    };
    Ok(ReasoningRecord {
        schema_version: SCHEMA_VERSION,
        intersection: net.node(i).id.clone(),
        timestamp: state.clock(),
        tier,
        n_c: view.n_c,
        prompt: bundle.text(),
        analysis,
        future_states,
        golden_action: golden,
        outcomes,
        chosen_action: None,
        target_reply: serde_json::to_string(&target).expect("target serializes"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenOptions {
    pub run: RunOptions,
    pub rollout: RolloutSpec,
    /// Policy that drives the episode whose decision points are sampled.
    pub behavior: ControllerConfig,
    pub summarizer: Summarizer,
    pub task: String,
    /// Probability of keeping each decision point.
    pub sample_rate: f64,
    pub max_records: Option<usize>,
    pub seed: u64,
}

impl Default for DatagenOptions {
    fn default() -> Self {
        DatagenOptions {
            run: RunOptions::default(),
            rollout: RolloutSpec::default(),
            behavior: ControllerConfig::complexity_aware(),
            summarizer: Summarizer::RuleBased,
            task: DEFAULT_TASK.to_string(),
            sample_rate: 1.0,
            max_records: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatagenSummary {
    pub records: usize,
    pub tier_histogram: BTreeMap<Tier, usize>,
    pub golden_histogram: BTreeMap<PhaseId, usize>,
    /// Records where the driving policy already chose the golden action.
    pub policy_matches_golden: usize,
}

impl DatagenSummary {
    pub fn of(records: &[ReasoningRecord]) -> Self {
        let mut s = DatagenSummary {
            records: records.len(),
            ..Default::default()
        };
        for r in records {
            *s.tier_histogram.entry(r.tier).or_default() += 1;
            *s.golden_histogram.entry(r.golden_action).or_default() += 1;
            s.policy_matches_golden += (r.chosen_action == Some(r.golden_action)) as usize;
        }
        s
    }
}

/// Drive an episode with the behaviour policy and synthesize a record at
/// every sampled decision point.
pub fn datagen(
    net: &RoadNetwork,
    cfg: &SimConfig,
    flows: &FlowSpec,
    opts: &DatagenOptions,
) -> Result<(Vec<ReasoningRecord>, DatagenSummary), OracleError> {
    flows
        .validate(net)
        .map_err(|e| OracleError::Other(e.to_string()))?;
    let plan = Arc::new(flows.compile(net, cfg.tick));
    let configs = crate::sim::run::uniform(net, &opts.behavior);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::new();
    let mut failure: Option<OracleError> = None;
    {
        let episode = Episode::from_configs(net, cfg, plan, &configs, opts.run)
            .map_err(|e| OracleError::Other(e.to_string()))?
            .on_decision(|ev| {
                if failure.is_some() || opts.max_records.is_some_and(|m| records.len() >= m) {
                    return;
                }
                if opts.sample_rate < 1.0 && rng.random::<f64>() >= opts.sample_rate {
                    return;
                }
                match synthesize_record(
                    ev.state,
                    net,
                    ev.node,
                    ev.view,
                    &opts.rollout,
                    &opts.summarizer,
                    &opts.task,
                ) {
                    Ok(mut r) => {
                        r.chosen_action = Some(ev.decision.phase);
                        records.push(r);
                    }
                    Err(e) => failure = Some(e),
                }
            });
        episode
            .run()
            .map_err(|e| OracleError::Other(e.to_string()))?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = DatagenSummary::of(&records);
    Ok((records, summary))
}

/// One line of refinement input (a record, or any object carrying the
/// chosen action and per-action feedback scores).
pub type RefineInput = Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLabel {
    pub line: usize,
    pub chosen_action: PhaseId,
    pub q_values: Vec<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefineStats {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Lines without a chosen action or a full set of q-values.
    pub skipped: usize,
}

fn q_values(v: &Value) -> Option<Vec<f64>> {
    let outcomes = v.get("outcomes")?.as_array()?;
    let mut q = vec![f64::NAN; PhaseId::ALL.len()];
    for o in outcomes {
        let action: PhaseId = o.get("action")?.as_str()?.parse().ok()?;
        q[action.index()] = o.get("q_value")?.as_f64()?;
    }
    q.iter().all(|x| x.is_finite()).then_some(q)
}

/// Keep the lines whose chosen action is the feedback argmax (first phase
/// wins ties). Lines lacking the needed fields are skipped and counted.
pub fn refine_filter(lines: &[RefineInput]) -> (Vec<RefineInput>, Vec<FeedbackLabel>, RefineStats) {
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    let mut stats = RefineStats {
        total: lines.len(),
        ..Default::default()
    };
    for (k, v) in lines.iter().enumerate() {
        let chosen = v
            .get("chosen_action")
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<PhaseId>().ok());
        let (Some(chosen), Some(q)) = (chosen, q_values(v)) else {
            stats.skipped += 1;
            continue;
        };
        let best = first_argmax(&q).map(PhaseId::from_index);
        let keep = best == Some(chosen);
        if keep {
            stats.kept += 1;
            kept.push(v.clone());
        } else {
            stats.dropped += 1;
        }
        labels.push(FeedbackLabel {
            line: k + 1,
            chosen_action: chosen,
            q_values: q,
            kept: keep,
        });
    }
    if stats.skipped > 0 {
        log::warn!("refine skipped {} lines without feedback", stats.skipped);
    }
    (kept, labels, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIssue {
    pub line: usize,
    pub message: String,
}

fn bundled_schema() -> &'static Value {
    static S: std::sync::OnceLock<Value> = std::sync::OnceLock::new();
    S.get_or_init(|| serde_json::from_str(CORPUS_SCHEMA).expect("bundled schema is JSON"))
}

/// Schema check plus the semantic rules the schema cannot express: the
/// golden action minimises the record's own rolled-out queue, scores match
/// queues, and the target reply parses for the record's tier.
pub fn validate_record(v: &Value) -> Vec<String> {
    let mut issues: Vec<String> = super::schema::check(bundled_schema(), v)
        .into_iter()
        .map(|e| format!("schema: {e}"))
        .collect();
    if !issues.is_empty() {
        return issues;
    }
    let record: ReasoningRecord = match serde_json::from_value(v.clone()) {
        Ok(r) => r,
        Err(e) => return vec![format!("record does not deserialize: {e}")],
    };
    let actions: Vec<PhaseId> = record.outcomes.iter().map(|o| o.action).collect();
    if actions != PhaseId::ALL {
        issues.push("outcomes must list every phase once, in phase order".into());
        return issues;
    }
    let golden = golden_of(&record.outcomes);
    if record.golden_action != golden {
        issues.push(format!(
            "golden_action {} is not the queue minimiser {}",
            record.golden_action, golden
        ));
    }
    for o in &record.outcomes {
        if (o.q_value - super::feedback_q(o.total_queue)).abs() > 1e-12 {
            issues.push(format!("q_value of {} does not match its queue", o.action));
        }
    }
    if Tier::from_risk(record.n_c) != record.tier {
        issues.push(format!(
            "tier {} does not match n_c {}",
            record.tier.as_str(),
            record.n_c
        ));
    }
    match parse(&record.target_reply, record.tier) {
        Ok(reply) if reply.signal != record.golden_action => {
            issues.push("target_reply signal differs from golden_action".into())
        }
        Ok(_) => {}
        Err(e) => issues.push(format!("target_reply: {e}")),
    }
    let has_future = record
        .future_states
        .as_ref()
        .is_some_and(|f| f.len() == PhaseId::ALL.len());
    if (record.tier == Tier::Complex) != has_future {
        issues
            .push("future_states must hold one state per phase exactly for complex records".into());
    }
    issues
}

/// Validate every non-empty line of a JSONL corpus.
pub fn validate_corpus(text: &str) -> Vec<CorpusIssue> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let issues = match serde_json::from_str::<Value>(line) {
            Ok(v) => validate_record(&v),
            Err(e) => vec![format!("not JSON: {e}")],
        };
        out.extend(issues.into_iter().map(|message| CorpusIssue {
            line: k + 1,
            message,
        }));
    }
    out
}

/// Record as one JSONL line.
pub fn to_line(r: &ReasoningRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}
