use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::*;
use crate::control::ControllerConfig;
use crate::network::{Direction, Movement};
use crate::observe::{collect, local_graph, DecisionView, HistoryBuffer, Tier};
use crate::prompting::{parse, DEFAULT_TASK};
use crate::scenario::{grid, named};
use crate::sim::flow::{FlowEntry, FlowSpec};
use crate::sim::run::{Episode, RunOptions};
use crate::sim::SimConfig;

fn one_by_one() -> (RoadNetwork, NodeIdx) {
    let net = grid(1, 1, 300.0, 300.0, 10.0).build().unwrap();
    let i = net.node_idx("intersection_1_1").unwrap();
    (net, i)
}

/// Periodic flow entering at `side` of `i` and taking movement `m`.
fn approach(
    net: &RoadNetwork,
    i: NodeIdx,
    side: Direction,
    m: Movement,
    interval: f64,
) -> FlowEntry {
    let first = net.movement_lane(i, side, m).unwrap();
    let next = net.road(net.lane(first).downstream.unwrap()).lanes[1];
    FlowEntry {
        route: vec![net.lane(first).id.clone(), net.lane(next).id.clone()],
        start_time: 0.0,
        end_time: 400.0,
        interval,
    }
}

/// State at `i`'s decision boundary after two decisions that both chose `hold`.
fn loaded_state(
    net: &RoadNetwork,
    i: NodeIdx,
    heavy: [(Direction, Movement); 2],
    hold: PhaseId,
) -> SimState {
    let mut entries: Vec<FlowEntry> = heavy
        .iter()
        .map(|(d, m)| approach(net, i, *d, *m, 2.5))
        .collect();
    entries.push(approach(net, i, Direction::North, Movement::Through, 30.0));
    entries.push(approach(net, i, Direction::East, Movement::Left, 30.0));
    let mut s = SimState::new(net, &SimConfig::default(), &FlowSpec { entries }).unwrap();
    for _ in 0..2 {
        s.set_phase(net, i, hold).unwrap();
        s.step(net);
        while !s.at_decision_boundary(i) {
            s.step(net);
        }
    }
    s
}

/// Rollout rebuilt from serialized bytes with only public stepping calls.
fn naive_total(
    bytes: &[u8],
    net: &RoadNetwork,
    i: NodeIdx,
    action: PhaseId,
    horizon: usize,
) -> u64 {
    let mut s: SimState = serde_json::from_slice(bytes).unwrap();
    let mut first = true;
    let mut done = 0;
    loop {
        let nodes = s.boundary_nodes();
        if !first && nodes.contains(&i) {
            done += 1;
            if done == horizon {
                break;
            }
        }
        let mut picks = Vec::new();
        for j in &nodes {
            let p = if first && *j == i {
                action
            } else {
                crate::control::max_pressure_phase(&s, net, *j)
            };
            picks.push((*j, p));
        }
        for (j, p) in picks {
            s.set_phase(net, j, p).unwrap();
        }
        first = false;
        s.step(net);
    }
    let mut lanes: Vec<LaneIdx> = net.node(i).incoming.clone();
    for nb in net.neighbors(i, false) {
        lanes.extend(net.node(nb.node).incoming.iter().copied());
    }
    lanes.sort();
    lanes.dedup();
    lanes.iter().map(|l| s.queue_len(*l) as u64).sum()
}

fn spec(horizon: usize) -> RolloutSpec {
    RolloutSpec {
        horizon,
        policy: NeighborPolicy::MaxPressure,
        include_self: true,
    }
}

#[test]
fn feedback_score_examples() {
    assert_eq!(feedback_q(0), 1.0);
    assert!((feedback_q(9) - 0.1).abs() < 1e-15);
    assert!(feedback_q(3) > feedback_q(4));
}

#[test]
fn empty_network_rollouts_are_free() {
    let (net, i) = one_by_one();
    let s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
    let before = serde_json::to_vec(&s).unwrap();
    let (golden, outcomes) = pseudo_golden(&s, &net, i, &RolloutSpec::default()).unwrap();
    assert_eq!(golden, PhaseId::ETWT);
    assert!(outcomes
        .iter()
        .all(|o| o.total_queue == 0 && o.q_value == 1.0 && o.horizon == 5));
    assert_eq!(serde_json::to_vec(&s).unwrap(), before);
}

#[test]
fn rollout_needs_a_boundary() {
    let (net, i) = one_by_one();
    let mut s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
    s.step(&net);
    assert!(matches!(
        rollout(&s, &net, i, PhaseId::ETWT, &spec(1)),
        Err(OracleError::NotAtBoundary { .. })
    ));
}

#[test]
fn east_west_heavy_prefers_through() {
    let (net, i) = one_by_one();
    let s = loaded_state(
        &net,
        i,
        [
            (Direction::East, Movement::Through),
            (Direction::West, Movement::Through),
        ],
        PhaseId::NLSL,
    );
    let bytes = serde_json::to_vec(&s).unwrap();
    let sp = RolloutSpec::default();
    let etwt = rollout(&s, &net, i, PhaseId::ETWT, &sp).unwrap();
    let nlsl = rollout(&s, &net, i, PhaseId::NLSL, &sp).unwrap();
    assert!(etwt.total_queue < nlsl.total_queue, "{etwt:?} {nlsl:?}");
    let (golden, outcomes) = pseudo_golden(&s, &net, i, &sp).unwrap();
    assert_eq!(golden, PhaseId::ETWT);
    let rest: Vec<u64> = outcomes[1..].iter().map(|o| o.total_queue).collect();
    assert!(
        rest.iter().all(|t| *t > outcomes[0].total_queue),
        "{outcomes:?}"
    );
    for o in &outcomes {
        assert_eq!(
            o.total_queue,
            naive_total(&bytes, &net, i, o.action, sp.horizon)
        );
    }
    assert_eq!(serde_json::to_vec(&s).unwrap(), bytes);
}

#[test]
fn north_south_left_heavy_prefers_left() {
    let (net, i) = one_by_one();
    let s = loaded_state(
        &net,
        i,
        [
            (Direction::North, Movement::Left),
            (Direction::South, Movement::Left),
        ],
        PhaseId::ETWT,
    );
    let (golden, outcomes) = pseudo_golden(&s, &net, i, &RolloutSpec::default()).unwrap();
    assert_eq!(golden, PhaseId::NLSL, "{outcomes:?}");
    let bytes = serde_json::to_vec(&s).unwrap();
    for o in &outcomes {
        assert_eq!(o.total_queue, naive_total(&bytes, &net, i, o.action, 5));
    }
}

#[test]
fn ties_go_to_first_phase() {
    let outcomes: Vec<RolloutOutcome> = PhaseId::ALL
        .iter()
        .map(|p| RolloutOutcome {
            action: *p,
            horizon: 5,
            total_queue: 7,
            q_value: feedback_q(7),
        })
        .collect();
    assert_eq!(golden_of(&outcomes), PhaseId::ETWT);
    assert_eq!(best_by_q(&[0.1, 0.1, 0.1, 0.1]), Some(PhaseId::ETWT));
    let (net, i) = one_by_one();
    let s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
    assert_eq!(
        pseudo_golden(&s, &net, i, &spec(2)).unwrap().0,
        PhaseId::ETWT
    );
}

#[test]
fn capture_returns_one_step_state() {
    let (net, i) = one_by_one();
    let s = loaded_state(
        &net,
        i,
        [
            (Direction::East, Movement::Through),
            (Direction::West, Movement::Through),
        ],
        PhaseId::NLSL,
    );
    // Keeping the held phase is a plain 30 s green; switching adds the 5 s intergreen.
    for (action, gap) in [(PhaseId::NLSL, 30.0), (PhaseId::ETWT, 35.0)] {
        let (_, snap) = rollout_capture(&s, &net, i, action, &spec(3), Some(1)).unwrap();
        let snap = snap.unwrap();
        assert!(snap.at_decision_boundary(i));
        assert_eq!(snap.clock() - s.clock(), gap);
    }
    assert!(rollout_capture(&s, &net, i, PhaseId::ETWT, &spec(1), Some(2)).is_err());
}

/// Decision points of a short spillback episode, keyed by their `n_c`.
fn points_by_risk() -> (
    RoadNetwork,
    BTreeMap<usize, (SimState, NodeIdx, DecisionView)>,
) {
    let sc = named("spillback2x2").unwrap();
    let net = sc.net.clone();
    let cfg = SimConfig::default();
    let plan = Arc::new(sc.flows.compile(&net, cfg.tick));
    type Found = BTreeMap<usize, (SimState, NodeIdx, DecisionView)>;
    let found: Rc<RefCell<Found>> = Rc::default();
    {
        let slot = found.clone();
        let configs = crate::sim::run::uniform(&net, &ControllerConfig::MaxPressure);
        let ep = Episode::from_configs(
            &net,
            &cfg,
            plan,
            &configs,
            RunOptions {
                duration: 1500.0,
                ..Default::default()
            },
        )
        .unwrap()
        .on_decision(move |ev| {
            slot.borrow_mut()
                .entry(ev.view.n_c.min(3))
                .or_insert_with(|| (ev.state.clone(), ev.node, ev.view.clone()));
        });
        ep.run().unwrap();
    }
    let map = found.borrow().clone();
    (net, map)
}

#[test]
fn records_follow_their_tier() {
    let (net, points) = points_by_risk();
    let sp = RolloutSpec::default();

    let (s, i, v) = &points[&0];
    let r = synthesize_record(s, &net, *i, v, &sp, &Summarizer::RuleBased, DEFAULT_TASK).unwrap();
    assert_eq!(r.tier, Tier::NoCoop);
    assert!(r.analysis.is_empty() && r.future_states.is_none());

    let (s, i, v) = &points[&1];
    let r = synthesize_record(s, &net, *i, v, &sp, &Summarizer::RuleBased, DEFAULT_TASK).unwrap();
    assert_eq!(r.tier, Tier::Simple);
    let reply = parse(&r.target_reply, Tier::Simple).unwrap();
    assert!(reply.analysis.is_some() && reply.predictions.is_none());
    assert_eq!(reply.signal, r.golden_action);

    let (s, i, v) = points.range(2..).next().map(|(_, p)| p).unwrap();
    let r = synthesize_record(s, &net, *i, v, &sp, &Summarizer::RuleBased, DEFAULT_TASK).unwrap();
    assert_eq!(r.tier, Tier::Complex);
    assert_eq!(r.future_states.as_ref().unwrap().len(), 4);
    assert_eq!(
        parse(&r.target_reply, Tier::Complex)
            .unwrap()
            .predictions
            .unwrap()
            .len(),
        4
    );
    let totals: Vec<u64> = r.outcomes.iter().map(|o| o.total_queue).collect();
    assert_eq!(
        r.golden_action,
        PhaseId::ALL[totals
            .iter()
            .position(|t| t == totals.iter().min().unwrap())
            .unwrap()]
    );
    let line = serde_json::to_value(&r).unwrap();
    assert!(
        validate_record(&line).is_empty(),
        "{:?}",
        validate_record(&line)
    );
}

#[test]
fn empty_state_record_is_minimal() {
    let (net, i) = one_by_one();
    let s = SimState::new(&net, &SimConfig::default(), &FlowSpec::default()).unwrap();
    let view = DecisionView::new(
        &collect(&s, &net, i, 0.0),
        local_graph(&net, i),
        &HistoryBuffer::new(5),
        0.5,
        5,
    );
    let r = synthesize_record(
        &s,
        &net,
        i,
        &view,
        &RolloutSpec::default(),
        &Summarizer::RuleBased,
        DEFAULT_TASK,
    )
    .unwrap();
    assert_eq!(r.target_reply, r#"{"signal":"ETWT"}"#);
    assert_eq!(r.analysis, "");
    assert!(validate_record(&serde_json::to_value(&r).unwrap()).is_empty());
}

#[test]
fn validator_flags_corruption_by_line() {
    let (net, i) = one_by_one();
    let s = loaded_state(
        &net,
        i,
        [
            (Direction::East, Movement::Through),
            (Direction::West, Movement::Through),
        ],
        PhaseId::NLSL,
    );
    let view = DecisionView::new(
        &collect(&s, &net, i, 0.0),
        local_graph(&net, i),
        &HistoryBuffer::new(5),
        0.5,
        5,
    );
    let r = synthesize_record(
        &s,
        &net,
        i,
        &view,
        &RolloutSpec::default(),
        &Summarizer::RuleBased,
        DEFAULT_TASK,
    )
    .unwrap();
    let good = to_line(&r);
    let mut bad: Value = serde_json::from_str(&good).unwrap();
    bad["golden_action"] = json!("NLSL");
    let mut extra: Value = serde_json::from_str(&good).unwrap();
    extra["surprise"] = json!(1);
    let text = format!("{good}\n{bad}\n\nnot json\n{extra}\n");
    let issues = validate_corpus(&text);
    let lines: Vec<usize> = issues.iter().map(|x| x.line).collect();
    assert_eq!(lines, vec![2, 2, 4, 5], "{issues:?}");
    assert!(issues[0].message.contains("golden_action"));
}

#[test]
fn refine_examples() {
    let line = |chosen: &str, q: [f64; 4]| {
        json!({
            "chosen_action": chosen,
            "outcomes": PhaseId::ALL.iter().zip(q).map(|(p, q)| json!({"action": p, "q_value": q})).collect::<Vec<_>>(),
        })
    };
    let lines = vec![
        line("ETWT", [0.5, 0.2, 0.2, 0.1]),
        line("ELWL", [0.5, 0.2, 0.2, 0.1]),
        json!({"chosen_action": "NTST"}),
        line("NTST", [0.2, 0.2, 0.6, 0.6]),
    ];
    let (kept, labels, stats) = refine_filter(&lines);
    assert_eq!(kept, vec![lines[0].clone(), lines[3].clone()]);
    assert_eq!(
        stats,
        RefineStats {
            total: 4,
            kept: 2,
            dropped: 1,
            skipped: 1
        }
    );
    assert_eq!(
        labels.iter().map(|l| (l.line, l.kept)).collect::<Vec<_>>(),
        vec![(1, true), (2, false), (4, true)]
    );
}

#[test]
fn refine_matches_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lines: Vec<Value> = (0..100)
        .map(|_| {
            // Coarse values so ties happen.
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(1..5) as f64 / 10.0).collect();
            let chosen = PhaseId::ALL[rng.random_range(0..4)];
            json!({
                "chosen_action": chosen,
                "outcomes": PhaseId::ALL.iter().zip(&q).map(|(p, q)| json!({"action": p, "q_value": q})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut expected = 0;
    for v in &lines {
        let q: Vec<f64> = v["outcomes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["q_value"].as_f64().unwrap())
            .collect();
        let max = q.iter().cloned().fold(f64::MIN, f64::max);
        let winner = q.iter().position(|x| *x == max).unwrap();
        if v["chosen_action"] == json!(PhaseId::ALL[winner]) {
            expected += 1;
        }
    }
    let (kept, _, stats) = refine_filter(&lines);
    assert_eq!(kept.len(), expected);
    assert_eq!(stats.kept + stats.dropped, 100);
}

#[test]
fn datagen_is_deterministic() {
    let sc = named("toy1x1").unwrap();
    let opts = DatagenOptions {
        run: RunOptions {
            duration: 600.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let (a, sa) = datagen(&sc.net, &SimConfig::default(), &sc.flows, &opts).unwrap();
    let (b, _) = datagen(&sc.net, &SimConfig::default(), &sc.flows, &opts).unwrap();
    let text = |rs: &[ReasoningRecord]| rs.iter().map(to_line).collect::<Vec<_>>().join("\n");
    assert_eq!(text(&a), text(&b));
    assert!(sa.records > 10);
    assert_eq!(sa.tier_histogram.values().sum::<usize>(), sa.records);
    assert!(a.iter().all(|r| r.chosen_action.is_some()));
    assert!(validate_corpus(&text(&a)).is_empty());
    let half = DatagenOptions {
        sample_rate: 0.5,
        seed: 3,
        ..opts.clone()
    };
    let (c, _) = datagen(&sc.net, &SimConfig::default(), &sc.flows, &half).unwrap();
    assert!(c.len() < a.len());
    let capped = DatagenOptions {
        max_records: Some(4),
        ..opts
    };
    assert_eq!(
        datagen(&sc.net, &SimConfig::default(), &sc.flows, &capped)
            .unwrap()
            .0
            .len(),
        4
    );
}

#[test]
fn llm_summarizer_falls_back_to_rules() {
    use crate::prompting::mock::{MockReply, MockServer};
    use crate::prompting::EndpointConfig;
    let (net, points) = points_by_risk();
    let (s, i, v) = &points[&1];
    let sp = spec(1);
    let rules =
        synthesize_record(s, &net, *i, v, &sp, &Summarizer::RuleBased, DEFAULT_TASK).unwrap();
    let server = MockServer::start(|_, k| {
        if k == 0 {
            MockReply::Completion("Queues are building eastbound.".into())
        } else {
            MockReply::Raw(401, "no".into())
        }
    })
    .unwrap();
    let endpoint = EndpointConfig {
        base_url: server.base_url(),
        retries: 0,
        ..Default::default()
    };
    let summarizer = Summarizer::Llm { endpoint };
    let first = synthesize_record(s, &net, *i, v, &sp, &summarizer, DEFAULT_TASK).unwrap();
    assert_eq!(first.analysis, "Queues are building eastbound.");
    let second = synthesize_record(s, &net, *i, v, &sp, &summarizer, DEFAULT_TASK).unwrap();
    assert_eq!(second.analysis, rules.analysis);
    assert_eq!(second.golden_action, rules.golden_action);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn q_order_reverses_queue_order(a in 0u64..10_000, b in 0u64..10_000) {
        let (qa, qb) = (feedback_q(a), feedback_q(b));
        prop_assert!(qa > 0.0 && qa <= 1.0);
        prop_assert_eq!(a.cmp(&b), qb.partial_cmp(&qa).unwrap());
    }

    #[test]
    fn kept_lines_are_golden_consistent(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lines: Vec<Value> = (0..20)
            .map(|_| {
                let totals: Vec<u64> = (0..4).map(|_| rng.random_range(0..6)).collect();
                json!({
                    "chosen_action": PhaseId::ALL[rng.random_range(0..4)],
                    "outcomes": PhaseId::ALL.iter().zip(&totals).map(|(p, t)| json!({"action": p, "q_value": feedback_q(*t)})).collect::<Vec<_>>(),
                })
            })
            .collect();
        let (kept, _, _) = refine_filter(&lines);
        for v in kept {
            let q: Vec<f64> = v["outcomes"].as_array().unwrap().iter().map(|o| o["q_value"].as_f64().unwrap()).collect();
            let chosen: PhaseId = serde_json::from_value(v["chosen_action"].clone()).unwrap();
            prop_assert!(q.iter().all(|x| *x <= q[chosen.index()]));
            prop_assert_eq!(best_by_q(&q), Some(chosen));
        }
    }
}
