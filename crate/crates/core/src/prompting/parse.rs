use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::network::PhaseId;
use crate::observe::Tier;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    NoJson,
    #[error("reply contains conflicting JSON objects")]
    Conflicting,
    #[error("missing or invalid signal: {0}")]
    InvalidSignal(String),
    #[error("{tier} reply is missing field {field}")]
    MissingField {
        tier: &'static str,
        field: &'static str,
    },
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

/// A validated model reply. Field presence follows the tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedReply {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<BTreeMap<PhaseId, Value>>,
    pub signal: PhaseId,
}

impl ParsedReply {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

/// Top-level `{...}` spans in `text`, skipping braces inside strings.
fn object_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (k, &b) in bytes.iter().enumerate() {
        if depth > 0 && in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_str = true,
            b'{' => {
                if depth == 0 {
                    start = k;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push(&text[start..=k]);
                }
            }
            _ => {}
        }
    }
    out
}

/// Contents of ``` fenced blocks.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(0, |n| n + 1);
        let Some(close) = after[body_start..].find("```") else {
            break;
        };
        out.push(&after[body_start..body_start + close]);
        rest = &after[body_start + close + 3..];
    }
    out
}

fn extract(raw: &str) -> Result<Map<String, Value>, ParseError> {
    let fenced = fenced_blocks(raw);
    let sources: Vec<&str> = if fenced.is_empty() { vec![raw] } else { fenced };
    let mut objects: Vec<Map<String, Value>> = Vec::new();
    for src in sources {
        for span in object_spans(src) {
            if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(span) {
                objects.push(m);
            }
        }
    }
    let first = objects.first().cloned().ok_or(ParseError::NoJson)?;
    if objects.iter().any(|o| *o != first) {
        return Err(ParseError::Conflicting);
    }
    Ok(first)
}

fn tier_name(tier: Tier) -> &'static str {
    tier.as_str()
}

/// Extract and validate the reply for `tier`.
pub fn parse(raw: &str, tier: Tier) -> Result<ParsedReply, ParseError> {
    let obj = extract(raw)?;
    let signal = match obj.get("signal") {
        Some(Value::String(s)) => s
            .parse::<PhaseId>()
            .map_err(|_| ParseError::InvalidSignal(s.clone()))?,
        Some(other) => return Err(ParseError::InvalidSignal(other.to_string())),
        None => return Err(ParseError::InvalidSignal("absent".into())),
    };
    let n_c = match obj.get("n_c") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| ParseError::InvalidField {
            field: "n_c",
            reason: format!("expected a count, got {v}"),
        })? as usize),
    };
    let analysis = match obj.get("analysis") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(v) => {
            return Err(ParseError::InvalidField {
                field: "analysis",
                reason: format!("expected text, got {v}"),
            })
        }
    };
    let predictions = match obj.get("predictions") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => {
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let p = k.parse::<PhaseId>().map_err(|_| ParseError::InvalidField {
                    field: "predictions",
                    reason: format!("unknown phase {k}"),
                })?;
                out.insert(p, v.clone());
            }
            if out.len() != PhaseId::ALL.len() {
                return Err(ParseError::InvalidField {
                    field: "predictions",
                    reason: "expected one entry per phase".into(),
                });
            }
            Some(out)
        }
        Some(v) => {
            return Err(ParseError::InvalidField {
                field: "predictions",
                reason: format!("expected an object, got {v}"),
            })
        }
    };
    let missing = |field| ParseError::MissingField {
        tier: tier_name(tier),
        field,
    };
    match tier {
        Tier::NoCoop | Tier::Baseline => {}
        Tier::Simple => {
            analysis.as_ref().ok_or_else(|| missing("analysis"))?;
        }
        Tier::Complex => {
            analysis.as_ref().ok_or_else(|| missing("analysis"))?;
            predictions.as_ref().ok_or_else(|| missing("predictions"))?;
        }
    }
    Ok(ParsedReply {
        n_c,
        analysis,
        predictions,
        signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_reply() {
        let r = parse(r#"{"signal":"ELWL"}"#, Tier::NoCoop).unwrap();
        assert_eq!(r.signal, PhaseId::ELWL);
        assert_eq!(
            parse(r#"{"signal":"nlsl"}"#, Tier::NoCoop).unwrap().signal,
            PhaseId::NLSL
        );
    }

    #[test]
    fn prose_then_fence() {
        let raw = "Looking at the queues, east-west dominates {roughly}.\n```json\n{\"analysis\": \"EW heavy {really}\", \"signal\": \"ETWT\"}\n```\nDone.";
        let r = parse(raw, Tier::Simple).unwrap();
        assert_eq!(r.signal, PhaseId::ETWT);
        assert_eq!(r.analysis.as_deref(), Some("EW heavy {really}"));
    }

    #[test]
    fn complex_needs_predictions() {
        let raw = r#"{"analysis":"a","signal":"NTST"}"#;
        assert_eq!(
            parse(raw, Tier::Complex),
            Err(ParseError::MissingField {
                tier: "complex",
                field: "predictions"
            })
        );
        assert!(parse(raw, Tier::Simple).is_ok());
    }

    #[test]
    fn bad_signals_and_conflicts() {
        assert!(matches!(
            parse(r#"{"signal":"NSLT"}"#, Tier::NoCoop),
            Err(ParseError::InvalidSignal(_))
        ));
        assert!(matches!(
            parse(r#"{"phase":"NTST"}"#, Tier::NoCoop),
            Err(ParseError::InvalidSignal(_))
        ));
        assert_eq!(parse("no json here", Tier::NoCoop), Err(ParseError::NoJson));
        assert_eq!(
            parse(r#"{"signal":"NTST"} or {"signal":"ETWT"}"#, Tier::NoCoop),
            Err(ParseError::Conflicting)
        );
        // Repeating the same object is not a conflict.
        assert!(parse(r#"{"signal":"NTST"} {"signal":"NTST"}"#, Tier::NoCoop).is_ok());
    }

    fn phase() -> impl Strategy<Value = PhaseId> {
        (0usize..4).prop_map(PhaseId::from_index)
    }

    proptest! {
        #[test]
        fn canonical_round_trip(tier_k in 0usize..3, sig in phase(), n_c in 0usize..9, text in "[a-zA-Z0-9 {}\"\\\\.,]{0,40}") {
            let tier = [Tier::NoCoop, Tier::Simple, Tier::Complex][tier_k];
            let reply = ParsedReply {
                n_c: (tier != Tier::NoCoop).then_some(n_c),
                analysis: (tier != Tier::NoCoop).then(|| text.clone()),
                predictions: (tier == Tier::Complex).then(|| {
                    PhaseId::ALL.iter().map(|p| (*p, Value::String(format!("{p}:{text}")))).collect()
                }),
                signal: sig,
            };
            prop_assert_eq!(parse(&reply.to_json(), tier).unwrap(), reply);
        }
    }
}
