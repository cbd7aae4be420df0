use std::time::Instant;

use super::{ControlError, Controller, Decision, DecisionContext, Tier};
use crate::observe::digest_json;
use crate::prompting::{chat_complete, parse, render, EndpointConfig, DEFAULT_TASK};

/// Renders the tier's prompt, asks the endpoint and parses the reply. Any
/// failure (transport, auth, malformed reply) hands the decision to the
/// fallback controller and tags it [`Tier::Baseline`].
pub struct LlmController {
    endpoint: EndpointConfig,
    task: String,
    fallback: Box<dyn Controller>,
    fallbacks: usize,
}

impl LlmController {
    pub fn new(
        endpoint: EndpointConfig,
        task: Option<String>,
        fallback: Box<dyn Controller>,
    ) -> Self {
        LlmController {
            endpoint,
            task: task.unwrap_or_else(|| DEFAULT_TASK.to_string()),
            fallback,
            fallbacks: 0,
        }
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

impl Controller for LlmController {
    fn name(&self) -> &str {
        "llm"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, ControlError> {
        let started = Instant::now();
        let tier = ctx.view.tier;
        let bundle = render(ctx.view, tier, &self.task);
        let reply = chat_complete(&self.endpoint, &bundle)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                parse(&raw, tier)
                    .map(|p| (raw, p))
                    .map_err(|e| e.to_string())
            });
        match reply {
            Ok((raw, parsed)) => Ok(Decision {
                phase: parsed.signal,
                tier,
                rationale_digest: digest_json(raw.as_bytes()),
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
                fallback: false,
            }),
            Err(reason) => {
                log::warn!(
                    "LLM decision failed at {} t={}: {reason}; using fallback",
                    ctx.view.obs.intersection,
                    ctx.view.obs.timestamp
                );
                self.fallbacks += 1;
                let mut d = self.fallback.decide(ctx)?;
                d.tier = Tier::Baseline;
                d.fallback = true;
                d.latency_ms = started.elapsed().as_secs_f64() * 1e3;
                Ok(d)
            }
        }
    }
}
