//! Hypothesis generation: prompt-mode sampling, prompt rendering, reply
//! parsing with deduplication, and the retrying generation driver.

use crate::client::{ChatClient, ChatRequest};
use crate::domain::{default_options, DomainError, Hypothesis, HypothesisSet, Origin};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::HashSet;

pub const TEMPLATE_VERSION: &str = "v1";
pub const SEED_TEMPLATE: &str = include_str!("../templates/hypo_seed.v1.txt");
pub const EXPLOIT_TEMPLATE: &str = include_str!("../templates/hypo_exploit.v1.txt");
pub const EXPLORE_TEMPLATE: &str = include_str!("../templates/hypo_explore.v1.txt");

pub const DEFAULT_DOMAIN_CONTEXT: &str = "segment-level crash rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Bootstrap request for the initial set.
    Seed,
    Exploit,
    Explore,
}

impl PromptMode {
    pub fn origin(self) -> Origin {
        match self {
            PromptMode::Seed => Origin::Seed,
            PromptMode::Exploit => Origin::Exploit,
            PromptMode::Explore => Origin::Explore,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid generation request: {0}")]
    Request(String),
    #[error("no parsable hypothesis array in reply")]
    NoArray,
    #[error("only {} of {wanted} unique hypotheses in reply", survivors.len())]
    Shortfall {
        wanted: usize,
        survivors: Vec<Hypothesis>,
    },
    #[error("generation failed after {attempts} attempts ({} of {wanted} hypotheses): {last}", partial.len())]
    Exhausted {
        attempts: u32,
        wanted: usize,
        partial: Vec<Hypothesis>,
        last: String,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Inputs to one hypothesis-generation prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prior_set: HypothesisSet,
    /// p-values aligned with `prior_set.members`.
    pub prior_pvalues: Vec<f64>,
    pub m_new: usize,
    pub mode: PromptMode,
    pub domain_context: String,
    pub alpha: f64,
    /// Target set size k.
    pub set_size: usize,
    /// Iteration the generated hypotheses belong to.
    pub iteration: u32,
}

impl GenerationRequest {
    /// Request for the initial set of `k` hypotheses.
    pub fn bootstrap(k: usize, alpha: f64, domain_context: &str) -> Self {
        Self {
            prior_set: HypothesisSet {
                iter: 0,
                members: Vec::new(),
            },
            prior_pvalues: Vec::new(),
            m_new: k,
            mode: PromptMode::Seed,
            domain_context: domain_context.to_string(),
            alpha,
            set_size: k,
            iteration: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.m_new == 0 || self.m_new > self.set_size {
            return Err(GenerationError::Request(format!(
                "m_new must be in 1..={}, got {}",
                self.set_size, self.m_new
            )));
        }
        if self.prior_pvalues.len() != self.prior_set.len() {
            return Err(GenerationError::Request(format!(
                "{} p-values for {} prior hypotheses",
                self.prior_pvalues.len(),
                self.prior_set.len()
            )));
        }
        if self.mode != PromptMode::Seed && self.prior_set.is_empty() {
            return Err(GenerationError::Request(
                "exploit/explore prompts need a prior set".into(),
            ));
        }
        Ok(())
    }
}

/// One draw from `rng`: explore with probability `p_explore`.
pub fn choose_prompt_mode(rng: &mut SplitMix64, p_explore: f64) -> PromptMode {
    if rng.next_f64() < p_explore {
        PromptMode::Explore
    } else {
        PromptMode::Exploit
    }
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

/// Renders the seed, exploit or explore prompt for `req`.
pub fn render_prompt(req: &GenerationRequest) -> Result<String, GenerationError> {
    req.validate()?;
    let count = req.m_new.to_string();
    let context = req.domain_context.clone();
    Ok(match req.mode {
        PromptMode::Seed => fill(
            SEED_TEMPLATE,
            &[("domain_context", context), ("count", count)],
        ),
        PromptMode::Exploit => {
            let table = req
                .prior_set
                .members
                .iter()
                .zip(&req.prior_pvalues)
                .enumerate()
                .map(|(i, (h, p))| {
                    let marker = if *p <= req.alpha { '+' } else { '-' };
                    format!("{}. [{marker}] p={p:.4} | {}", i + 1, h.question)
                })
                .collect::<Vec<_>>()
                .join("\n");
            fill(
                EXPLOIT_TEMPLATE,
                &[
                    ("domain_context", context),
                    ("alpha", format!("{}", req.alpha)),
                    ("prior_block", table),
                    ("count", count),
                ],
            )
        }
        PromptMode::Explore => {
            let list = req
                .prior_set
                .members
                .iter()
                .enumerate()
                .map(|(i, h)| format!("{}. {}", i + 1, h.question))
                .collect::<Vec<_>>()
                .join("\n");
            fill(
                EXPLORE_TEMPLATE,
                &[
                    ("domain_context", context),
                    ("existing_block", list),
                    ("count", count),
                ],
            )
        }
    })
}

fn looks_like_hypothesis_array(items: &[Value]) -> bool {
    !items.is_empty()
        && items
            .iter()
            .all(|v| v.get("question").map(Value::is_string).unwrap_or(false))
}

/// First JSON array in `reply` whose elements are all objects with a string
/// `question` field. Surrounding prose and code fences are ignored.
fn extract_array(reply: &str) -> Option<Vec<Value>> {
    for (pos, _) in reply.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&reply[pos..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if looks_like_hypothesis_array(&items) {
                return Some(items);
            }
        }
    }
    None
}

fn item_options(item: &Value) -> Option<Vec<String>> {
    match item.get("options") {
        None | Some(Value::Null) => Some(default_options()),
        Some(Value::Array(opts)) => opts
            .iter()
            .map(|o| match o {
                Value::String(s) => Some(s.trim().to_string()),
                Value::Number(n) => Some(n.to_string()),
                Value::Bool(b) => Some(b.to_string()),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

/// Parses a generation reply into at most `m_new` hypotheses.
///
/// Items whose normalized question matches a retained hypothesis or an
/// earlier item are dropped, as are items with invalid option lists. Omitted
/// options default to `["no", "yes"]`.
pub fn parse_generation(
    reply: &str,
    m_new: usize,
    retained: &[Hypothesis],
    origin: Origin,
    iteration: u32,
) -> Result<Vec<Hypothesis>, GenerationError> {
    let items = extract_array(reply).ok_or(GenerationError::NoArray)?;
    let mut seen: HashSet<String> = retained.iter().map(Hypothesis::canonical).collect();
    let mut out = Vec::new();
    for item in &items {
        if out.len() == m_new {
            break;
        }
        let Some(question) = item.get("question").and_then(Value::as_str) else {
            continue;
        };
        let Some(options) = item_options(item) else {
            log::debug!("dropping {question:?}: unusable options");
            continue;
        };
        let h = match Hypothesis::new(question, options, origin, iteration) {
            Ok(h) => h,
            Err(e) => {
                log::debug!("dropping {question:?}: {e}");
                continue;
            }
        };
        if seen.insert(h.canonical()) {
            out.push(h);
        } else {
            log::debug!("dropping duplicate question {question:?}");
        }
    }
    if out.len() < m_new {
        return Err(GenerationError::Shortfall {
            wanted: m_new,
            survivors: out,
        });
    }
    Ok(out)
}

/// Model settings for generation calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after the first one.
    pub retries: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 1.0,
            max_tokens: 4096,
            retries: 3,
        }
    }
}

/// Renders, calls and parses until `req.m_new` unique hypotheses have been
/// accumulated, resending the full prompt up to `settings.retries` times.
/// Survivors of short replies are kept across attempts.
pub fn generate_replacements(
    req: &GenerationRequest,
    client: &dyn ChatClient,
    settings: &GenerationSettings,
) -> Result<Vec<Hypothesis>, GenerationError> {
    let prompt = render_prompt(req)?;
    let origin = req.mode.origin();
    let mut accumulated: Vec<Hypothesis> = Vec::new();
    let mut last = String::new();
    let attempts = settings.retries + 1;
    for attempt in 1..=attempts {
        let request = ChatRequest {
            model: settings.model.clone(),
            prompt: prompt.clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
            generation: Some(req.clone()),
        };
        let reply = match client.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("generation attempt {attempt}/{attempts}: {e}");
                last = e.to_string();
                continue;
            }
        };
        let mut known: Vec<Hypothesis> = req.prior_set.members.clone();
        if req.mode != PromptMode::Seed {
            // Only hypotheses that survive pruning count as retained.
            known.retain(|h| {
                let j = req.prior_set.members.iter().position(|m| m.id == h.id).unwrap();
                req.prior_pvalues[j] <= req.alpha
            });
        }
        known.extend(accumulated.iter().cloned());
        let wanted = req.m_new - accumulated.len();
        match parse_generation(&reply, wanted, &known, origin, req.iteration) {
            Ok(new) => {
                accumulated.extend(new);
                return Ok(accumulated);
            }
            Err(GenerationError::Shortfall { survivors, .. }) => {
                log::warn!(
                    "generation attempt {attempt}/{attempts}: {} of {wanted} usable hypotheses",
                    survivors.len()
                );
                last = format!("shortfall: {} of {wanted}", survivors.len());
                accumulated.extend(survivors);
            }
            Err(e) => {
                log::warn!("generation attempt {attempt}/{attempts}: {e}");
                last = e.to_string();
            }
        }
    }
    Err(GenerationError::Exhausted {
        attempts,
        wanted: req.m_new,
        partial: accumulated,
        last,
    })
}
