//! Prompt rendering, response parsing and a blocking chat-completion client
//! for planners backed by a hosted language model.
//!
//! Two prompt tiers mirror the two action tiers: the sector-level prompt ends
//! in `Decision:` and the route-level prompt in `Action Plan:`. Templates ship
//! in `templates/` and can be replaced from files at runtime.

use crate::action::{Action, Tier, PASS_TOKEN};
use crate::geometry::Sector;
use crate::planner::{FaultConfig, MockPlanner, Planner, PlannerProposal, PlannerSource, ProposalIssue};
use crate::replay::PlannerRecord;
use crate::world::{DroneId, World, WorldState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const GLOBAL_TEMPLATE: &str = include_str!("../templates/global.txt");
pub const LOCAL_TEMPLATE: &str = include_str!("../templates/local.txt");

pub const GLOBAL_MARKER: &str = "Decision:";
pub const LOCAL_MARKER: &str = "Action Plan:";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no action could be read from the model output {raw:?}")]
    ParseFailure { raw: String },
    #[error("endpoint unavailable after {attempts} attempt(s): {detail}")]
    EndpointUnavailable { attempts: u32, detail: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("bad template: {0}")]
    Template(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub fn marker(tier: Tier) -> &'static str {
    match tier {
        Tier::Global => GLOBAL_MARKER,
        Tier::Local => LOCAL_MARKER,
    }
}

fn placeholders(tier: Tier) -> &'static [&'static str] {
    match tier {
        Tier::Global => &["{state_info}", "{incontext_examples_global}", "{input}"],
        Tier::Local => &[
            "{incontext_examples_execution}",
            "{warehouse_location}",
            "{customers_list}",
            "{input}",
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub tier: Tier,
    text: String,
}

impl PromptTemplate {
    pub fn builtin(tier: Tier) -> Self {
        let raw = match tier {
            Tier::Global => GLOBAL_TEMPLATE,
            Tier::Local => LOCAL_TEMPLATE,
        };
        Self::from_text(tier, raw).expect("bundled templates are valid")
    }

    /// Leading `#` lines are documentation and are dropped. Every placeholder
    /// of the tier must appear, and the text must end with the tier's marker.
    pub fn from_text(tier: Tier, raw: &str) -> Result<Self, LlmError> {
        let text: String = raw
            .lines()
            .skip_while(|l| l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let text = text.trim_end().to_string();
        for p in placeholders(tier) {
            if !text.contains(p) {
                return Err(LlmError::Template(format!("missing placeholder {p}")));
            }
        }
        if !text.ends_with(marker(tier)) {
            return Err(LlmError::Template(format!("must end with {:?}", marker(tier))));
        }
        if text.matches(marker(tier)).count() != 1 {
            return Err(LlmError::Template(format!("{:?} must appear exactly once", marker(tier))));
        }
        Ok(Self { tier, text })
    }

    pub fn from_file(tier: Tier, path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(tier, &raw)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitute `(placeholder, value)` pairs.
    pub fn fill(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (k, v) in values {
            out = out.replace(k, v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub global: PromptTemplate,
    pub local: PromptTemplate,
    /// Rough prompt budget; tokens are estimated as `ceil(chars / 4)`.
    pub token_budget: usize,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            global: PromptTemplate::builtin(Tier::Global),
            local: PromptTemplate::builtin(Tier::Local),
            token_budget: 4096,
        }
    }
}

impl PromptSet {
    pub fn template(&self, tier: Tier) -> &PromptTemplate {
        match tier {
            Tier::Global => &self.global,
            Tier::Local => &self.local,
        }
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    /// Memory examples dropped (oldest first) to meet the budget.
    pub dropped: usize,
}

fn per_sector<T: std::fmt::Display>(v: &[T; 4]) -> String {
    // sector index order is east, north, west, south
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("/")
}

fn fmt_point(x: f64, y: f64) -> String {
    format!("({x:.1}, {y:.1})")
}

/// Key-value summary used for `{state_info}`.
pub fn state_info(world: &World, state: &WorldState, drone: DroneId) -> String {
    let d = &state.drones[drone];
    format!(
        "drone={} step={}/{} position={} battery={:.2} pending={} assigned={} distance={:.0} fleet={}",
        drone,
        state.t,
        world.config().grid.max_steps,
        fmt_point(d.position.x, d.position.y),
        d.soc.fraction(),
        per_sector(&state.pending_counts()),
        d.sector.map_or("none", Sector::token),
        d.cumulative_distance,
        per_sector(&state.drones_per_sector(Some(drone))),
    )
}

fn example(tier: Tier, r: &PlannerRecord) -> String {
    let s = &r.s;
    let desc = match tier {
        Tier::Global => format!(
            "step {} drone {} battery={:.2} pending_share={}",
            r.t,
            r.drone_id,
            s.battery,
            s.sector_pending.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/"),
        ),
        Tier::Local => format!("step {} drone {} battery={:.2}", r.t, r.drone_id, s.battery),
    };
    let outcome = match r.fault_class {
        Some(c) if r.override_flag => format!("overridden ({c})"),
        _ => "accepted".to_string(),
    };
    format!("Description: {desc}\n{} {}\nOutcome: {outcome}", marker(tier), r.proposed)
}

/// Render the prompt for `drone`. Memory records of the other tier are
/// skipped; the rest become example pairs, oldest first.
pub fn render_prompt(
    prompts: &PromptSet,
    world: &World,
    state: &WorldState,
    drone: DroneId,
    memory: &[&PlannerRecord],
) -> RenderedPrompt {
    let tier = world.tier(state, drone);
    let d = &state.drones[drone];
    let examples: Vec<String> = memory
        .iter()
        .filter(|r| r.proposed.tier() == Some(tier))
        .map(|r| example(tier, r))
        .collect();
    let render = |ex: &[String]| -> String {
        let ex = if ex.is_empty() { "(none yet)".to_string() } else { ex.join("\n\n") };
        match tier {
            Tier::Global => {
                let input = format!(
                    "Drone {drone} is at {} with battery {:.2} and no packages on board.",
                    fmt_point(d.position.x, d.position.y),
                    d.soc.fraction()
                );
                prompts.global.fill(&[
                    ("{incontext_examples_global}", &ex),
                    ("{state_info}", &state_info(world, state, drone)),
                    ("{input}", &input),
                ])
            }
            Tier::Local => {
                let plan = world.plan_carried(state, drone);
                let customers = if plan.stops.is_empty() {
                    "none".to_string()
                } else {
                    plan.stops
                        .iter()
                        .map(|c| {
                            let p = state.customers[c.0 as usize].position;
                            format!("{c} at {}", fmt_point(p.x, p.y))
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                let mut route: Vec<String> = plan.stops.iter().map(ToString::to_string).collect();
                route.push("warehouse".to_string());
                let input = format!(
                    "Drone {drone} is at {} with battery {:.2}. Route plan: {}.",
                    fmt_point(d.position.x, d.position.y),
                    d.soc.fraction(),
                    route.join(" -> ")
                );
                let w = world.warehouse();
                prompts.local.fill(&[
                    ("{incontext_examples_execution}", &ex),
                    ("{warehouse_location}", &fmt_point(w.x, w.y)),
                    ("{customers_list}", &customers),
                    ("{input}", &input),
                ])
            }
        }
    };
    let mut first = 0;
    let mut text = render(&examples);
    while estimate_tokens(&text) > prompts.token_budget && first < examples.len() {
        first += 1;
        text = render(&examples[first..]);
    }
    RenderedPrompt { text, dropped: first }
}

/// Read the action after the last tier marker (case-insensitive). Without a
/// marker the whole reply is tried as a bare action.
pub fn parse_decision(tier: Tier, response: &str) -> Result<Action, LlmError> {
    let fail = || LlmError::ParseFailure { raw: response.to_string() };
    let lower = response.to_ascii_lowercase();
    let m = marker(tier).to_ascii_lowercase();
    let tail = match lower.rfind(&m) {
        Some(i) => &response[i + m.len()..],
        None => response,
    };
    let line = tail.lines().map(str::trim).find(|l| !l.is_empty()).ok_or_else(fail)?;
    if line.to_ascii_lowercase().contains(PASS_TOKEN) {
        return Ok(Action::Pass);
    }
    if let Some(a) = Action::from_token(line, tier) {
        return Ok(a);
    }
    let first = line.split_whitespace().next().unwrap_or("");
    Action::from_token(first, tier).ok_or_else(fail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Up to and excluding `/chat/completions`.
    pub base_url: String,
    pub model_name_global: String,
    pub model_name_local: String,
    /// Variable holding the bearer token; empty sends no authorization.
    pub api_key_env_var_name: String,
    /// Seconds per attempt. Total wall time is capped at
    /// `timeout * (max_retries + 1)`.
    pub timeout: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First retry delay in seconds, doubled each retry.
    pub backoff: f64,
    pub token_budget: usize,
    pub global_template: Option<PathBuf>,
    pub local_template: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name_global: "gpt-4o".to_string(),
            model_name_local: "gpt-4o-mini".to_string(),
            api_key_env_var_name: "OPENAI_API_KEY".to_string(),
            timeout: 30.0,
            max_retries: 2,
            temperature: 0.0,
            backoff: 0.5,
            token_budget: 4096,
            global_template: None,
            local_template: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidConfig(m.to_string()));
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return bad("timeout must be positive");
        }
        if !(self.backoff >= 0.0 && self.backoff.is_finite()) {
            return bad("backoff must be finite and nonnegative");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.base_url.is_empty() {
            return bad("base_url is empty");
        }
        Ok(())
    }

    pub fn model(&self, tier: Tier) -> &str {
        match tier {
            Tier::Global => &self.model_name_global,
            Tier::Local => &self.model_name_local,
        }
    }

    pub fn prompts(&self) -> Result<PromptSet, LlmError> {
        let load = |tier, path: &Option<PathBuf>| match path {
            Some(p) => PromptTemplate::from_file(tier, p),
            None => Ok(PromptTemplate::builtin(tier)),
        };
        Ok(PromptSet {
            global: load(Tier::Global, &self.global_template)?,
            local: load(Tier::Local, &self.local_template)?,
            token_budget: self.token_budget,
        })
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        if self.api_key_env_var_name.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.api_key_env_var_name)
            .map(Some)
            .map_err(|_| LlmError::MissingApiKey(self.api_key_env_var_name.clone()))
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

fn attempt(cfg: &EndpointConfig, key: Option<&str>, body: &str, timeout: Duration) -> Attempt {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let mut req = agent.post(&url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = match req.send(body) {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(e.to_string()),
    };
    let status = resp.status().as_u16();
    let mut text = String::new();
    if let Err(e) = resp.body_mut().as_reader().read_to_string(&mut text) {
        return Attempt::Retry(format!("reading body: {e}"));
    }
    match status {
        200..=299 => match extract_content(&text) {
            Some(c) => Attempt::Done(c),
            None => Attempt::Fatal(format!("malformed response body: {}", truncate(&text, 200))),
        },
        408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
        _ => Attempt::Fatal(format!("HTTP {status}: {}", truncate(&text, 200))),
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

/// Single-turn chat completion. Transient failures (transport errors,
/// timeouts, 408, 429, 5xx) are retried with exponential backoff inside an
/// overall deadline of `timeout * (max_retries + 1)`.
pub fn chat_complete(cfg: &EndpointConfig, model: &str, prompt: &str) -> Result<String, LlmError> {
    cfg.validate()?;
    let key = cfg.api_key()?;
    let body = json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    })
    .to_string();
    let per_try = Duration::from_secs_f64(cfg.timeout);
    let deadline = Instant::now() + per_try * (cfg.max_retries + 1);
    let mut attempts = 0;
    let mut last = String::from("no attempt made");
    while attempts <= cfg.max_retries {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        attempts += 1;
        match attempt(cfg, key.as_deref(), &body, per_try.min(left)) {
            Attempt::Done(text) => return Ok(text),
            Attempt::Fatal(e) => {
                return Err(LlmError::EndpointUnavailable { attempts, detail: e });
            }
            Attempt::Retry(e) => {
                log::warn!("chat completion attempt {attempts} failed: {e}");
                last = e;
            }
        }
        if attempts <= cfg.max_retries {
            let wait = Duration::from_secs_f64(cfg.backoff * 2f64.powi(attempts as i32 - 1));
            let left = deadline.saturating_duration_since(Instant::now());
            std::thread::sleep(wait.min(left));
        }
    }
    Err(LlmError::EndpointUnavailable { attempts, detail: last })
}

/// Where completions come from; the HTTP endpoint in production, scripted
/// replies in tests.
pub trait ChatBackend: Send {
    fn complete(&mut self, model: &str, prompt: &str) -> Result<String, LlmError>;
}

pub struct HttpBackend(pub EndpointConfig);

impl ChatBackend for HttpBackend {
    fn complete(&mut self, model: &str, prompt: &str) -> Result<String, LlmError> {
        chat_complete(&self.0, model, prompt)
    }
}

/// Planner that asks a language model and falls back to the fault-free mock
/// whenever the endpoint cannot answer.
pub struct LlmPlanner {
    backend: Box<dyn ChatBackend>,
    endpoint: EndpointConfig,
    prompts: PromptSet,
    fallback: MockPlanner,
    /// Endpoint failures since construction.
    pub fallbacks: u64,
}

impl LlmPlanner {
    pub fn new(endpoint: EndpointConfig, reserve: f64) -> Result<Self, LlmError> {
        endpoint.validate()?;
        let backend = Box::new(HttpBackend(endpoint.clone()));
        Self::with_backend(endpoint, backend, reserve)
    }

    pub fn with_backend(endpoint: EndpointConfig, backend: Box<dyn ChatBackend>, reserve: f64) -> Result<Self, LlmError> {
        Ok(Self {
            backend,
            prompts: endpoint.prompts()?,
            endpoint,
            fallback: MockPlanner::new(FaultConfig::off(), reserve),
            fallbacks: 0,
        })
    }
}

impl Planner for LlmPlanner {
    fn reset(&mut self, episode_seed: u64, drone_count: usize) {
        self.fallback.reset(episode_seed, drone_count);
    }

    fn propose(
        &mut self,
        world: &World,
        state: &WorldState,
        drone: DroneId,
        memory: &[&PlannerRecord],
    ) -> PlannerProposal {
        let tier = world.tier(state, drone);
        let prompt = render_prompt(&self.prompts, world, state, drone, memory);
        let reply = self.backend.complete(self.endpoint.model(tier), &prompt.text);
        let truncated = (prompt.dropped > 0).then_some(ProposalIssue::MemoryTruncated { dropped: prompt.dropped });
        match reply {
            Ok(text) => {
                let (proposed, note) = match parse_decision(tier, &text) {
                    Ok(a) => (a, truncated),
                    Err(_) => {
                        log::warn!("drone {drone}: unparseable reply {text:?}");
                        (Action::Pass, Some(ProposalIssue::ParseFailure { raw: text.clone() }))
                    }
                };
                PlannerProposal {
                    drone_id: drone,
                    proposed,
                    tier,
                    source: PlannerSource::Llm,
                    raw_text: Some(text),
                    injected: None,
                    note,
                }
            }
            Err(e) => {
                log::warn!("drone {drone}: {e}; using the mock planner for this step");
                self.fallbacks += 1;
                let mut p = self.fallback.propose(world, state, drone, memory);
                p.note = Some(ProposalIssue::EndpointUnavailable { detail: e.to_string() });
                p
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldConfig;

    #[test]
    fn bundled_templates_end_with_marker_once() {
        let world = World::new(WorldConfig::default()).unwrap();
        let state = world.init_episode(3);
        let p = render_prompt(&PromptSet::default(), &world, &state, 0, &[]);
        assert_eq!(p.text.matches(GLOBAL_MARKER).count(), 1);
        assert!(p.text.ends_with(GLOBAL_MARKER));
        assert!(!p.text.contains('{'), "unresolved placeholder in {}", p.text);
        assert_eq!(p.dropped, 0);
        assert_eq!(p, render_prompt(&PromptSet::default(), &world, &state, 0, &[]));
    }

    #[test]
    fn template_validation() {
        assert!(matches!(
            PromptTemplate::from_text(Tier::Global, "{state_info} {input}\nDecision:"),
            Err(LlmError::Template(_))
        ));
        let ok = PromptTemplate::from_text(
            Tier::Global,
            "# doc line\n{state_info} {incontext_examples_global} {input}\nDecision:\n",
        )
        .unwrap();
        assert!(ok.text().starts_with("{state_info}"));
        assert!(PromptTemplate::from_text(Tier::Local, "{incontext_examples_execution} {warehouse_location} {customers_list} {input}").is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_decision(Tier::Global, "Decision: go_to_sector_east").unwrap(),
            Action::go_to(Sector::East)
        );
        assert_eq!(parse_decision(Tier::Global, "Decision: <pass>").unwrap(), Action::Pass);
        assert!(matches!(
            parse_decision(Tier::Global, "Decision: fly_to_moon"),
            Err(LlmError::ParseFailure { raw }) if raw == "Decision: fly_to_moon"
        ));
        assert_eq!(
            parse_decision(Tier::Local, "Sure.\naction plan: move_to_customer(C4) because it is closest").unwrap(),
            Action::move_to(crate::world::CustomerId(4))
        );
        assert_eq!(parse_decision(Tier::Local, "return_to_base").unwrap(), Action::RETURN);
        assert!(parse_decision(Tier::Local, "").is_err());
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Decision: idle"}}]}"#;
        assert_eq!(extract_content(body).as_deref(), Some("Decision: idle"));
        assert_eq!(extract_content(r#"{"choices":[]}"#), None);
        assert_eq!(extract_content("not json"), None);
    }

    #[test]
    fn endpoint_defaults() {
        let c = EndpointConfig::default();
        assert_eq!(c.model(Tier::Global), "gpt-4o");
        assert_eq!(c.model(Tier::Local), "gpt-4o-mini");
        assert_eq!(c.temperature, 0.0);
        assert!(c.validate().is_ok());
        let bad = EndpointConfig { timeout: 0.0, ..c };
        assert!(bad.validate().is_err());
    }
}
