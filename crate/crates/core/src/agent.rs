//! Planner and Thinker loop over the tool registry.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::harness::BenchmarkItem;
use crate::score::Score;
use crate::tools::{Evidence, Registry, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("the scripted backend has no responses left")]
    Exhausted,
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("backend not configured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

/// A chat-completion model.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, messages: &[Message], decoding: &Decoding) -> Result<String, BackendError>;

    /// Short description recorded in traces and reports.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhenExhausted {
    Fail,
    RepeatLast,
}

/// Replays a fixed list of responses and records every prompt it receives.
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    when_exhausted: WhenExhausted,
    cursor: Mutex<usize>,
    prompts: Mutex<Vec<Vec<Message>>>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        ScriptedBackend {
            responses,
            when_exhausted: WhenExhausted::Fail,
            cursor: Mutex::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn repeating(responses: Vec<String>) -> Self {
        ScriptedBackend {
            when_exhausted: WhenExhausted::RepeatLast,
            ..ScriptedBackend::new(responses)
        }
    }

    /// Every message list passed to `complete`, in call order.
    pub fn prompts(&self) -> Vec<Vec<Message>> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, messages: &[Message], _: &Decoding) -> Result<String, BackendError> {
        self.prompts
            .lock()
            .expect("prompt log")
            .push(messages.to_vec());
        let mut cursor = self.cursor.lock().expect("cursor");
        let reply = match self.responses.get(*cursor) {
            Some(r) => r.clone(),
            None => match (self.when_exhausted, self.responses.last()) {
                (WhenExhausted::RepeatLast, Some(last)) => last.clone(),
                _ => return Err(BackendError::Exhausted),
            },
        };
        *cursor += 1;
        Ok(reply)
    }

    fn describe(&self) -> String {
        format!("scripted ({} responses)", self.responses.len())
    }
}

/// Wraps a closure as a backend.
pub struct FnBackend<F>(pub F);

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&[Message]) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, messages: &[Message], _: &Decoding) -> Result<String, BackendError> {
        (self.0)(messages)
    }

    fn describe(&self) -> String {
        "function".to_string()
    }
}

/// Chat-completion endpoint over HTTP.
pub struct RemoteBackend {
    base: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(180)))
            .build();
        RemoteBackend {
            base: base.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            agent: config.into(),
        }
    }

    /// Reads `LLM_API_BASE`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var("LLM_API_BASE")
            .map_err(|_| BackendError::Config("LLM_API_BASE is not set".to_string()))?;
        let model = std::env::var("LLM_MODEL")
            .map_err(|_| BackendError::Config("LLM_MODEL is not set".to_string()))?;
        Ok(RemoteBackend::new(
            base,
            std::env::var("LLM_API_KEY").ok(),
            model,
        ))
    }
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, messages: &[Message], decoding: &Decoding) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
        });
        let mut request = self.agent.post(format!("{}/chat/completions", self.base));
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::Protocol("no message content in the first choice".to_string())
            })
    }

    fn describe(&self) -> String {
        format!("remote {} at {}", self.model, self.base)
    }
}

/// Versioned prompt templates.
#[derive(Debug, Clone, Copy)]
pub struct PromptProfile {
    pub id: &'static str,
    pub planner: &'static str,
    pub thinker_system: &'static str,
    pub thinker_task: &'static str,
    pub observation: &'static str,
    pub unparsed: &'static str,
    pub forced_choice: &'static str,
    pub direct: &'static str,
    pub cot: &'static str,
    pub exemplars: &'static str,
}

const V1: PromptProfile = PromptProfile {
    id: "v1",
    planner: include_str!("../prompts/v1/planner.txt"),
    thinker_system: include_str!("../prompts/v1/thinker_system.txt"),
    thinker_task: include_str!("../prompts/v1/thinker_task.txt"),
    observation: include_str!("../prompts/v1/observation.txt"),
    unparsed: include_str!("../prompts/v1/unparsed.txt"),
    forced_choice: include_str!("../prompts/v1/forced_choice.txt"),
    direct: include_str!("../prompts/v1/direct.txt"),
    cot: include_str!("../prompts/v1/cot.txt"),
    exemplars: include_str!("../prompts/v1/exemplars.jsonl"),
};

impl PromptProfile {
    pub fn get(id: &str) -> Option<PromptProfile> {
        match id {
            "v1" => Some(V1),
            _ => None,
        }
    }
}

/// Fills `{name}` placeholders; other braces are left alone.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out.trim_end().to_string()
}

pub fn format_options(options: &BTreeMap<char, String>) -> String {
    options
        .iter()
        .map(|(k, v)| format!("{k}. {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub decoding: Decoding,
    pub profile: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 12,
            decoding: Decoding::default(),
            profile: "v1".to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("unknown prompt profile `{0}`")]
    UnknownProfile(String),
    #[error("max_steps must be at least 1")]
    InvalidConfig,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
    pub warning: Option<String>,
}

pub const FALLBACK_STEP: &str = "analyze and answer";
const MAX_PLAN_STEPS: usize = 8;

/// Parses a numbered list such as `1. Estimate key` or `2) Label chords`.
pub fn parse_plan(text: &str) -> Plan {
    let numbered = Regex::new(r"^\s*\**\s*\d+\s*[.):]\s*(.+?)\s*$").expect("valid regex");
    let steps: Vec<String> = text
        .lines()
        .filter_map(|l| numbered.captures(l))
        .map(|c| c[1].trim_matches('*').trim().to_string())
        .filter(|s| !s.is_empty())
        .take(MAX_PLAN_STEPS)
        .collect();
    if steps.is_empty() {
        Plan {
            steps: vec![FALLBACK_STEP.to_string()],
            warning: Some("the planner reply had no numbered steps".to_string()),
        }
    } else {
        Plan {
            steps,
            warning: None,
        }
    }
}

/// Asks the backend for a plan.
pub fn plan(
    question: &str,
    options: &BTreeMap<char, String>,
    digest: &str,
    registry: &Registry,
    backend: &dyn LlmBackend,
    config: &AgentConfig,
) -> Result<Plan, AgentError> {
    if question.trim().is_empty() {
        return Err(AgentError::InvalidItem {
            id: String::new(),
            reason: "empty question".to_string(),
        });
    }
    if options.len() < 2 {
        return Err(AgentError::InvalidItem {
            id: String::new(),
            reason: "fewer than two options".to_string(),
        });
    }
    let profile = PromptProfile::get(&config.profile)
        .ok_or_else(|| AgentError::UnknownProfile(config.profile.clone()))?;
    let prompt = fill(
        profile.planner,
        &[
            ("question", question),
            ("options", &format_options(options)),
            ("digest", digest),
            ("roster", &registry.roster_text()),
        ],
    );
    let reply = complete_with_retry(backend, &[Message::user(prompt)], &config.decoding)?;
    let plan = parse_plan(&reply);
    if let Some(w) = &plan.warning {
        log::debug!("{w}; using a single fallback step");
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall { call: ToolCall },
    FinalAnswer { letter: char },
    ParseFailure { reason: String },
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_lowercase().find(&needle.to_lowercase())
}

/// The first fenced block, or the first brace-balanced object, in `text`.
fn json_block(text: &str) -> Option<&str> {
    let fence = text.find("```");
    let brace = text.find('{');
    if let Some(start) = fence.filter(|f| brace.is_none_or(|b| *f < b)) {
        let body = &text[start + 3..];
        let body = body.strip_prefix("json").unwrap_or(body);
        let end = body.find("```")?;
        return Some(body[..end].trim());
    }
    let start = brace?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Reads the model's reply. A `Final Answer:` marker anywhere wins over an
/// action block.
pub fn parse_action(text: &str) -> Action {
    if let Some(pos) = find_ci(text, "final answer:") {
        let rest = text[pos + "final answer:".len()..].trim_start();
        let letter = rest
            .chars()
            .find(|c| !matches!(c, '*' | '(' | '[' | '"' | '\'' | ' '))
            .map(|c| c.to_ascii_uppercase());
        let next = rest
            .trim_start_matches(['*', '(', '[', '"', '\'', ' '])
            .chars()
            .nth(1);
        return match letter {
            Some(l @ 'A'..='D') if next.is_none_or(|n| !n.is_alphanumeric()) => {
                Action::FinalAnswer { letter: l }
            }
            _ => Action::ParseFailure {
                reason: "the final answer is not a letter from A to D".to_string(),
            },
        };
    }
    let Some(pos) = find_ci(text, "action:") else {
        return Action::ParseFailure {
            reason: "no action or final answer found".to_string(),
        };
    };
    let Some(block) = json_block(&text[pos + "action:".len()..]) else {
        return Action::ParseFailure {
            reason: "no JSON object after the action marker".to_string(),
        };
    };
    let value: Value = match serde_json::from_str(block) {
        Ok(v) => v,
        Err(_) => {
            return Action::ParseFailure {
                reason: "the action is not valid JSON".to_string(),
            }
        }
    };
    let tool = value
        .get("tool")
        .or_else(|| value.get("name"))
        .and_then(Value::as_str);
    let args = value
        .get("args")
        .or_else(|| value.get("arguments"))
        .cloned()
        .unwrap_or_else(|| json!({}));
    match (tool, args) {
        (Some(tool), Value::Object(args)) => Action::ToolCall {
            call: ToolCall {
                tool: tool.to_string(),
                args,
            },
        },
        (None, _) => Action::ParseFailure {
            reason: "the action names no tool".to_string(),
        },
        (Some(_), _) => Action::ParseFailure {
            reason: "the action arguments are not an object".to_string(),
        },
    }
}

/// Last standalone capital letter A–D in `text`, or a `Final Answer:`
/// letter when present.
pub fn extract_letter(text: &str) -> Option<char> {
    if let Action::FinalAnswer { letter } = parse_action(text) {
        return Some(letter);
    }
    let chars: Vec<char> = text.chars().collect();
    (0..chars.len()).rev().find_map(|i| {
        let c = chars[i];
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1);
        let standalone = before.is_none_or(|b| !b.is_alphanumeric())
            && after.is_none_or(|a| !a.is_alphanumeric());
        (matches!(c, 'A'..='D') && standalone).then_some(c)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub thought: String,
    pub action: Action,
    pub evidence: Option<Evidence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    StepCap,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTrace {
    pub item_id: String,
    pub profile: String,
    pub backend: String,
    pub max_steps: usize,
    pub plan: Vec<String>,
    pub plan_warning: Option<String>,
    pub steps: Vec<TraceStep>,
    #[serde(rename = "final")]
    pub final_answer: Option<char>,
    pub terminated_by: Termination,
    pub error: Option<String>,
}

impl EvidenceTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn evidence(&self) -> impl Iterator<Item = &Evidence> {
        self.steps.iter().filter_map(|s| s.evidence.as_ref())
    }
}

fn complete_with_retry(
    backend: &dyn LlmBackend,
    messages: &[Message],
    decoding: &Decoding,
) -> Result<String, BackendError> {
    match backend.complete(messages, decoding) {
        Err(BackendError::Transport(first)) => {
            log::warn!("backend transport failure, retrying once: {first}");
            backend.complete(messages, decoding)
        }
        other => other,
    }
}

fn thought_of(reply: &str) -> String {
    let cut = [find_ci(reply, "final answer:"), find_ci(reply, "action:")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(reply.len());
    let head = reply[..cut].trim();
    let head = match find_ci(head, "thought:") {
        Some(p) => head[p + "thought:".len()..].trim(),
        None => head,
    };
    head.to_string()
}

fn unparsed_call() -> ToolCall {
    ToolCall {
        tool: "(unparsed)".to_string(),
        args: Default::default(),
    }
}

/// Runs the Planner and then the Thinker loop for one item. Backend
/// failures are recorded in the trace rather than returned.
pub fn run_agent(
    item: &BenchmarkItem,
    score: &Score,
    registry: &Registry,
    backend: &dyn LlmBackend,
    config: &AgentConfig,
) -> Result<EvidenceTrace, AgentError> {
    if config.max_steps == 0 {
        return Err(AgentError::InvalidConfig);
    }
    let profile = PromptProfile::get(&config.profile)
        .ok_or_else(|| AgentError::UnknownProfile(config.profile.clone()))?;
    let mut trace = EvidenceTrace {
        item_id: item.id.clone(),
        profile: profile.id.to_string(),
        backend: backend.describe(),
        max_steps: config.max_steps,
        plan: Vec::new(),
        plan_warning: None,
        steps: Vec::new(),
        final_answer: None,
        terminated_by: Termination::BackendError,
        error: None,
    };
    let digest = Registry::default()
        .execute(score, &ToolCall::new("score_overview", json!({})))
        .summary;
    let plan = match plan(
        &item.question,
        &item.options,
        &digest,
        registry,
        backend,
        config,
    ) {
        Ok(p) => p,
        Err(AgentError::Backend(e)) => {
            trace.error = Some(e.to_string());
            return Ok(trace);
        }
        Err(AgentError::InvalidItem { reason, .. }) => {
            return Err(AgentError::InvalidItem {
                id: item.id.clone(),
                reason,
            })
        }
        Err(e) => return Err(e),
    };
    trace.plan = plan.steps;
    trace.plan_warning = plan.warning;

    let options = format_options(&item.options);
    let plan_text = trace
        .plan
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let mut messages = vec![
        Message::system(fill(
            profile.thinker_system,
            &[
                ("roster", &registry.roster_text()),
                ("max_steps", &config.max_steps.to_string()),
            ],
        )),
        Message::user(fill(
            profile.thinker_task,
            &[
                ("question", &item.question),
                ("options", &options),
                ("plan", &plan_text),
            ],
        )),
    ];

    while trace.steps.len() < config.max_steps {
        let reply = match complete_with_retry(backend, &messages, &config.decoding) {
            Ok(r) => r,
            Err(e) => {
                trace.terminated_by = Termination::BackendError;
                trace.error = Some(e.to_string());
                return Ok(trace);
            }
        };
        messages.push(Message::assistant(reply.clone()));
        let thought = thought_of(&reply);
        match parse_action(&reply) {
            Action::FinalAnswer { letter } => {
                trace.steps.push(TraceStep {
                    thought,
                    action: Action::FinalAnswer { letter },
                    evidence: None,
                });
                trace.final_answer = Some(letter);
                trace.terminated_by = Termination::Answer;
                return Ok(trace);
            }
            Action::ToolCall { call } => {
                let evidence = registry.execute(score, &call);
                messages.push(Message::user(fill(
                    profile.observation,
                    &[("summary", &evidence.summary)],
                )));
                trace.steps.push(TraceStep {
                    thought,
                    action: Action::ToolCall { call },
                    evidence: Some(evidence),
                });
            }
            Action::ParseFailure { reason } => {
                let text = format!("could not parse action: {reason}.");
                messages.push(Message::user(profile.unparsed.trim_end().to_string()));
                trace.steps.push(TraceStep {
                    thought,
                    action: Action::ParseFailure { reason },
                    evidence: Some(Evidence {
                        call: unparsed_call(),
                        summary: text.clone(),
                        structured: Value::Null,
                        ok: false,
                        error_text: Some(text),
                    }),
                });
            }
        }
    }

    let evidence = trace
        .evidence()
        .filter(|e| e.ok)
        .map(|e| format!("- {}", e.summary))
        .collect::<Vec<_>>();
    let evidence = if evidence.is_empty() {
        "(none)".to_string()
    } else {
        evidence.join("\n")
    };
    let prompt = fill(
        profile.forced_choice,
        &[
            ("question", &item.question),
            ("evidence", &evidence),
            ("options", &options),
        ],
    );
    match complete_with_retry(backend, &[Message::user(prompt)], &config.decoding) {
        Ok(reply) => {
            trace.final_answer = extract_letter(&reply).filter(|l| item.options.contains_key(l));
            trace.terminated_by = Termination::StepCap;
        }
        Err(e) => {
            trace.terminated_by = Termination::BackendError;
            trace.error = Some(e.to_string());
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMismatch {
    pub step: usize,
    pub recorded: Evidence,
    pub replayed: Evidence,
}

/// Re-executes every tool call in `trace` and reports steps whose evidence
/// differs from what was recorded.
pub fn replay_trace(
    trace: &EvidenceTrace,
    score: &Score,
    registry: &Registry,
) -> Vec<ReplayMismatch> {
    trace
        .steps
        .iter()
        .enumerate()
        .filter_map(|(i, step)| match (&step.action, &step.evidence) {
            (Action::ToolCall { call }, Some(recorded)) => {
                let replayed = registry.execute(score, call);
                (replayed != *recorded).then(|| ReplayMismatch {
                    step: i,
                    recorded: recorded.clone(),
                    replayed,
                })
            }
            _ => None,
        })
        .collect()
}
