//! Chat-completion providers.
//!
//! Only this module talks to an LLM. [`MockLlm`] answers from a rule table
//! (exact or regex match on the user prompt, with `$1`-style capture
//! expansion) and otherwise echoes the user prompt, so every flow is
//! reproducible offline.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUMMARY_TEMPLATE: &str = include_str!("../templates/summary_v1.txt");
pub const CHANGE_SUMMARY_TEMPLATE: &str = include_str!("../templates/change_summary_v1.txt");

pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 64 * 1024;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 250;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("LLM request timed out")]
    Timeout,
    #[error("LLM output of {len} bytes exceeds the {cap} byte limit")]
    OutputTooLarge { len: usize, cap: usize },
    #[error("invalid LLM request: {0}")]
    InvalidRequest(String),
    #[error("invalid LLM configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::ProviderUnavailable(_) => "ProviderUnavailable",
            LlmError::Timeout => "Timeout",
            LlmError::OutputTooLarge { .. } => "OutputTooLarge",
            LlmError::InvalidRequest(_) => "Precondition",
            LlmError::Config(_) => "Config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub expect_structured: bool,
    pub max_output_bytes: usize,
}

impl LlmRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            expect_structured: false,
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
        }
    }

    pub fn structured(mut self) -> Self {
        self.expect_structured = true;
        self
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(LlmError::InvalidRequest("max_output_bytes must be positive".into()));
        }
        Ok(())
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Text to summarize: a single document or a before/after pair.
#[derive(Debug, Clone, Copy)]
pub enum SummaryInput<'a> {
    Document(&'a str),
    Change { old: &'a str, new: &'a str },
}

const SUMMARY_SYSTEM: &str = "You summarize files for a file-management assistant. Answer in plain text.";

/// The request `summarize` sends, exposed so callers can audit prompts.
pub fn summary_request(input: SummaryInput<'_>) -> Result<LlmRequest, LlmError> {
    let user = match input {
        SummaryInput::Document(text) => {
            if text.trim().is_empty() {
                return Err(LlmError::InvalidRequest("nothing to summarize".into()));
            }
            SUMMARY_TEMPLATE.trim_end().replace("{content}", text)
        }
        SummaryInput::Change { old, new } => {
            if old.is_empty() && new.is_empty() {
                return Err(LlmError::InvalidRequest("nothing to summarize".into()));
            }
            // fill {new} first so an {old} inside the new text is left alone
            CHANGE_SUMMARY_TEMPLATE.trim_end().replacen("{new}", new, 1).replacen("{old}", old, 1)
        }
    };
    Ok(LlmRequest::new(SUMMARY_SYSTEM, user))
}

pub fn summarize(llm: &dyn LlmClient, input: SummaryInput<'_>) -> Result<String, LlmError> {
    llm.complete(&summary_request(input)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Regex,
}

/// One line of a mock rule file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRuleSpec {
    #[serde(rename = "match")]
    pub pattern: String,
    pub kind: MatchKind,
    pub response: String,
    /// Restrict the rule to structured (parser) or plain (summary) requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<bool>,
}

#[derive(Debug, Clone)]
enum Matcher {
    Exact(String),
    Regex(Regex),
}

#[derive(Debug, Clone)]
struct MockRule {
    matcher: Matcher,
    response: String,
    structured: Option<bool>,
}

/// Deterministic rule-table LLM.
#[derive(Debug, Default)]
pub struct MockLlm {
    rules: Vec<MockRule>,
    latency: Option<Duration>,
    calls: AtomicU64,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: impl IntoIterator<Item = MockRuleSpec>) -> Result<Self, LlmError> {
        let mut mock = Self::new();
        for spec in specs {
            mock.push(spec)?;
        }
        Ok(mock)
    }

    /// Parse JSON-lines rule text; blank lines and `#` comments are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut specs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let spec: MockRuleSpec =
                serde_json::from_str(line).map_err(|e| LlmError::Config(format!("rule line {}: {e}", i + 1)))?;
            specs.push(spec);
        }
        Self::from_specs(specs)
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn push(&mut self, spec: MockRuleSpec) -> Result<(), LlmError> {
        let matcher = match spec.kind {
            MatchKind::Exact => Matcher::Exact(spec.pattern),
            MatchKind::Regex => {
                Matcher::Regex(Regex::new(&spec.pattern).map_err(|e| LlmError::Config(format!("bad regex: {e}")))?)
            }
        };
        self.rules.push(MockRule { matcher, response: spec.response, structured: spec.structured });
        Ok(())
    }

    pub fn exact(mut self, prompt: &str, response: &str) -> Self {
        self.rules.push(MockRule { matcher: Matcher::Exact(prompt.to_string()), response: response.to_string(), structured: None });
        self
    }

    /// Sleep this long per call, standing in for model latency in benchmarks.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn respond(&self, request: &LlmRequest) -> Option<String> {
        let prompt = request.user_prompt.as_str();
        for rule in &self.rules {
            if rule.structured.is_some_and(|s| s != request.expect_structured) {
                continue;
            }
            match &rule.matcher {
                Matcher::Exact(p) if p == prompt => return Some(rule.response.clone()),
                Matcher::Regex(re) => {
                    if let Some(caps) = re.captures(prompt) {
                        let mut out = String::new();
                        caps.expand(&rule.response, &mut out);
                        return Some(out);
                    }
                }
                _ => {}
            }
        }
        None
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        request.check()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        match self.respond(request) {
            Some(out) if out.len() > request.max_output_bytes => {
                Err(LlmError::OutputTooLarge { len: out.len(), cap: request.max_output_bytes })
            }
            Some(out) => Ok(out),
            None => {
                // canonical echo, cut to the output budget
                let mut end = request.max_output_bytes.min(request.user_prompt.len());
                while !request.user_prompt.is_char_boundary(end) {
                    end -= 1;
                }
                Ok(request.user_prompt[..end].to_string())
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// OpenAI-style chat-completion client with retry and exponential backoff.
pub struct RemoteLlm {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteLlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLlm").field("endpoint", &self.endpoint).field("model", &self.model).finish()
    }
}

impl RemoteLlm {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout_ms: u64, max_retries: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            max_retries: max_retries.max(1),
            backoff: Duration::from_millis(DEFAULT_BACKOFF_MS),
            agent,
        }
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage { role: "system", content: &request.system_prompt },
                ChatMessage { role: "user", content: &request.user_prompt },
            ],
            response_format: request.expect_structured.then(|| serde_json::json!({"type": "json_object"})),
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let response: ChatResponse = req.send_json(&body).and_then(|mut r| r.body_mut().read_json()).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            other => LlmError::ProviderUnavailable(other.to_string()),
        })?;
        response
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::ProviderUnavailable("response has no choices".into()))
    }
}

impl LlmClient for RemoteLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        request.check()?;
        let mut last = LlmError::ProviderUnavailable("no attempt made".into());
        for attempt in 0..self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(request) {
                Ok(out) if out.len() > request.max_output_bytes => {
                    return Err(LlmError::OutputTooLarge { len: out.len(), cap: request.max_output_bytes })
                }
                Ok(out) => return Ok(out),
                Err(e) => {
                    log::warn!("LLM attempt {} of {} failed: {e}", attempt + 1, self.max_retries);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmProviderConfig {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_ref: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Rule file for the mock provider; the built-in rules when absent.
    pub mock_rules: Option<PathBuf>,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::Mock,
            endpoint: None,
            model_name: "gpt-4o-mini".to_string(),
            api_key_ref: None,
            timeout_ms: 60_000,
            max_retries: DEFAULT_MAX_RETRIES,
            mock_rules: None,
        }
    }
}

/// Rules shipped with the crate covering the common prompt shapes.
pub const BUILTIN_MOCK_RULES: &str = include_str!("../fixtures/mock_rules.jsonl");

impl LlmProviderConfig {
    pub fn build(&self) -> Result<Box<dyn LlmClient>, LlmError> {
        match self.kind {
            LlmKind::Mock => {
                let mock = match &self.mock_rules {
                    Some(path) => MockLlm::from_file(path)?,
                    None => MockLlm::from_jsonl(BUILTIN_MOCK_RULES)?,
                };
                Ok(Box::new(mock))
            }
            LlmKind::Remote => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| LlmError::Config("remote LLM needs an endpoint".into()))?;
                let key_var = self.api_key_ref.as_deref().ok_or_else(|| LlmError::Config("remote LLM needs api_key_ref".into()))?;
                let api_key = std::env::var(key_var).ok();
                if api_key.is_none() {
                    log::warn!("environment variable {key_var} is not set; calling {endpoint} without a key");
                }
                Ok(Box::new(RemoteLlm::new(endpoint, &self.model_name, api_key, self.timeout_ms, self.max_retries)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> LlmRequest {
        LlmRequest::new("sys", user)
    }

    #[test]
    fn exact_rule_wins() {
        let mock = MockLlm::new().exact("p", "r");
        assert_eq!(mock.complete(&req("p")).unwrap(), "r");
        assert_eq!(mock.complete(&req("other")).unwrap(), "other");
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn regex_rule_expands_captures() {
        let mock = MockLlm::from_jsonl(
            r#"{"match": "^link for (\\S+)$", "kind": "regex", "response": "{\"name\": \"$1\"}"}"#,
        )
        .unwrap();
        assert_eq!(mock.complete(&req("link for cnn")).unwrap(), r#"{"name": "cnn"}"#);
    }

    #[test]
    fn echo_is_deterministic_and_capped() {
        let mock = MockLlm::new();
        let mut r = req("héllo world");
        assert_eq!(mock.complete(&r).unwrap(), mock.complete(&r).unwrap());
        r.max_output_bytes = 2;
        assert_eq!(mock.complete(&r).unwrap(), "h");
    }

    #[test]
    fn oversize_rule_output_is_an_error() {
        let mock = MockLlm::new().exact("p", "0123456789");
        let mut r = req("p");
        r.max_output_bytes = 4;
        assert!(matches!(mock.complete(&r), Err(LlmError::OutputTooLarge { len: 10, cap: 4 })));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(MockLlm::new().complete(&req("  ")), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn change_prompt_uses_before_after_template() {
        let r = summary_request(SummaryInput::Change { old: "OLD TEXT", new: "NEW TEXT" }).unwrap();
        assert!(r.user_prompt.contains("the content before the update is OLD TEXT"));
        assert!(r.user_prompt.contains("the content after the update is NEW TEXT"));
    }

    #[test]
    fn document_prompt_uses_summary_template() {
        let r = summary_request(SummaryInput::Document("a paper")).unwrap();
        assert_eq!(r.user_prompt, "You need to summary the content. The content is a paper");
        assert!(summary_request(SummaryInput::Document("")).is_err());
    }

    #[test]
    fn unreachable_remote_gives_up_after_retries() {
        let llm = RemoteLlm::new("http://127.0.0.1:9/v1/chat/completions", "m", None, 300, 3)
            .with_backoff(Duration::from_millis(5));
        let err = llm.complete(&req("hi")).unwrap_err();
        assert!(matches!(err, LlmError::ProviderUnavailable(_) | LlmError::Timeout));
    }

    #[test]
    fn builtin_rules_parse() {
        MockLlm::from_jsonl(BUILTIN_MOCK_RULES).unwrap();
    }
}
