//! Natural-language prompt → validated [`ApiCall`].
//!
//! The LLM is asked for `{"api": ..., "args": {...}}`; a comma-separated
//! fallback (`api, key=value, positional, ...`) is accepted as well. Decoded
//! values are normalized per parameter kind (dates to RFC 3339 UTC, durations
//! to seconds, "3 versions ago" to 3) and checked against the API schema.
//! Nothing here executes a call.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, LazyLock};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::llm::{LlmClient, LlmRequest, MockLlm};

pub const SYSTEM_TEMPLATE: &str = include_str!("../templates/parser_system_v1.txt");
pub const BUILTIN_FIXTURES: &str = include_str!("../fixtures/parser_fixtures.jsonl");

/// The four prompt-level APIs scored by the accuracy harness.
pub const PROMPT_APIS: [&str; 4] = ["retrieve_summary", "change_summary", "rollback", "create_link"];

const DAY_SECS: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamKind {
    Text,
    Integer { min: i64 },
    Path,
    /// Seconds; phrases like "3 months" are accepted on input.
    Duration,
    /// RFC 3339 UTC.
    Timestamp,
    Enum { values: &'static [&'static str] },
    TextList,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKind::Text => f.write_str("string"),
            ParamKind::Integer { min } => write!(f, "integer>={min}"),
            ParamKind::Path => f.write_str("path"),
            ParamKind::Duration => f.write_str("duration"),
            ParamKind::Timestamp => f.write_str("date"),
            ParamKind::Enum { values } => f.write_str(&values.join("|")),
            ParamKind::TextList => f.write_str("list of strings"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiSchema {
    pub api_name: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
    pub danger: bool,
}

impl ApiSchema {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn req(name: &'static str, kind: ParamKind) -> ParamSpec {
    ParamSpec { name, kind, required: true }
}

fn opt(name: &'static str, kind: ParamKind) -> ParamSpec {
    ParamSpec { name, kind, required: false }
}

const MODES: &[&str] = &["keyword", "semantic", "integrated"];
const CONDITIONS: &[&str] = &["and", "or"];
const ROLLBACK_BY: &[&str] = &["count", "date"];
const JOIN_CONDITIONS: &[&str] = &["new"];

fn count() -> ParamKind {
    ParamKind::Integer { min: 1 }
}

fn schema(api_name: &'static str, description: &'static str, danger: bool, params: Vec<ParamSpec>) -> ApiSchema {
    ApiSchema { api_name, description, params, danger }
}

static CATALOG: LazyLock<Vec<ApiSchema>> = LazyLock::new(|| {
    use ParamKind::*;
    vec![
        schema(
            "retrieve_summary",
            "find files by keywords, by meaning, or both, and summarize them",
            false,
            vec![
                req("mode", Enum { values: MODES }),
                opt("keywords", TextList),
                opt("condition", Enum { values: CONDITIONS }),
                opt("query", Text),
                opt("n", count()),
                opt("directory", Text),
                opt("new_directory", Text),
            ],
        ),
        schema(
            "change_summary",
            "replace a file's content with new text or a file on disk and summarize the change",
            true,
            vec![req("name", Text), req("import_file", Text), opt("directory", Text)],
        ),
        schema(
            "rollback",
            "restore a file to an earlier version, k versions back or as of a date",
            true,
            vec![req("name", Text), req("by", Enum { values: ROLLBACK_BY }), opt("k", count()), opt("date", Timestamp), opt("directory", Text)],
        ),
        schema(
            "create_link",
            "publish a file as a shareable link, optionally valid for a limited time",
            false,
            vec![req("name", Text), opt("validity", Duration), opt("directory", Text)],
        ),
        schema("revoke_link", "revoke a share link", false, vec![req("token", Text)]),
        schema(
            "create_or_get_file",
            "create a file, open it, or list a directory",
            false,
            vec![req("directory", Text), opt("name", Text), opt("import_file", Text)],
        ),
        schema("add_", "append text to a file", false, vec![req("directory", Text), req("name", Text), req("new_content", Text)]),
        schema("overwrite", "replace a file's content", true, vec![req("directory", Text), req("name", Text), req("import_file", Text)]),
        schema(
            "del_",
            "delete a file by name or every file containing a text",
            true,
            vec![req("directory", Text), opt("name", Text), opt("key_text", Text)],
        ),
        schema(
            "keywords_retrieve",
            "list files containing keywords",
            false,
            vec![req("keywords", TextList), opt("directory", Text), opt("condition", Enum { values: CONDITIONS })],
        ),
        schema(
            "semantic_retrieve",
            "list the files most similar in meaning to a query",
            false,
            vec![req("query", Text), opt("directory", Text), opt("n", count())],
        ),
        schema("create", "import every file in a folder", false, vec![req("directory", Text), req("import_dir", Path)]),
        schema("lock_file", "make a file read-only", false, vec![req("directory", Text), req("name", Text)]),
        schema("unlock_file", "make a file writable again", false, vec![req("directory", Text), req("name", Text)]),
        schema(
            "group_keywords",
            "copy files containing keywords into a new directory",
            false,
            vec![
                req("keywords", TextList),
                req("new_directory", Text),
                opt("source_directory", Text),
                opt("condition", Enum { values: CONDITIONS }),
            ],
        ),
        schema(
            "group_semantic",
            "copy the files most similar to a query into a new directory",
            false,
            vec![req("query", Text), req("new_directory", Text), opt("source_directory", Text), opt("n", count())],
        ),
        schema(
            "integrated_retrieve",
            "keyword filter into a new directory, then rank it by meaning",
            false,
            vec![
                req("keywords", TextList),
                opt("condition", Enum { values: CONDITIONS }),
                req("query", Text),
                req("new_directory", Text),
                opt("source_directory", Text),
                opt("n", count()),
            ],
        ),
        schema(
            "file_join",
            "concatenate two files, into a new file or destructively into the first",
            false,
            vec![
                req("dir1", Text),
                req("name1", Text),
                req("name2", Text),
                opt("dir2", Text),
                opt("condition", Enum { values: JOIN_CONDITIONS }),
            ],
        ),
        schema("update_access_time", "mark a file as accessed now", false, vec![req("directory", Text), req("name", Text)]),
    ]
});

pub fn catalog() -> &'static [ApiSchema] {
    &CATALOG
}

pub fn schema_for(api: &str) -> Option<&'static ApiSchema> {
    CATALOG.iter().find(|s| s.api_name == api)
}

/// A typed argument value after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Int(i64),
    Text(String),
    List(Vec<String>),
}

impl ArgValue {
    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("ArgValue serializes")
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Text(s.to_string())
    }
}

impl From<i64> for ArgValue {
    fn from(v: i64) -> Self {
        ArgValue::Int(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub api: String,
    #[serde(default)]
    pub args: BTreeMap<String, ArgValue>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl ApiCall {
    pub fn new(api: &str) -> Self {
        Self { api: api.to_string(), args: BTreeMap::new(), raw_prompt: String::new(), confidence: None }
    }

    pub fn with(mut self, name: &str, value: impl Into<ArgValue>) -> Self {
        self.args.insert(name.to_string(), value.into());
        self
    }

    pub fn with_list(mut self, name: &str, values: &[&str]) -> Self {
        self.args.insert(name.to_string(), ArgValue::List(values.iter().map(|s| s.to_string()).collect()));
        self
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.args.get(name) {
            Some(ArgValue::Text(s)) => Some(s),
            _ => None,
        }
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.args.get(name) {
            Some(ArgValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[String]> {
        match self.args.get(name) {
            Some(ArgValue::List(v)) => Some(v),
            _ => None,
        }
    }

    pub fn timestamp(&self, name: &str) -> Option<DateTime<Utc>> {
        self.text(name).and_then(|s| DateTime::parse_from_rfc3339(s).ok()).map(|t| t.with_timezone(&Utc))
    }

    /// Whether executing this call can destroy or replace data.
    pub fn is_danger(&self) -> bool {
        match self.api.as_str() {
            "file_join" => self.text("condition") != Some("new"),
            api => schema_for(api).is_some_and(|s| s.danger),
        }
    }

    /// Equality on API name and arguments only.
    pub fn same_call(&self, other: &ApiCall) -> bool {
        self.api == other.api && self.args == other.args
    }

    /// `{"api": ..., "args": {...}}`, the structured form the parser expects.
    pub fn to_wire(&self) -> String {
        serde_json::json!({ "api": self.api, "args": self.args }).to_string()
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.api)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={}", v.to_json())?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("could not decode model output: {reason}")]
    UnparseableOutput { reason: String, raw: String },
    #[error("unknown API {api:?}")]
    UnknownApi { api: String, raw: String },
    #[error("arguments do not match the {api} schema: {}", problems.join("; "))]
    SchemaViolation { api: String, problems: Vec<String>, raw: String },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::EmptyPrompt => "Precondition",
            ParseError::UnparseableOutput { .. } => "UnparseableOutput",
            ParseError::UnknownApi { .. } => "UnknownApi",
            ParseError::SchemaViolation { .. } => "SchemaViolation",
        }
    }

    /// The model output that produced this error, for the confirmation UI.
    pub fn raw(&self) -> &str {
        match self {
            ParseError::EmptyPrompt => "",
            ParseError::UnparseableOutput { raw, .. } | ParseError::UnknownApi { raw, .. } | ParseError::SchemaViolation { raw, .. } => raw,
        }
    }

    fn with_raw(self, output: &str) -> Self {
        match self {
            ParseError::UnparseableOutput { reason, .. } => ParseError::UnparseableOutput { reason, raw: output.to_string() },
            ParseError::UnknownApi { api, .. } => ParseError::UnknownApi { api, raw: output.to_string() },
            ParseError::SchemaViolation { api, problems, .. } => ParseError::SchemaViolation { api, problems, raw: output.to_string() },
            e => e,
        }
    }
}

fn violation(api: &str, problems: Vec<String>) -> ParseError {
    ParseError::SchemaViolation { api: api.to_string(), problems, raw: String::new() }
}

/// Render the catalog for the system prompt, one API per line.
pub fn render_catalog() -> String {
    let mut out = String::new();
    for s in catalog() {
        let params: Vec<String> = s
            .params
            .iter()
            .map(|p| format!("{}{}: {}", p.name, if p.required { "" } else { "?" }, p.kind))
            .collect();
        out.push_str(&format!("- {}({}): {}\n", s.api_name, params.join(", "), s.description));
    }
    out
}

pub fn system_prompt() -> String {
    SYSTEM_TEMPLATE.replace("{catalog}", render_catalog().trim_end())
}

/// Validate a call against its schema. Pure; never consults the LLM.
pub fn validate(call: &ApiCall) -> std::result::Result<(), ParseError> {
    let schema = schema_for(&call.api).ok_or_else(|| ParseError::UnknownApi { api: call.api.clone(), raw: String::new() })?;
    let mut problems = Vec::new();
    for (name, value) in &call.args {
        match schema.param(name) {
            None => problems.push(format!("unexpected parameter {name}")),
            Some(p) => {
                if let Err(e) = check_shape(&p.kind, value) {
                    problems.push(format!("{name}: {e}"));
                }
            }
        }
    }
    for p in &schema.params {
        if p.required && !call.args.contains_key(p.name) {
            problems.push(format!("missing required parameter {}", p.name));
        }
    }
    if problems.is_empty() {
        cross_field(call, &mut problems);
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(violation(&call.api, problems))
    }
}

fn check_shape(kind: &ParamKind, value: &ArgValue) -> std::result::Result<(), String> {
    match (kind, value) {
        (ParamKind::Integer { min }, ArgValue::Int(v)) => {
            if v < min {
                Err(format!("must be at least {min}, got {v}"))
            } else {
                Ok(())
            }
        }
        (ParamKind::Duration, ArgValue::Int(v)) => {
            if *v <= 0 {
                Err(format!("duration must be positive, got {v}"))
            } else {
                Ok(())
            }
        }
        (ParamKind::Text | ParamKind::Path, ArgValue::Text(s)) => {
            if s.trim().is_empty() {
                Err("must be non-empty".into())
            } else {
                Ok(())
            }
        }
        (ParamKind::Timestamp, ArgValue::Text(s)) => {
            DateTime::parse_from_rfc3339(s).map(|_| ()).map_err(|_| format!("{s:?} is not an RFC 3339 timestamp"))
        }
        (ParamKind::Enum { values }, ArgValue::Text(s)) => {
            if values.contains(&s.as_str()) {
                Ok(())
            } else {
                Err(format!("{s:?} is not one of {}", values.join("|")))
            }
        }
        (ParamKind::TextList, ArgValue::List(v)) => {
            if v.is_empty() || v.iter().any(|s| s.trim().is_empty()) {
                Err("must be a non-empty list of non-empty strings".into())
            } else {
                Ok(())
            }
        }
        (kind, _) => Err(format!("expected {kind}")),
    }
}

fn cross_field(call: &ApiCall, problems: &mut Vec<String>) {
    let has = |k: &str| call.args.contains_key(k);
    let keyword_count = call.list("keywords").map_or(0, <[String]>::len);
    let needs_condition = keyword_count > 1 && !has("condition");
    match call.api.as_str() {
        "retrieve_summary" => {
            let mode = call.text("mode").unwrap_or_default();
            if matches!(mode, "keyword" | "integrated") && !has("keywords") {
                problems.push(format!("mode {mode} needs keywords"));
            }
            if matches!(mode, "semantic" | "integrated") && !has("query") {
                problems.push(format!("mode {mode} needs query"));
            }
            if mode != "integrated" && has("new_directory") {
                problems.push("new_directory only applies to integrated mode".into());
            }
            if needs_condition {
                problems.push("several keywords need a condition (and|or)".into());
            }
        }
        "rollback" => match call.text("by") {
            Some("count") => {
                if !has("k") {
                    problems.push("by=count needs k".into());
                }
                if has("date") {
                    problems.push("by=count takes no date".into());
                }
            }
            Some("date") => {
                if !has("date") {
                    problems.push("by=date needs date".into());
                }
                if has("k") {
                    problems.push("by=date takes no k".into());
                }
            }
            _ => {}
        },
        "del_" => {
            if !has("name") && !has("key_text") {
                problems.push("one of name or key_text is required".into());
            }
        }
        "keywords_retrieve" | "group_keywords" | "integrated_retrieve" => {
            if needs_condition {
                problems.push("several keywords need a condition (and|or)".into());
            }
        }
        "file_join" => {
            let dir2 = call.text("dir2").or(call.text("dir1"));
            if call.text("name1") == call.text("name2") && dir2 == call.text("dir1") {
                problems.push("cannot join a file with itself".into());
            }
        }
        _ => {}
    }
}

static NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty", "thirty", "forty",
];

fn number_word(w: &str) -> Option<i64> {
    let w = w.to_ascii_lowercase();
    if w == "a" || w == "an" {
        return Some(1);
    }
    let i = NUMBER_WORDS.iter().position(|n| *n == w)? as i64;
    Some(if i <= 20 { i } else { (i - 18) * 10 })
}

static LEADING_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*([0-9]+|[A-Za-z]+)\b").unwrap());
static DURATION_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*([0-9]+|[a-z]+)?\s*(seconds?|secs?|s|minutes?|mins?|hours?|hrs?|h|days?|d|weeks?|wks?|w|months?|mos?|years?|yrs?|y)\s*$").unwrap()
});
static RELATIVE_AGO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*([0-9]+|[a-z]+)\s+(days?|weeks?|months?|years?|hours?)\s+ago\s*$").unwrap());
static DATE_ONLY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})\s*$").unwrap());
static DATE_TIME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})[ T](\d{1,2}):(\d{2})(?::(\d{2}))?\s*(?:Z|UTC)?\s*$").unwrap());
static MONTH_DAY_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*([a-z]+)\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})\s*$").unwrap());
static DAY_MONTH_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(\d{1,2})(?:st|nd|rd|th)?\s+(?:of\s+)?([a-z]+)\.?,?\s+(\d{4})\s*$").unwrap());

const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];

fn month_number(word: &str) -> Option<u32> {
    let w = word.to_ascii_lowercase();
    if w.len() < 3 {
        return None;
    }
    MONTHS.iter().position(|m| w.starts_with(m)).map(|i| i as u32 + 1)
}

fn parse_count(token: &str) -> Option<i64> {
    token.parse::<i64>().ok().or_else(|| number_word(token))
}

fn unit_seconds(unit: &str) -> i64 {
    let u = unit.to_ascii_lowercase();
    match u.as_str() {
        _ if u.starts_with("mo") => 30 * DAY_SECS,
        _ if u.starts_with('s') => 1,
        _ if u.starts_with("mi") => 60,
        _ if u.starts_with('h') => 3_600,
        _ if u.starts_with('d') => DAY_SECS,
        _ if u.starts_with('w') => 7 * DAY_SECS,
        _ => 365 * DAY_SECS,
    }
}

fn format_ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn end_of_day(date: NaiveDate) -> DateTime<Utc> {
    date.and_hms_milli_opt(23, 59, 59, 999).expect("valid time").and_utc()
}

/// Normalizes raw decoded values; relative dates resolve against the clock.
#[derive(Clone)]
pub struct Normalizer {
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Normalizer")
    }
}

impl Normalizer {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock }
    }

    pub fn value(&self, kind: &ParamKind, raw: &Value) -> std::result::Result<ArgValue, String> {
        match kind {
            ParamKind::Text | ParamKind::Path => match raw {
                Value::String(s) if !s.trim().is_empty() => Ok(ArgValue::Text(s.trim().to_string())),
                Value::Number(n) => Ok(ArgValue::Text(n.to_string())),
                _ => Err(format!("expected a non-empty {kind}")),
            },
            ParamKind::Integer { .. } => match raw {
                Value::Number(n) => n.as_i64().map(ArgValue::Int).ok_or_else(|| format!("{n} is not an integer")),
                Value::String(s) => LEADING_NUMBER
                    .captures(s)
                    .and_then(|c| parse_count(&c[1]))
                    .map(ArgValue::Int)
                    .ok_or_else(|| format!("{s:?} is not a count")),
                _ => Err("expected an integer".into()),
            },
            ParamKind::Duration => match raw {
                Value::Number(n) => n.as_i64().map(ArgValue::Int).ok_or_else(|| format!("{n} is not a whole number of seconds")),
                Value::String(s) => self.duration(s).map(ArgValue::Int),
                _ => Err("expected a duration".into()),
            },
            ParamKind::Timestamp => match raw {
                Value::String(s) => self.timestamp(s).map(|t| ArgValue::Text(format_ts(t))),
                _ => Err("expected a date".into()),
            },
            ParamKind::Enum { values } => match raw {
                Value::String(s) => {
                    let v = s.trim().to_ascii_lowercase();
                    values.iter().find(|x| **x == v).map(|x| ArgValue::Text(x.to_string())).ok_or_else(|| format!("{s:?} is not one of {}", values.join("|")))
                }
                _ => Err(format!("expected one of {}", values.join("|"))),
            },
            ParamKind::TextList => {
                let items: Vec<String> = match raw {
                    Value::Array(items) => items
                        .iter()
                        .map(|v| match v {
                            Value::String(s) => Ok(s.trim().to_string()),
                            Value::Number(n) => Ok(n.to_string()),
                            _ => Err("list items must be strings".to_string()),
                        })
                        .collect::<std::result::Result<_, _>>()?,
                    Value::String(s) => vec![s.trim().to_string()],
                    _ => return Err("expected a list of strings".into()),
                };
                let items: Vec<String> = items.into_iter().filter(|s| !s.is_empty()).collect();
                if items.is_empty() {
                    Err("list is empty".into())
                } else {
                    Ok(ArgValue::List(items))
                }
            }
        }
    }

    pub fn duration(&self, s: &str) -> std::result::Result<i64, String> {
        let t = s.trim();
        if let Ok(secs) = t.parse::<i64>() {
            return Ok(secs);
        }
        let caps = DURATION_PHRASE.captures(t).ok_or_else(|| format!("{s:?} is not a duration"))?;
        let n = match caps.get(1) {
            Some(m) => parse_count(m.as_str()).ok_or_else(|| format!("{s:?} is not a duration"))?,
            None => 1,
        };
        Ok(n * unit_seconds(&caps[2]))
    }

    pub fn timestamp(&self, s: &str) -> std::result::Result<DateTime<Utc>, String> {
        let t = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
            return Ok(dt.with_timezone(&Utc));
        }
        let bad = || format!("{s:?} is not a date");
        let now = self.clock.now();
        match t.to_ascii_lowercase().as_str() {
            "now" => return Ok(now),
            "today" => return Ok(end_of_day(now.date_naive())),
            "yesterday" => return Ok(end_of_day(now.date_naive() - Duration::days(1))),
            _ => {}
        }
        if let Some(c) = RELATIVE_AGO.captures(t) {
            let n = parse_count(&c[1]).ok_or_else(bad)?;
            return Ok(now - Duration::seconds(n * unit_seconds(&c[2])));
        }
        if let Some(c) = DATE_TIME.captures(t) {
            let date = ymd(&c[1], &c[2], &c[3]).ok_or_else(bad)?;
            let h: u32 = c[4].parse().map_err(|_| bad())?;
            let m: u32 = c[5].parse().map_err(|_| bad())?;
            let sec: u32 = c.get(6).map_or(Ok(0), |x| x.as_str().parse()).map_err(|_| bad())?;
            let time = date.and_hms_opt(h, m, sec).ok_or_else(bad)?;
            return Ok(NaiveDateTime::and_utc(&time));
        }
        // a bare date means "as of the end of that day"
        if let Some(c) = DATE_ONLY.captures(t) {
            return ymd(&c[1], &c[2], &c[3]).map(end_of_day).ok_or_else(bad);
        }
        if let Some(c) = MONTH_DAY_YEAR.captures(t) {
            let m = month_number(&c[1]).ok_or_else(bad)?;
            return NaiveDate::from_ymd_opt(c[3].parse().map_err(|_| bad())?, m, c[2].parse().map_err(|_| bad())?)
                .map(end_of_day)
                .ok_or_else(bad);
        }
        if let Some(c) = DAY_MONTH_YEAR.captures(t) {
            let m = month_number(&c[2]).ok_or_else(bad)?;
            return NaiveDate::from_ymd_opt(c[3].parse().map_err(|_| bad())?, m, c[1].parse().map_err(|_| bad())?)
                .map(end_of_day)
                .ok_or_else(bad);
        }
        Err(bad())
    }

    /// Normalize every argument of an already-typed call. Idempotent.
    pub fn call(&self, call: &ApiCall) -> std::result::Result<ApiCall, ParseError> {
        let schema = schema_for(&call.api).ok_or_else(|| ParseError::UnknownApi { api: call.api.clone(), raw: String::new() })?;
        let raw: Map<String, Value> = call.args.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        let args = self.args(schema, &raw)?;
        let out = ApiCall { api: call.api.clone(), args, raw_prompt: call.raw_prompt.clone(), confidence: call.confidence };
        validate(&out)?;
        Ok(out)
    }

    fn args(&self, schema: &ApiSchema, raw: &Map<String, Value>) -> std::result::Result<BTreeMap<String, ArgValue>, ParseError> {
        let mut args = BTreeMap::new();
        let mut problems = Vec::new();
        for (name, value) in raw {
            if value.is_null() {
                continue;
            }
            match schema.param(name) {
                None => problems.push(format!("unexpected parameter {name}")),
                Some(p) => match self.value(&p.kind, value) {
                    Ok(v) => {
                        args.insert(name.clone(), v);
                    }
                    Err(e) => problems.push(format!("{name}: {e}")),
                },
            }
        }
        if problems.is_empty() {
            Ok(args)
        } else {
            Err(violation(schema.api_name, problems))
        }
    }
}

fn ymd(y: &str, m: &str, d: &str) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
}

/// Model output decoded but not yet checked against a schema.
#[derive(Debug, Clone, PartialEq)]
struct Decoded {
    api: String,
    named: Map<String, Value>,
    positional: Vec<String>,
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn decode_json(text: &str) -> Option<std::result::Result<Decoded, String>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let value: Value = serde_json::from_str(&text[start..=end]).ok()?;
    let obj = value.as_object()?;
    let api = ["api", "name", "function"].iter().find_map(|k| obj.get(*k).and_then(Value::as_str));
    let Some(api) = api else {
        return Some(Err("JSON object has no \"api\" field".into()));
    };
    let args = match obj.get("args").or_else(|| obj.get("arguments")) {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(m)) => m,
            _ => return Some(Err("\"args\" is not an object".into())),
        },
        Some(_) => return Some(Err("\"args\" is not an object".into())),
    };
    Some(Ok(Decoded { api: api.trim().to_string(), named: args, positional: Vec::new() }))
}

static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());
static NAMED_FIELD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(.*)$").unwrap());

/// `api, key=value, positional, ...`; list values separated by `|`.
/// Positional values fill the still-unset parameters in schema order.
fn decode_commas(text: &str) -> Option<Decoded> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let mut fields = line.split(',').map(str::trim);
    let api = fields.next()?.trim_end_matches('(').trim();
    if !IDENT.is_match(api) {
        return None;
    }
    let mut named = Map::new();
    let mut positional = Vec::new();
    for f in fields.filter(|f| !f.is_empty()) {
        let f = f.trim_end_matches(')').trim();
        match NAMED_FIELD.captures(f) {
            Some(c) => {
                named.insert(c[1].to_string(), comma_value(c[2].trim()));
            }
            None => positional.push(unquote(f).to_string()),
        }
    }
    Some(Decoded { api: api.to_string(), named, positional })
}

fn unquote(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '"' || c == '\'')
}

fn comma_value(s: &str) -> Value {
    if s.contains('|') {
        return Value::Array(s.split('|').map(|p| Value::String(unquote(p).to_string())).collect());
    }
    let s = unquote(s);
    match s.parse::<i64>() {
        Ok(n) => Value::from(n),
        Err(_) => Value::String(s.to_string()),
    }
}

fn decode(output: &str) -> std::result::Result<Decoded, ParseError> {
    let text = strip_fences(output);
    let unparseable = |reason: String| ParseError::UnparseableOutput { reason, raw: output.to_string() };
    if text.is_empty() {
        return Err(unparseable("empty output".into()));
    }
    match decode_json(text) {
        Some(Ok(d)) => Ok(d),
        Some(Err(reason)) => Err(unparseable(reason)),
        None => decode_commas(text).ok_or_else(|| unparseable("neither a JSON call nor a comma-separated call".into())),
    }
}

/// Stateless apart from the clock used for relative dates.
#[derive(Debug, Clone)]
pub struct Parser {
    normalizer: Normalizer,
}

impl Parser {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { normalizer: Normalizer::new(clock) }
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn request(&self, prompt: &str) -> LlmRequest {
        LlmRequest::new(system_prompt(), prompt.trim()).structured()
    }

    /// Ask the model for a call and turn its answer into a validated `ApiCall`.
    pub fn parse(&self, prompt: &str, llm: &dyn LlmClient) -> Result<ApiCall> {
        if prompt.trim().is_empty() {
            return Err(ParseError::EmptyPrompt.into());
        }
        let output = llm.complete(&self.request(prompt)).map_err(Error::Llm)?;
        let mut call = self.interpret(&output).map_err(|e| Error::Parse(e.with_raw(&output)))?;
        call.raw_prompt = prompt.trim().to_string();
        Ok(call)
    }

    /// Build a call from `name=value` pairs (the scripting path, no LLM).
    /// List parameters take `|`-separated values.
    pub fn from_pairs(&self, api: &str, pairs: &[(String, String)]) -> std::result::Result<ApiCall, ParseError> {
        let raw = format!("{api} {pairs:?}");
        let schema = schema_for(api).ok_or_else(|| ParseError::UnknownApi { api: api.to_string(), raw: raw.clone() })?;
        let mut named = Map::new();
        for (k, v) in pairs {
            let value = match schema.param(k).map(|p| &p.kind) {
                Some(ParamKind::TextList) => Value::Array(v.split('|').map(|x| Value::String(x.to_string())).collect()),
                _ => Value::String(v.clone()),
            };
            named.insert(k.clone(), value);
        }
        let args = self.normalizer.args(schema, &named).map_err(|e| e.with_raw(&raw))?;
        let call = ApiCall { api: api.to_string(), args, raw_prompt: String::new(), confidence: None };
        validate(&call).map_err(|e| e.with_raw(&raw))?;
        Ok(call)
    }

    /// Decode, normalize and validate a raw model answer.
    pub fn interpret(&self, output: &str) -> std::result::Result<ApiCall, ParseError> {
        let decoded = decode(output)?;
        let api = decoded.api.to_ascii_lowercase();
        let schema = schema_for(&api).ok_or_else(|| ParseError::UnknownApi { api: decoded.api.clone(), raw: output.to_string() })?;
        let mut named = decoded.named;
        let free: Vec<&str> = schema.params.iter().map(|p| p.name).filter(|n| !named.contains_key(*n)).collect();
        let mut free = free.into_iter();
        for value in decoded.positional {
            match free.next() {
                Some(p) => {
                    named.insert(p.to_string(), comma_value(&value));
                }
                None => return Err(violation(&api, vec![format!("unexpected extra value {value:?}")])),
            }
        }
        let args = self.normalizer.args(schema, &named)?;
        let call = ApiCall { api, args, raw_prompt: String::new(), confidence: None };
        validate(&call)?;
        Ok(call)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserFixture {
    pub prompt: String,
    pub expected: ApiCall,
}

/// Load JSON-lines fixtures; each `expected` call is normalized and must
/// validate.
pub fn load_fixtures(text: &str, parser: &Parser) -> Result<Vec<ParserFixture>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fx: ParserFixture = serde_json::from_str(line)
            .map_err(|e| Error::Precondition(format!("fixture line {}: {e}", i + 1)))?;
        fx.expected = parser.normalizer().call(&fx.expected).map_err(|e| Error::Precondition(format!("fixture line {}: {e}", i + 1)))?;
        out.push(fx);
    }
    Ok(out)
}

pub fn builtin_fixtures(parser: &Parser) -> Vec<ParserFixture> {
    load_fixtures(BUILTIN_FIXTURES, parser).expect("bundled fixtures are valid")
}

/// A mock that answers every fixture prompt with its gold call, except the
/// ones `corrupt` selects, which get an undecodable answer.
pub fn replay_mock(fixtures: &[ParserFixture], mut corrupt: impl FnMut(usize, &ParserFixture) -> bool) -> MockLlm {
    let mut mock = MockLlm::new();
    for (i, fx) in fixtures.iter().enumerate() {
        let answer = if corrupt(i, fx) { "I am not sure what you mean.".to_string() } else { fx.expected.to_wire() };
        mock = mock.exact(fx.prompt.trim(), &answer);
    }
    mock
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiAccuracy {
    pub api: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_api: Vec<ApiAccuracy>,
    pub macro_average: f64,
    pub misses: Vec<String>,
}

impl AccuracyReport {
    pub fn accuracy(&self, api: &str) -> Option<f64> {
        self.per_api.iter().find(|r| r.api == api).map(|r| r.accuracy)
    }

    /// API × model grid; one column per labelled report.
    pub fn tsv(columns: &[(&str, &AccuracyReport)]) -> String {
        let mut out = String::from("api");
        for (label, _) in columns {
            out.push('\t');
            out.push_str(label);
        }
        out.push('\n');
        let apis: Vec<&str> = columns.first().map(|(_, r)| r.per_api.iter().map(|a| a.api.as_str()).collect()).unwrap_or_default();
        for api in apis {
            out.push_str(api);
            for (_, r) in columns {
                out.push_str(&format!("\t{:.4}", r.accuracy(api).unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out.push_str("average");
        for (_, r) in columns {
            out.push_str(&format!("\t{:.4}", r.macro_average));
        }
        out.push('\n');
        out
    }
}

/// Exact-match accuracy of (api, normalized args) per API plus the macro
/// average. Parse failures count as misses.
pub fn evaluate_accuracy(fixtures: &[ParserFixture], llm: &dyn LlmClient, parser: &Parser) -> AccuracyReport {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut misses = Vec::new();
    for fx in fixtures {
        let slot = tally.entry(fx.expected.api.clone()).or_default();
        slot.0 += 1;
        match parser.parse(&fx.prompt, llm) {
            Ok(call) if call.same_call(&fx.expected) => slot.1 += 1,
            Ok(call) => misses.push(format!("{}\tgot {call}", fx.prompt)),
            Err(e) => misses.push(format!("{}\t{}: {e}", fx.prompt, e.kind())),
        }
    }
    let per_api: Vec<ApiAccuracy> = tally
        .into_iter()
        .map(|(api, (total, correct))| ApiAccuracy { api, total, correct, accuracy: correct as f64 / total as f64 })
        .collect();
    let macro_average = if per_api.is_empty() { 0.0 } else { per_api.iter().map(|a| a.accuracy).sum::<f64>() / per_api.len() as f64 };
    AccuracyReport { per_api, macro_average, misses }
}
