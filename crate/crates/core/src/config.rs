//! Runtime configuration, normally read from `LSFS_*` environment variables.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingKind, EmbeddingProviderConfig};
use crate::error::{Error, Result};
use crate::llm::{LlmKind, LlmProviderConfig};
use crate::supervisor::{BOOKKEEPING_DIR, DEFAULT_INTERVAL_MS, MIN_INTERVAL_MS};

pub const ENV_ROOT: &str = "LSFS_ROOT";
pub const ENV_LLM_PROVIDER: &str = "LSFS_LLM_PROVIDER";
pub const ENV_LLM_ENDPOINT: &str = "LSFS_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "LSFS_LLM_API_KEY";
pub const ENV_LLM_MODEL: &str = "LSFS_LLM_MODEL";
pub const ENV_MOCK_RULES: &str = "LSFS_MOCK_RULES";
pub const ENV_EMBED_PROVIDER: &str = "LSFS_EMBED_PROVIDER";
pub const ENV_EMBED_ENDPOINT: &str = "LSFS_EMBED_ENDPOINT";
pub const ENV_EMBED_DIM: &str = "LSFS_EMBED_DIM";
pub const ENV_SCAN_INTERVAL_MS: &str = "LSFS_SCAN_INTERVAL_MS";
pub const ENV_HTTP_PORT: &str = "LSFS_HTTP_PORT";
pub const ENV_HTTP_TOKEN: &str = "LSFS_HTTP_TOKEN";
pub const ENV_BASE_URL: &str = "LSFS_BASE_URL";
pub const ENV_AUTO_APPROVE_SAFE: &str = "LSFS_AUTO_APPROVE_SAFE";

pub const DEFAULT_HTTP_PORT: u16 = 8080;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub root: PathBuf,
    pub scan_interval_ms: u64,
    pub llm: LlmProviderConfig,
    pub embedding: EmbeddingProviderConfig,
    pub http_port: Option<u16>,
    /// Safe calls skip confirmation when true. Dangerous calls are always
    /// confirmed regardless.
    pub auto_approve_safe: bool,
    /// Prefix for share URLs; derived from the port when absent.
    pub base_url: Option<String>,
    /// Static bearer token required on /v1 when set.
    pub bearer_token: Option<String>,
}

impl RuntimeConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            scan_interval_ms: DEFAULT_INTERVAL_MS,
            llm: LlmProviderConfig::default(),
            embedding: EmbeddingProviderConfig::default(),
            http_port: None,
            auto_approve_safe: true,
            base_url: None,
            bearer_token: None,
        }
    }

    /// Where the index, versions, links and logs live.
    pub fn data_dir(&self) -> PathBuf {
        self.root.join(BOOKKEEPING_DIR)
    }

    pub fn share_base_url(&self) -> String {
        match &self.base_url {
            Some(u) => u.trim_end_matches('/').to_string(),
            None => format!("http://127.0.0.1:{}", self.http_port.unwrap_or(DEFAULT_HTTP_PORT)),
        }
    }

    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Build from any variable source; unset variables keep their defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |k: &str| get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let root = get(ENV_ROOT).ok_or_else(|| Error::Config(format!("{ENV_ROOT} is not set")))?;
        let mut cfg = Self::new(root);

        if let Some(v) = get(ENV_SCAN_INTERVAL_MS) {
            cfg.scan_interval_ms = parse_num(ENV_SCAN_INTERVAL_MS, &v)?;
            if cfg.scan_interval_ms < MIN_INTERVAL_MS {
                return Err(Error::IntervalTooShort(cfg.scan_interval_ms));
            }
        }
        if let Some(v) = get(ENV_HTTP_PORT) {
            cfg.http_port = Some(parse_num(ENV_HTTP_PORT, &v)?);
        }
        if let Some(v) = get(ENV_AUTO_APPROVE_SAFE) {
            cfg.auto_approve_safe = parse_bool(ENV_AUTO_APPROVE_SAFE, &v)?;
        }
        cfg.base_url = get(ENV_BASE_URL);
        cfg.bearer_token = get(ENV_HTTP_TOKEN);

        cfg.llm.kind = match get(ENV_LLM_PROVIDER).as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("mock") => LlmKind::Mock,
            Some("remote") | Some("openai") => LlmKind::Remote,
            Some(other) => return Err(Error::Config(format!("{ENV_LLM_PROVIDER}: unknown provider {other:?}"))),
        };
        cfg.llm.endpoint = get(ENV_LLM_ENDPOINT);
        if get(ENV_LLM_API_KEY).is_some() {
            cfg.llm.api_key_ref = Some(ENV_LLM_API_KEY.to_string());
        }
        if let Some(m) = get(ENV_LLM_MODEL) {
            cfg.llm.model_name = m;
        }
        cfg.llm.mock_rules = get(ENV_MOCK_RULES).map(PathBuf::from);

        cfg.embedding.kind = match get(ENV_EMBED_PROVIDER).as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("deterministic") | Some("mock") => EmbeddingKind::Deterministic,
            Some("remote") => EmbeddingKind::Remote,
            Some(other) => return Err(Error::Config(format!("{ENV_EMBED_PROVIDER}: unknown provider {other:?}"))),
        };
        cfg.embedding.endpoint = get(ENV_EMBED_ENDPOINT);
        if let Some(v) = get(ENV_EMBED_DIM) {
            cfg.embedding.dim = parse_num(ENV_EMBED_DIM, &v)?;
            if cfg.embedding.dim == 0 {
                return Err(Error::Config(format!("{ENV_EMBED_DIM} must be positive")));
            }
        }
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(var: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{var}: {v:?} is not a valid number")))
}

fn parse_bool(var: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{var}: {v:?} is not a boolean"))),
    }
}
