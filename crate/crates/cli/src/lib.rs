//! Front ends for the semantic file system: the interactive approver used by
//! the `lsfs` binary and the HTTP service behind the web console.

pub mod http;
pub mod tty;

use std::path::PathBuf;

use lsfs_core::config::{RuntimeConfig, ENV_ROOT};

/// Environment configuration with `root` (from `--root`) taking precedence
/// over `LSFS_ROOT`.
pub fn load_config(root: Option<PathBuf>) -> lsfs_core::Result<RuntimeConfig> {
    let root = root.map(|p| p.to_string_lossy().into_owned());
    RuntimeConfig::from_lookup(|k| match (k, &root) {
        (ENV_ROOT, Some(r)) => Some(r.clone()),
        _ => std::env::var(k).ok(),
    })
}
