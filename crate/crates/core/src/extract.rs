//! Text extraction for imported files, keyed by lowercase extension.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait TextExtractor: Send + Sync {
    fn extract(&self, path: &Path, bytes: &[u8]) -> Result<String>;
}

/// UTF-8 pass-through for plain text formats.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlainText;

impl TextExtractor for PlainText {
    fn extract(&self, path: &Path, bytes: &[u8]) -> Result<String> {
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::PathUnreadable {
            path: path.to_path_buf(),
            reason: "not valid UTF-8".into(),
        })
    }
}

#[derive(Clone)]
pub struct ExtractorRegistry {
    by_ext: HashMap<String, Arc<dyn TextExtractor>>,
}

impl std::fmt::Debug for ExtractorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut keys: Vec<_> = self.by_ext.keys().collect();
        keys.sort();
        f.debug_struct("ExtractorRegistry").field("extensions", &keys).finish()
    }
}

impl Default for ExtractorRegistry {
    /// `.txt`, `.md` and extensionless files pass through as UTF-8.
    fn default() -> Self {
        let mut r = Self { by_ext: HashMap::new() };
        for ext in ["", "txt", "md"] {
            r.register(ext, Arc::new(PlainText));
        }
        r
    }
}

impl ExtractorRegistry {
    pub fn register(&mut self, extension: &str, extractor: Arc<dyn TextExtractor>) {
        self.by_ext.insert(extension.trim_start_matches('.').to_ascii_lowercase(), extractor);
    }

    pub fn supports(&self, path: &Path) -> bool {
        self.by_ext.contains_key(&extension_of(path))
    }

    pub fn extract_file(&self, path: &Path) -> Result<String> {
        let extractor = self
            .by_ext
            .get(&extension_of(path))
            .ok_or_else(|| Error::ExtractorUnsupported(path.to_path_buf()))?;
        let bytes = std::fs::read(path).map_err(|e| Error::PathUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        extractor.extract(path, &bytes)
    }
}

fn extension_of(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}
