//! Shareable links: a file's content published under an unguessable token,
//! optionally with an expiry after which the link is revoked on first touch.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::store::content_hash;
use crate::versions::FileKey;

pub const TOKEN_BYTES: usize = 24;
pub const DEFAULT_BASE_URL: &str = "http://127.0.0.1:8080";
pub const LINKS_FILE: &str = "links.json";

/// Where published bytes live. The local implementation keeps them in memory
/// and, when given a directory, in one file per token.
pub trait ShareStore: Send + Sync {
    fn publish(&self, token: &str, content: &str) -> Result<()>;
    fn fetch(&self, token: &str) -> Result<Option<String>>;
    fn remove(&self, token: &str) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct LocalShareStore {
    dir: Option<PathBuf>,
    blobs: Mutex<HashMap<String, String>>,
}

impl LocalShareStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::ShareStoreUnavailable(e.to_string()))?;
        Ok(Self { dir: Some(dir.to_path_buf()), blobs: Mutex::default() })
    }
}

impl ShareStore for LocalShareStore {
    fn publish(&self, token: &str, content: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(token), content).map_err(|e| Error::ShareStoreUnavailable(e.to_string()))?;
        }
        self.blobs.lock().insert(token.to_string(), content.to_string());
        Ok(())
    }

    fn fetch(&self, token: &str) -> Result<Option<String>> {
        if let Some(c) = self.blobs.lock().get(token) {
            return Ok(Some(c.clone()));
        }
        match &self.dir {
            Some(dir) => match fs::read_to_string(dir.join(token)) {
                Ok(c) => Ok(Some(c)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::ShareStoreUnavailable(e.to_string())),
            },
            None => Ok(None),
        }
    }

    fn remove(&self, token: &str) -> Result<()> {
        self.blobs.lock().remove(token);
        if let Some(dir) = &self.dir {
            match fs::remove_file(dir.join(token)) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::ShareStoreUnavailable(e.to_string())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareLink {
    pub token: String,
    pub key: FileKey,
    pub created_at: DateTime<Utc>,
    pub expires_at: Option<DateTime<Utc>>,
    pub revoked: bool,
    pub url: String,
    pub content_hash: String,
}

impl ShareLink {
    pub fn is_live(&self, now: DateTime<Utc>) -> bool {
        !self.revoked && self.expires_at.is_none_or(|t| now < t)
    }
}

pub fn new_token() -> String {
    token_from(&mut rand::rng())
}

fn token_from(rng: &mut dyn RngCore) -> String {
    let mut bytes = [0u8; TOKEN_BYTES];
    rng.fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

pub struct LinkService {
    backend: Arc<dyn ShareStore>,
    clock: Arc<dyn Clock>,
    base_url: String,
    links: Mutex<BTreeMap<String, ShareLink>>,
    state_file: Option<PathBuf>,
    rng: Mutex<StdRng>,
}

impl std::fmt::Debug for LinkService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinkService").field("base_url", &self.base_url).field("links", &self.links.lock().len()).finish()
    }
}

impl LinkService {
    pub fn new(backend: Arc<dyn ShareStore>, clock: Arc<dyn Clock>) -> Self {
        Self { backend, clock, base_url: DEFAULT_BASE_URL.to_string(), links: Mutex::default(), state_file: None, rng: Mutex::new(StdRng::from_os_rng()) }
    }

    /// Persist the link table to `<dir>/links.json` and blobs under
    /// `<dir>/shares/`, loading whatever is already there.
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        let backend = Arc::new(LocalShareStore::on_disk(&dir.join("shares"))?);
        let state_file = dir.join(LINKS_FILE);
        let links = match fs::read_to_string(&state_file) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::CorruptSnapshot(format!("{}: {e}", state_file.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { backend, clock, base_url: DEFAULT_BASE_URL.to_string(), links: Mutex::new(links), state_file: Some(state_file), rng: Mutex::new(StdRng::from_os_rng()) })
    }

    pub fn with_base_url(mut self, base_url: &str) -> Self {
        self.base_url = base_url.trim_end_matches('/').to_string();
        self
    }

    /// Deterministic tokens for reproducible runs. Never use in production.
    pub fn with_token_seed(self, seed: u64) -> Self {
        *self.rng.lock() = StdRng::seed_from_u64(seed);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn save(&self, links: &BTreeMap<String, ShareLink>) -> Result<()> {
        if let Some(path) = &self.state_file {
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(links).expect("links serialize"))?;
            fs::rename(tmp, path)?;
        }
        Ok(())
    }

    /// Publish `content` for `key`. `validity_secs` of `None` never expires.
    pub fn create_link(&self, key: &FileKey, content: &str, validity_secs: Option<i64>) -> Result<ShareLink> {
        if let Some(v) = validity_secs {
            if v <= 0 {
                return Err(Error::Precondition(format!("validity must be positive, got {v}")));
            }
        }
        let now = self.clock.now();
        let token = token_from(&mut *self.rng.lock());
        self.backend.publish(&token, content)?;
        let link = ShareLink {
            url: format!("{}/share/{token}", self.base_url),
            token: token.clone(),
            key: key.clone(),
            created_at: now,
            expires_at: validity_secs.map(|s| now + Duration::seconds(s)),
            revoked: false,
            content_hash: content_hash(content),
        };
        let mut links = self.links.lock();
        links.insert(token, link.clone());
        self.save(&links)?;
        Ok(link)
    }

    /// Idempotent.
    pub fn revoke_link(&self, token: &str) -> Result<ShareLink> {
        let mut links = self.links.lock();
        let link = links.get_mut(token).ok_or(Error::LinkNotFound)?;
        if !link.revoked {
            link.revoked = true;
            self.backend.remove(token)?;
        }
        let out = link.clone();
        self.save(&links)?;
        Ok(out)
    }

    /// Content of a live link. Expired links are revoked here.
    pub fn fetch_shared(&self, token: &str) -> Result<String> {
        let now = self.clock.now();
        let mut links = self.links.lock();
        let link = links.get_mut(token).ok_or(Error::LinkNotFound)?;
        if link.revoked {
            return Err(Error::Gone);
        }
        if !link.is_live(now) {
            link.revoked = true;
            self.backend.remove(token)?;
            self.save(&links)?;
            return Err(Error::Gone);
        }
        self.backend.fetch(token)?.ok_or_else(|| Error::ShareStoreUnavailable(format!("content for {token} is missing")))
    }

    pub fn get(&self, token: &str) -> Option<ShareLink> {
        self.links.lock().get(token).cloned()
    }

    pub fn list(&self) -> Vec<ShareLink> {
        let mut all: Vec<ShareLink> = self.links.lock().values().cloned().collect();
        all.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.token.cmp(&b.token)));
        all
    }

    /// Revoke every expired link; returns how many were revoked.
    pub fn sweep(&self) -> Result<usize> {
        let now = self.clock.now();
        let mut links = self.links.lock();
        let mut n = 0;
        for link in links.values_mut() {
            if !link.revoked && !link.is_live(now) {
                link.revoked = true;
                self.backend.remove(&link.token)?;
                n += 1;
            }
        }
        if n > 0 {
            self.save(&links)?;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::TimeZone;

    fn service() -> (LinkService, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()));
        (LinkService::new(Arc::new(LocalShareStore::in_memory()), clock.clone()), clock)
    }

    fn key() -> FileKey {
        FileKey::new("d", "llm-base")
    }

    #[test]
    fn three_month_validity() {
        let (s, clock) = service();
        let link = s.create_link(&key(), "body", Some(90 * 86_400)).unwrap();
        assert_eq!(link.expires_at.unwrap() - link.created_at, Duration::days(90));
        assert!(link.url.ends_with(&format!("/share/{}", link.token)));
        assert_eq!(s.fetch_shared(&link.token).unwrap(), "body");
        clock.advance(Duration::days(90));
        assert!(matches!(s.fetch_shared(&link.token), Err(Error::Gone)));
        assert!(s.get(&link.token).unwrap().revoked);
    }

    #[test]
    fn no_validity_serves_until_revoked() {
        let (s, clock) = service();
        let link = s.create_link(&key(), "body", None).unwrap();
        assert!(link.expires_at.is_none());
        clock.advance(Duration::days(3650));
        assert_eq!(content_hash(&s.fetch_shared(&link.token).unwrap()), link.content_hash);
        s.revoke_link(&link.token).unwrap();
        assert!(s.revoke_link(&link.token).unwrap().revoked);
        assert!(matches!(s.fetch_shared(&link.token), Err(Error::Gone)));
    }

    #[test]
    fn unknown_token() {
        let (s, _) = service();
        assert!(matches!(s.fetch_shared(&new_token()), Err(Error::LinkNotFound)));
        assert!(matches!(s.revoke_link("nope"), Err(Error::LinkNotFound)));
    }

    #[test]
    fn tokens_are_long_and_distinct() {
        let a = new_token();
        assert_eq!(URL_SAFE_NO_PAD.decode(&a).unwrap().len(), TOKEN_BYTES);
        const { assert!(TOKEN_BYTES * 8 >= 128) };
        assert_ne!(a, new_token());
    }

    #[test]
    fn sweep_revokes_expired() {
        let (s, clock) = service();
        s.create_link(&key(), "a", Some(60)).unwrap();
        s.create_link(&key(), "b", None).unwrap();
        clock.advance(Duration::seconds(61));
        assert_eq!(s.sweep().unwrap(), 1);
        assert_eq!(s.list().iter().filter(|l| l.revoked).count(), 1);
    }

    #[test]
    fn persisted_links_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()));
        let token = {
            let s = LinkService::open(dir.path(), clock.clone()).unwrap();
            s.create_link(&key(), "persisted", None).unwrap().token
        };
        let s = LinkService::open(dir.path(), clock).unwrap();
        assert_eq!(s.fetch_shared(&token).unwrap(), "persisted");
    }
}
