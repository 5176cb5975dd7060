//! The semantic index: `FileEntry` records grouped by directory, searchable by
//! keyword scan and by exact top-n cosine similarity.
//!
//! Writers serialize on one lock and publish a new immutable [`StoreView`];
//! readers clone the current `Arc` and never block on a writer for longer than
//! the pointer swap. Embeddings are computed before the writer lock is taken.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{strictly_after, Clock};
use crate::codec::{self, Decoder, Encoder, Journal};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};

pub const SNAPSHOT_FILE: &str = "index.lsfs";
pub const JOURNAL_FILE: &str = "index.journal";
const MAGIC: &[u8; 4] = b"LSFS";

const TAG_UPSERT: u8 = 1;
const TAG_REMOVE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetadata {
    pub display_name: String,
    pub directory: String,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
    pub accessed_at: DateTime<Utc>,
    pub read_only: bool,
    pub keywords: Vec<String>,
    pub source_path: Option<PathBuf>,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub metadata: FileMetadata,
    pub content: String,
    pub embedding: EmbeddingVector,
}

impl FileEntry {
    pub fn content_hash(&self) -> String {
        content_hash(&self.content)
    }
}

pub fn content_hash(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

/// Ranked or unranked retrieval output. Parallel vectors, same length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub names: Vec<String>,
    pub directories: Vec<String>,
    pub contents: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn push(&mut self, entry: &FileEntry) {
        self.names.push(entry.metadata.display_name.clone());
        self.directories.push(entry.metadata.directory.clone());
        self.contents.push(entry.content.clone());
    }

    /// Keep only the positions where `keep` is true.
    pub fn retain_mask(&self, keep: &[bool]) -> RetrievalResult {
        let mut out = RetrievalResult {
            scores: self.scores.as_ref().map(|_| Vec::new()),
            ..Default::default()
        };
        for i in 0..self.len() {
            if keep.get(i).copied().unwrap_or(false) {
                out.names.push(self.names[i].clone());
                out.directories.push(self.directories[i].clone());
                out.contents.push(self.contents[i].clone());
                if let (Some(dst), Some(src)) = (out.scores.as_mut(), self.scores.as_ref()) {
                    dst.push(src[i]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    And,
    Or,
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "and" | "all" => Ok(MatchMode::And),
            "or" | "any" => Ok(MatchMode::Or),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && !s.contains(['/', '\\', '\0'])
        && s.trim() == s
}

pub fn validate_name(name: &str) -> Result<()> {
    if valid_segment(name) {
        Ok(())
    } else {
        Err(Error::InvalidName(name.to_string()))
    }
}

/// Directories are single path segments; hidden names are reserved for
/// bookkeeping (`.lsfs`).
pub fn validate_directory(dir: &str) -> Result<()> {
    if valid_segment(dir) && !dir.starts_with('.') {
        Ok(())
    } else {
        Err(Error::InvalidDirectory(dir.to_string()))
    }
}

pub(crate) fn matches_keyword(entry: &FileEntry, keyword_lower: &str) -> bool {
    entry.content.to_lowercase().contains(keyword_lower)
        || entry.metadata.display_name.to_lowercase().contains(keyword_lower)
        || entry.metadata.keywords.iter().any(|k| k.to_lowercase().contains(keyword_lower))
}

/// Immutable point-in-time view of the store.
#[derive(Debug, Clone, Default)]
pub struct StoreView {
    dirs: BTreeMap<String, BTreeMap<String, Arc<FileEntry>>>,
}

impl StoreView {
    pub fn get(&self, directory: &str, name: &str) -> Option<&Arc<FileEntry>> {
        self.dirs.get(directory)?.get(name)
    }

    pub fn directories(&self) -> Vec<String> {
        self.dirs.keys().cloned().collect()
    }

    pub fn has_directory(&self, directory: &str) -> bool {
        self.dirs.contains_key(directory)
    }

    pub fn list(&self, directory: &str) -> Vec<FileMetadata> {
        self.dirs
            .get(directory)
            .map(|files| files.values().map(|e| e.metadata.clone()).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.dirs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Entries in `directory`, or in the whole store when `None`.
    pub fn scope<'a>(&'a self, directory: Option<&'a str>) -> Box<dyn Iterator<Item = &'a Arc<FileEntry>> + 'a> {
        match directory {
            Some(d) => Box::new(self.dirs.get(d).into_iter().flat_map(|m| m.values())),
            None => Box::new(self.dirs.values().flat_map(|m| m.values())),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &Arc<FileEntry>> {
        self.dirs.values().flat_map(|m| m.values())
    }

    /// Directories holding a file with this display name.
    pub fn find_name(&self, name: &str) -> Vec<String> {
        self.dirs.iter().filter(|(_, files)| files.contains_key(name)).map(|(d, _)| d.clone()).collect()
    }

    fn insert(&mut self, entry: Arc<FileEntry>) {
        self.dirs
            .entry(entry.metadata.directory.clone())
            .or_default()
            .insert(entry.metadata.display_name.clone(), entry);
    }

    fn remove(&mut self, directory: &str, name: &str) -> Option<Arc<FileEntry>> {
        let files = self.dirs.get_mut(directory)?;
        let removed = files.remove(name);
        if files.is_empty() {
            self.dirs.remove(directory);
        }
        removed
    }

    /// Digest of everything observable except embeddings (which are derived).
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in self.entries() {
            let m = &e.metadata;
            let mut enc = Encoder::new();
            enc.str(&m.directory)
                .str(&m.display_name)
                .time(m.created_at)
                .time(m.modified_at)
                .time(m.accessed_at)
                .bool(m.read_only)
                .strs(&m.keywords)
                .str(&e.content);
            h.update(enc.finish());
        }
        hex::encode(h.finalize())
    }
}

/// Ordering used for ranking: higher score first, then display name, then
/// directory. `Less` means "ranks earlier".
fn rank_order(a: (f64, &str, &str), b: (f64, &str, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(b.2))
}

struct Ranked {
    score: f64,
    entry: Arc<FileEntry>,
}

impl Ranked {
    fn key(&self) -> (f64, &str, &str) {
        (self.score, &self.entry.metadata.display_name, &self.entry.metadata.directory)
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    // max-heap pops the worst-ranked candidate
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.key(), other.key())
    }
}

fn encode_entry(e: &FileEntry) -> Vec<u8> {
    let m = &e.metadata;
    let mut enc = Encoder::new();
    enc.str(&m.directory)
        .str(&m.display_name)
        .time(m.created_at)
        .time(m.modified_at)
        .time(m.accessed_at)
        .bool(m.read_only)
        .strs(&m.keywords)
        .opt_str(m.source_path.as_ref().and_then(|p| p.to_str()))
        .u64(m.size_bytes)
        .str(&e.content)
        .f32s(e.embedding.values());
    enc.finish()
}

fn decode_entry(d: &mut Decoder<'_>) -> Result<FileEntry> {
    let directory = d.str()?;
    let display_name = d.str()?;
    let metadata = FileMetadata {
        directory,
        display_name,
        created_at: d.time()?,
        modified_at: d.time()?,
        accessed_at: d.time()?,
        read_only: d.bool()?,
        keywords: d.strs()?,
        source_path: d.opt_str()?.map(PathBuf::from),
        size_bytes: d.u64()?,
    };
    let content = d.str()?;
    let embedding = EmbeddingVector::new(d.f32s()?)
        .map_err(|e| Error::CorruptSnapshot(format!("bad embedding: {e}")))?;
    Ok(FileEntry { metadata, content, embedding })
}

pub struct IndexStore {
    dim: usize,
    embedder: Arc<dyn Embedder>,
    clock: Arc<dyn Clock>,
    state: RwLock<Arc<StoreView>>,
    writer: Mutex<Option<Journal>>,
    data_dir: Option<PathBuf>,
}

impl std::fmt::Debug for IndexStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexStore").field("dim", &self.dim).field("data_dir", &self.data_dir).finish()
    }
}

impl IndexStore {
    /// A store with no persistence directory.
    pub fn in_memory(embedder: Arc<dyn Embedder>, clock: Arc<dyn Clock>) -> Self {
        Self {
            dim: embedder.dim(),
            embedder,
            clock,
            state: RwLock::new(Arc::new(StoreView::default())),
            writer: Mutex::new(None),
            data_dir: None,
        }
    }

    /// Open (or create) a persistent store in `data_dir`: the snapshot is
    /// loaded, the journal replayed, and further mutations are journaled.
    pub fn open(data_dir: &Path, embedder: Arc<dyn Embedder>, clock: Arc<dyn Clock>) -> Result<Self> {
        let snapshot = data_dir.join(SNAPSHOT_FILE);
        let mut store = if snapshot.exists() {
            Self::load(&snapshot, embedder, clock)?
        } else {
            Self::in_memory(embedder, clock)
        };
        let journal_path = data_dir.join(JOURNAL_FILE);
        let replayed = store.replay(&codec::read_journal(&journal_path)?)?;
        if replayed > 0 {
            log::info!("replayed {replayed} journal records from {}", journal_path.display());
        }
        *store.writer.get_mut() = Some(Journal::open(&journal_path)?);
        store.data_dir = Some(data_dir.to_path_buf());
        Ok(store)
    }

    /// Restore a store from a snapshot file. The result is not journaled.
    pub fn load(path: &Path, embedder: Arc<dyn Embedder>, clock: Arc<dyn Clock>) -> Result<Self> {
        let snap = codec::read_snapshot(path, MAGIC)?;
        let store = Self::in_memory(embedder, clock);
        if !snap.records.is_empty() && snap.dim as usize != store.dim {
            return Err(Error::DimMismatch { expected: store.dim, got: snap.dim as usize });
        }
        let mut view = StoreView::default();
        for record in &snap.records {
            let mut d = Decoder::new(record);
            let entry = decode_entry(&mut d)?;
            if entry.embedding.dim() != store.dim {
                return Err(Error::CorruptSnapshot("entry dimension differs from header".into()));
            }
            view.insert(Arc::new(entry));
        }
        *store.state.write() = Arc::new(view);
        Ok(store)
    }

    fn replay(&mut self, records: &[Vec<u8>]) -> Result<usize> {
        let view = Arc::make_mut(self.state.get_mut());
        for record in records {
            let mut d = Decoder::new(record);
            match d.u8()? {
                TAG_UPSERT => view.insert(Arc::new(decode_entry(&mut d)?)),
                TAG_REMOVE => {
                    let dir = d.str()?;
                    let name = d.str()?;
                    view.remove(&dir, &name);
                }
                t => return Err(Error::CorruptSnapshot(format!("unknown journal tag {t}"))),
            }
        }
        Ok(records.len())
    }

    /// Write `index.lsfs` into the data directory and reset the journal.
    pub fn persist(&self) -> Result<PathBuf> {
        let dir = self.data_dir.as_ref().ok_or_else(|| Error::Precondition("store has no data directory".into()))?;
        let path = dir.join(SNAPSHOT_FILE);
        self.persist_to(&path)?;
        Ok(path)
    }

    /// Write a snapshot to an arbitrary path. Resets the journal when the path
    /// is this store's own snapshot.
    pub fn persist_to(&self, path: &Path) -> Result<()> {
        let mut writer = self.writer.lock();
        let view = self.view();
        let records: Vec<Vec<u8>> = view.entries().map(|e| encode_entry(e)).collect();
        codec::write_snapshot(path, MAGIC, self.dim as u32, &records)?;
        let own = self.data_dir.as_ref().map(|d| d.join(SNAPSHOT_FILE));
        if own.as_deref() == Some(path) {
            if let Some(j) = writer.as_mut() {
                j.truncate()?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// Current immutable view.
    pub fn view(&self) -> Arc<StoreView> {
        self.state.read().clone()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let v = self.embedder.embed(text)?;
        if v.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: v.dim() });
        }
        Ok(v)
    }

    /// Run `f` against the state under the writer lock. `f` must validate
    /// before it mutates: an `Err` leaves the state untouched. Journal records
    /// are appended before the writer lock is released.
    fn mutate<T>(&self, f: impl FnOnce(&mut StoreView) -> Result<(T, Vec<Vec<u8>>)>) -> Result<T> {
        let mut writer = self.writer.lock();
        let (out, records) = {
            let mut state = self.state.write();
            // copy-on-write: only clones when a reader still holds the old view
            f(Arc::make_mut(&mut state))?
        };
        if let Some(j) = writer.as_mut() {
            for r in &records {
                j.append(r)?;
            }
        }
        Ok(out)
    }

    fn upsert_record(entry: &FileEntry) -> Vec<u8> {
        let mut r = vec![TAG_UPSERT];
        r.extend(encode_entry(entry));
        r
    }

    fn remove_record(directory: &str, name: &str) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TAG_REMOVE).str(directory).str(name);
        enc.finish()
    }

    /// Create or replace `(directory, name)` with fresh content and embedding.
    pub fn put_entry(&self, directory: &str, name: &str, content: &str, keywords: Option<Vec<String>>) -> Result<FileEntry> {
        self.put_entry_with_source(directory, name, content, keywords, None)
    }

    pub(crate) fn put_entry_with_source(
        &self,
        directory: &str,
        name: &str,
        content: &str,
        keywords: Option<Vec<String>>,
        source_path: Option<PathBuf>,
    ) -> Result<FileEntry> {
        validate_directory(directory)?;
        validate_name(name)?;
        let embedding = self.embed(content)?;
        let now = self.clock.now();
        self.mutate(|view| {
            let metadata = match view.get(directory, name) {
                Some(old) => {
                    let m = &old.metadata;
                    FileMetadata {
                        modified_at: strictly_after(now, m.modified_at),
                        keywords: keywords.unwrap_or_else(|| m.keywords.clone()),
                        source_path: source_path.or_else(|| m.source_path.clone()),
                        size_bytes: content.len() as u64,
                        ..m.clone()
                    }
                }
                None => FileMetadata {
                    display_name: name.to_string(),
                    directory: directory.to_string(),
                    created_at: now,
                    modified_at: now,
                    accessed_at: now,
                    read_only: false,
                    keywords: keywords.unwrap_or_default(),
                    source_path,
                    size_bytes: content.len() as u64,
                },
            };
            let entry = FileEntry { metadata, content: content.to_string(), embedding };
            let record = Self::upsert_record(&entry);
            view.insert(Arc::new(entry.clone()));
            Ok((entry, vec![record]))
        })
    }

    /// Copy an entry under a new key, reusing its embedding. Fails if the
    /// target key exists.
    pub(crate) fn insert_copy(&self, source: &FileEntry, directory: &str, name: &str) -> Result<FileEntry> {
        validate_directory(directory)?;
        validate_name(name)?;
        let now = self.clock.now();
        self.mutate(|view| {
            if view.get(directory, name).is_some() {
                return Err(Error::InvalidName(format!("{directory}/{name} already exists")));
            }
            let entry = FileEntry {
                metadata: FileMetadata {
                    display_name: name.to_string(),
                    directory: directory.to_string(),
                    created_at: now,
                    modified_at: now,
                    accessed_at: now,
                    read_only: false,
                    source_path: None,
                    ..source.metadata.clone()
                },
                content: source.content.clone(),
                embedding: source.embedding.clone(),
            };
            let record = Self::upsert_record(&entry);
            view.insert(Arc::new(entry.clone()));
            Ok((entry, vec![record]))
        })
    }

    pub fn get_entry(&self, directory: &str, name: &str) -> Result<FileEntry> {
        self.view().get(directory, name).map(|e| (**e).clone()).ok_or_else(|| Error::not_found(directory, name))
    }

    pub fn contains(&self, directory: &str, name: &str) -> bool {
        self.view().get(directory, name).is_some()
    }

    /// Sorted by display name; empty for an unknown directory.
    pub fn list_directory(&self, directory: &str) -> Vec<FileMetadata> {
        self.view().list(directory)
    }

    pub fn directories(&self) -> Vec<String> {
        self.view().directories()
    }

    pub fn len(&self) -> usize {
        self.view().len()
    }

    pub fn is_empty(&self) -> bool {
        self.view().is_empty()
    }

    pub fn state_hash(&self) -> String {
        self.view().state_hash()
    }

    /// Remove an entry; an emptied directory disappears with it.
    pub fn remove_entry(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        self.remove_inner(directory, name, true)
    }

    /// Remove regardless of the read-only flag (used when the disk copy is gone).
    pub(crate) fn force_remove(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        self.remove_inner(directory, name, false)
    }

    fn remove_inner(&self, directory: &str, name: &str, respect_lock: bool) -> Result<FileMetadata> {
        self.mutate(|view| {
            let entry = view.get(directory, name).ok_or_else(|| Error::not_found(directory, name))?;
            if respect_lock && entry.metadata.read_only {
                return Err(Error::locked(directory, name));
            }
            let removed = view.remove(directory, name).expect("checked above");
            Ok((removed.metadata.clone(), vec![Self::remove_record(directory, name)]))
        })
    }

    /// Remove several entries atomically: either every key is removed or none.
    pub(crate) fn remove_many(&self, keys: &[(String, String)]) -> Result<Vec<FileMetadata>> {
        self.mutate(|view| {
            for (d, n) in keys {
                let entry = view.get(d, n).ok_or_else(|| Error::not_found(d, n))?;
                if entry.metadata.read_only {
                    return Err(Error::locked(d, n));
                }
            }
            let mut removed = Vec::new();
            let mut records = Vec::new();
            for (d, n) in keys {
                if let Some(e) = view.remove(d, n) {
                    removed.push(e.metadata.clone());
                    records.push(Self::remove_record(d, n));
                }
            }
            Ok((removed, records))
        })
    }

    /// Apply a metadata-only change (lock flag, access time).
    pub(crate) fn update_metadata(
        &self,
        directory: &str,
        name: &str,
        f: impl FnOnce(&mut FileMetadata, DateTime<Utc>),
    ) -> Result<FileMetadata> {
        let now = self.clock.now();
        self.mutate(|view| {
            let old = view.get(directory, name).ok_or_else(|| Error::not_found(directory, name))?;
            let mut entry = (**old).clone();
            f(&mut entry.metadata, now);
            let record = Self::upsert_record(&entry);
            let meta = entry.metadata.clone();
            view.insert(Arc::new(entry));
            Ok((meta, vec![record]))
        })
    }

    /// Case-insensitive substring scan over content, display name and user
    /// keywords. Results are ordered by display name, then directory.
    pub fn scan_keywords(&self, directory: Option<&str>, keywords: &[String], mode: MatchMode) -> Result<RetrievalResult> {
        let needles: Vec<String> = keywords.iter().map(|k| k.trim().to_lowercase()).filter(|k| !k.is_empty()).collect();
        if needles.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let view = self.view();
        let mut hits: Vec<&Arc<FileEntry>> = view
            .scope(directory)
            .filter(|e| match mode {
                MatchMode::And => needles.iter().all(|k| matches_keyword(e, k)),
                MatchMode::Or => needles.iter().any(|k| matches_keyword(e, k)),
            })
            .collect();
        hits.sort_by(|a, b| {
            a.metadata.display_name.cmp(&b.metadata.display_name).then_with(|| a.metadata.directory.cmp(&b.metadata.directory))
        });
        let mut out = RetrievalResult::default();
        for e in hits {
            out.push(e);
        }
        Ok(out)
    }

    /// The `n` entries in scope most cosine-similar to `query`.
    pub fn topn_semantic(&self, directory: Option<&str>, query: &str, n: usize) -> Result<RetrievalResult> {
        if query.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        if n == 0 {
            return Err(Error::Precondition("n must be at least 1".into()));
        }
        let q = self.embed(query)?;
        Ok(self.topn_by_vector(directory, &q, n))
    }

    pub fn topn_by_vector(&self, directory: Option<&str>, query: &EmbeddingVector, n: usize) -> RetrievalResult {
        let view = self.view();
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(n + 1);
        for entry in view.scope(directory) {
            heap.push(Ranked { score: query.cosine(&entry.embedding), entry: entry.clone() });
            if heap.len() > n {
                heap.pop();
            }
        }
        let ranked = heap.into_sorted_vec();
        let mut out = RetrievalResult { scores: Some(Vec::with_capacity(ranked.len())), ..Default::default() };
        for r in ranked {
            out.push(&r.entry);
            out.scores.as_mut().unwrap().push(r.score);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{ManualClock, SystemClock};
    use crate::embedding::HashingEmbedder;

    fn store() -> IndexStore {
        IndexStore::in_memory(Arc::new(HashingEmbedder::new(64)), Arc::new(SystemClock::new()))
    }

    fn kw(ks: &[&str]) -> Vec<String> {
        ks.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn put_then_get() {
        let s = store();
        s.put_entry("d", "a.txt", "hello", None).unwrap();
        let e = s.get_entry("d", "a.txt").unwrap();
        assert_eq!(e.content, "hello");
        assert_eq!(e.metadata.directory, "d");
        assert_eq!(e.metadata.size_bytes, 5);
        assert!(matches!(s.get_entry("d", "missing"), Err(Error::NotFound { .. })));
    }

    #[test]
    fn overwrite_keeps_one_entry_and_bumps_mtime() {
        let clock = Arc::new(ManualClock::new(Utc::now()));
        let s = IndexStore::in_memory(Arc::new(HashingEmbedder::new(32)), clock);
        let first = s.put_entry("d", "a", "x", Some(kw(&["k"]))).unwrap();
        let second = s.put_entry("d", "a", "y", None).unwrap();
        assert_eq!(s.len(), 1);
        assert!(second.metadata.modified_at > first.metadata.modified_at);
        assert_eq!(second.metadata.created_at, first.metadata.created_at);
        assert_eq!(second.metadata.keywords, kw(&["k"]));
    }

    #[test]
    fn rejects_separators() {
        let s = store();
        assert!(matches!(s.put_entry("d", "a/b", "x", None), Err(Error::InvalidName(_))));
        assert!(matches!(s.put_entry("d", "", "x", None), Err(Error::InvalidName(_))));
        assert!(matches!(s.put_entry(".lsfs", "a", "x", None), Err(Error::InvalidDirectory(_))));
    }

    #[test]
    fn listing_is_sorted_and_empty_dirs_vanish() {
        let s = store();
        for n in ["c", "a", "b"] {
            s.put_entry("d", n, n, None).unwrap();
        }
        let names: Vec<_> = s.list_directory("d").into_iter().map(|m| m.display_name).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(s.list_directory("nope").is_empty());
        s.remove_entry("d", "a").unwrap();
        assert!(s.directories().contains(&"d".to_string()));
        s.remove_entry("d", "b").unwrap();
        s.remove_entry("d", "c").unwrap();
        assert!(s.list_directory("d").is_empty());
        assert!(!s.directories().contains(&"d".to_string()));
    }

    #[test]
    fn locked_entries_cannot_be_removed_but_are_readable() {
        let s = store();
        s.put_entry("d", "a", "x", None).unwrap();
        s.update_metadata("d", "a", |m, _| m.read_only = true).unwrap();
        assert!(matches!(s.remove_entry("d", "a"), Err(Error::FileLocked { .. })));
        assert_eq!(s.get_entry("d", "a").unwrap().content, "x");
    }

    #[test]
    fn keyword_scan_and_or() {
        let s = store();
        s.put_entry("d", "f1", "alpha beta", None).unwrap();
        s.put_entry("d", "f2", "Alpha", None).unwrap();
        s.put_entry("d", "f3", "gamma", None).unwrap();
        let and = s.scan_keywords(None, &kw(&["alpha", "beta"]), MatchMode::And).unwrap();
        assert_eq!(and.names, ["f1"]);
        let or = s.scan_keywords(None, &kw(&["alpha", "beta"]), MatchMode::Or).unwrap();
        assert_eq!(or.names, ["f1", "f2"]);
        assert!(matches!(s.scan_keywords(None, &[], MatchMode::Or), Err(Error::EmptyQuery)));
        // names and user keywords also match
        s.put_entry("e", "gamma-notes", "nothing here", Some(kw(&["Zeta"]))).unwrap();
        assert_eq!(s.scan_keywords(Some("e"), &kw(&["GAMMA"]), MatchMode::Or).unwrap().names, ["gamma-notes"]);
        assert_eq!(s.scan_keywords(None, &kw(&["zeta"]), MatchMode::Or).unwrap().names, ["gamma-notes"]);
    }

    #[test]
    fn topn_self_similarity_and_clamp() {
        let s = store();
        let texts = ["red apples and pears", "quantum field theory", "stock market news", "apple pie recipe", "rust borrow checker"];
        for (i, t) in texts.iter().enumerate() {
            s.put_entry("d", &format!("f{i}"), t, None).unwrap();
        }
        let r = s.topn_semantic(None, texts[1], 1).unwrap();
        assert_eq!(r.names, ["f1"]);
        assert!((r.scores.as_ref().unwrap()[0] - 1.0).abs() < 1e-6);
        let all = s.topn_semantic(Some("d"), "apple", 100).unwrap();
        assert_eq!(all.len(), 5);
        let scores = all.scores.unwrap();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(matches!(s.topn_semantic(None, "  ", 3), Err(Error::EmptyQuery)));
    }

    #[test]
    fn ties_break_by_name() {
        let s = store();
        for n in ["b", "a", "c"] {
            s.put_entry("d", n, "same text", None).unwrap();
        }
        let r = s.topn_semantic(None, "same text", 2).unwrap();
        assert_eq!(r.names, ["a", "b"]);
    }

    #[test]
    fn identical_content_identical_embedding() {
        let s = store();
        let a = s.put_entry("d", "a", "payload", None).unwrap();
        let b = s.put_entry("d", "a", "payload", None).unwrap();
        assert_eq!(a.embedding, b.embedding);
    }

    #[test]
    fn persist_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(48));
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let s = IndexStore::open(dir.path(), emb.clone(), clock.clone()).unwrap();
        s.put_entry("d", "a", "one", Some(kw(&["x"]))).unwrap();
        s.put_entry("e", "b", "", None).unwrap();
        s.update_metadata("e", "b", |m, _| m.read_only = true).unwrap();
        let path = s.persist().unwrap();
        let loaded = IndexStore::load(&path, emb.clone(), clock.clone()).unwrap();
        assert_eq!(loaded.state_hash(), s.state_hash());
        for e in s.view().entries() {
            let l = loaded.get_entry(&e.metadata.directory, &e.metadata.display_name).unwrap();
            assert_eq!(&l, &**e);
        }
    }

    #[test]
    fn journal_replays_mutations_after_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let emb: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(16));
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let hash = {
            let s = IndexStore::open(dir.path(), emb.clone(), clock.clone()).unwrap();
            s.put_entry("d", "a", "one", None).unwrap();
            s.persist().unwrap();
            s.put_entry("d", "b", "two", None).unwrap();
            s.remove_entry("d", "a").unwrap();
            s.state_hash()
        };
        let reopened = IndexStore::open(dir.path(), emb, clock).unwrap();
        assert_eq!(reopened.state_hash(), hash);
        assert_eq!(reopened.len(), 1);
    }

    #[test]
    fn empty_and_truncated_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let emb: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(16));
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let empty = store_at(dir.path(), &emb, &clock);
        let p = empty.persist().unwrap();
        assert!(IndexStore::load(&p, emb.clone(), clock.clone()).unwrap().is_empty());

        empty.put_entry("d", "a", "content", None).unwrap();
        empty.persist().unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(IndexStore::load(&p, emb, clock), Err(Error::CorruptSnapshot(_))));
    }

    fn store_at(dir: &Path, emb: &Arc<dyn Embedder>, clock: &Arc<dyn Clock>) -> IndexStore {
        IndexStore::open(dir, emb.clone(), clock.clone()).unwrap()
    }

    #[test]
    fn readers_keep_their_view() {
        let s = store();
        s.put_entry("d", "a", "x", None).unwrap();
        let view = s.view();
        s.remove_entry("d", "a").unwrap();
        assert!(view.get("d", "a").is_some());
        assert!(s.view().get("d", "a").is_none());
    }
}
