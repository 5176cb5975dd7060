//! Version recorder: per-file chains of pre-modification snapshots.
//!
//! Chains are append-only. A rollback records the state it replaces, so it can
//! itself be undone with `resolve_by_count(1)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::codec::{self, Decoder, Encoder, Journal};
use crate::error::{Error, Result};
use crate::store::FileMetadata;

pub const SNAPSHOT_FILE: &str = "versions.lsfs";
pub const JOURNAL_FILE: &str = "versions.journal";
const MAGIC: &[u8; 4] = b"LSFV";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileKey {
    pub directory: String,
    pub name: String,
}

impl FileKey {
    pub fn new(directory: impl Into<String>, name: impl Into<String>) -> Self {
        Self { directory: directory.into(), name: name.into() }
    }
}

impl fmt::Display for FileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.directory, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Version {
    pub seq: u64,
    pub recorded_at: DateTime<Utc>,
    pub metadata: FileMetadata,
    pub content: String,
}

#[derive(Default)]
struct Chain {
    versions: Vec<Arc<Version>>,
    /// seq handed to the next record
    next_seq: u64,
}

pub struct VersionRecorder {
    clock: Arc<dyn Clock>,
    chains: RwLock<BTreeMap<FileKey, Chain>>,
    journal: Mutex<Option<Journal>>,
    data_dir: Option<PathBuf>,
    retention: Option<usize>,
}

impl fmt::Debug for VersionRecorder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VersionRecorder").field("keys", &self.chains.read().len()).field("retention", &self.retention).finish()
    }
}

fn encode_version(key: &FileKey, v: &Version) -> Vec<u8> {
    let m = &v.metadata;
    let mut e = Encoder::new();
    e.str(&key.directory)
        .str(&key.name)
        .u64(v.seq)
        .time(v.recorded_at)
        .str(&m.display_name)
        .str(&m.directory)
        .time(m.created_at)
        .time(m.modified_at)
        .time(m.accessed_at)
        .bool(m.read_only)
        .strs(&m.keywords)
        .opt_str(m.source_path.as_ref().and_then(|p| p.to_str()))
        .u64(m.size_bytes)
        .str(&v.content);
    e.finish()
}

fn decode_version(bytes: &[u8]) -> Result<(FileKey, Version)> {
    let mut d = Decoder::new(bytes);
    let key = FileKey { directory: d.str()?, name: d.str()? };
    let seq = d.u64()?;
    let recorded_at = d.time()?;
    let metadata = FileMetadata {
        display_name: d.str()?,
        directory: d.str()?,
        created_at: d.time()?,
        modified_at: d.time()?,
        accessed_at: d.time()?,
        read_only: d.bool()?,
        keywords: d.strs()?,
        source_path: d.opt_str()?.map(PathBuf::from),
        size_bytes: d.u64()?,
    };
    let content = d.str()?;
    Ok((key, Version { seq, recorded_at, metadata, content }))
}

impl VersionRecorder {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self { clock, chains: RwLock::new(BTreeMap::new()), journal: Mutex::new(None), data_dir: None, retention: None }
    }

    /// Keep at most `cap` versions per file (oldest dropped first).
    pub fn with_retention(mut self, cap: Option<usize>) -> Self {
        self.retention = cap.filter(|&c| c > 0);
        self
    }

    pub fn open(data_dir: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        let mut rec = Self::in_memory(clock);
        let snap = data_dir.join(SNAPSHOT_FILE);
        let mut records = if snap.exists() { codec::read_snapshot(&snap, MAGIC)?.records } else { Vec::new() };
        let journal_path = data_dir.join(JOURNAL_FILE);
        records.extend(codec::read_journal(&journal_path)?);
        {
            let chains = rec.chains.get_mut();
            for r in &records {
                let (key, v) = decode_version(r)?;
                let chain = chains.entry(key).or_default();
                if chain.versions.last().is_some_and(|last| last.seq >= v.seq) {
                    continue; // already in the snapshot
                }
                chain.next_seq = v.seq + 1;
                chain.versions.push(Arc::new(v));
            }
        }
        *rec.journal.get_mut() = Some(Journal::open(&journal_path)?);
        rec.data_dir = Some(data_dir.to_path_buf());
        Ok(rec)
    }

    pub fn persist(&self) -> Result<PathBuf> {
        let dir = self.data_dir.as_ref().ok_or_else(|| Error::Precondition("recorder has no data directory".into()))?;
        let path = dir.join(SNAPSHOT_FILE);
        let mut journal = self.journal.lock();
        let chains = self.chains.read();
        let records: Vec<Vec<u8>> =
            chains.iter().flat_map(|(k, c)| c.versions.iter().map(move |v| encode_version(k, v))).collect();
        codec::write_snapshot(&path, MAGIC, 0, &records)?;
        if let Some(j) = journal.as_mut() {
            j.truncate()?;
        }
        Ok(path)
    }

    /// Append a snapshot of `(metadata, content)`; returns its seq.
    pub fn record(&self, key: &FileKey, metadata: &FileMetadata, content: &str) -> Result<u64> {
        let mut journal = self.journal.lock();
        let mut chains = self.chains.write();
        let chain = chains.entry(key.clone()).or_insert_with(|| Chain { versions: Vec::new(), next_seq: 1 });
        let now = self.clock.now();
        let recorded_at = match chain.versions.last() {
            Some(last) if last.recorded_at > now => last.recorded_at,
            _ => now,
        };
        let version = Version { seq: chain.next_seq, recorded_at, metadata: metadata.clone(), content: content.to_string() };
        if let Some(j) = journal.as_mut() {
            j.append(&encode_version(key, &version))?;
        }
        chain.next_seq += 1;
        let seq = version.seq;
        chain.versions.push(Arc::new(version));
        if let Some(cap) = self.retention {
            let excess = chain.versions.len().saturating_sub(cap);
            chain.versions.drain(..excess);
        }
        Ok(seq)
    }

    pub fn versions(&self, key: &FileKey) -> Vec<Arc<Version>> {
        self.chains.read().get(key).map(|c| c.versions.clone()).unwrap_or_default()
    }

    pub fn len(&self, key: &FileKey) -> usize {
        self.chains.read().get(key).map_or(0, |c| c.versions.len())
    }

    pub fn contains(&self, key: &FileKey, seq: u64) -> bool {
        self.chains.read().get(key).is_some_and(|c| c.versions.iter().any(|v| v.seq == seq))
    }

    pub fn keys(&self) -> Vec<FileKey> {
        self.chains.read().keys().cloned().collect()
    }

    /// Latest version recorded at or before `target`.
    pub fn resolve_by_date(&self, key: &FileKey, target: DateTime<Utc>) -> Result<Arc<Version>> {
        let chains = self.chains.read();
        let chain = chains.get(key).filter(|c| !c.versions.is_empty()).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        // recorded_at is non-decreasing, so binary search the boundary
        let idx = chain.versions.partition_point(|v| v.recorded_at <= target);
        if idx == 0 {
            return Err(Error::NoVersionBefore(key.to_string()));
        }
        Ok(chain.versions[idx - 1].clone())
    }

    /// The version `k` steps back from the current content; `k = 1` is the
    /// most recent snapshot.
    pub fn resolve_by_count(&self, key: &FileKey, k: usize) -> Result<Arc<Version>> {
        let chains = self.chains.read();
        let chain = chains.get(key).filter(|c| !c.versions.is_empty()).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        let available = chain.versions.len();
        if k == 0 || k > available {
            return Err(Error::TooFewVersions { key: key.to_string(), available, requested: k });
        }
        Ok(chain.versions[available - k].clone())
    }
}
