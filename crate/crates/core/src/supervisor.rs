//! Polling reconciler between the mirrored disk tree and the index.
//!
//! A scan hashes every `<root>/<directory>/<name>` file and compares it with
//! the store. Differences are confirmed again under the per-file lock before
//! they are applied, so a syscall that is halfway through its store-then-disk
//! write is never mistaken for an out-of-band edit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::diff::compare_change;
use crate::error::{Error, Result};
use crate::llm::{summarize, LlmClient, SummaryInput};
use crate::store::{content_hash, validate_directory, validate_name};
use crate::syscalls::SyscallContext;
use crate::versions::{FileKey, VersionRecorder};

pub const DEFAULT_INTERVAL_MS: u64 = 1_000;
pub const MIN_INTERVAL_MS: u64 = 100;
pub const BOOKKEEPING_DIR: &str = ".lsfs";
pub const CHANGE_LOG: &str = "changes.log";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileRef {
    pub directory: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedFile {
    pub directory: String,
    pub name: String,
    pub old_hash: String,
    pub new_hash: String,
    #[serde(skip)]
    pub old_content: String,
    #[serde(skip)]
    pub new_content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scanned_at: DateTime<Utc>,
    pub changed: Vec<ChangedFile>,
    pub deleted: Vec<FileRef>,
    pub created: Vec<FileRef>,
    pub errors: Vec<ScanFailure>,
}

impl ScanReport {
    /// No store change was made.
    pub fn is_quiet(&self) -> bool {
        self.changed.is_empty() && self.deleted.is_empty() && self.created.is_empty()
    }
}

/// Every mirrored file under `root` keyed by (directory, name). Hidden
/// entries, loose files at the root and invalid names are skipped; unreadable
/// files are reported in `errors`.
pub fn disk_state(root: &Path, errors: &mut Vec<ScanFailure>) -> Result<BTreeMap<(String, String), String>> {
    if !root.is_dir() {
        return Err(Error::RootMissing(root.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for dir in fs::read_dir(root)? {
        let dir = dir?;
        let Some(dname) = dir.file_name().to_str().map(str::to_string) else { continue };
        if validate_directory(&dname).is_err() || !dir.file_type()?.is_dir() {
            continue;
        }
        let listing = match fs::read_dir(dir.path()) {
            Ok(l) => l,
            Err(e) => {
                errors.push(ScanFailure { path: dir.path(), error: e.to_string() });
                continue;
            }
        };
        for file in listing.flatten() {
            let Some(fname) = file.file_name().to_str().map(str::to_string) else { continue };
            if fname.starts_with('.') || validate_name(&fname).is_err() || !file.file_type().is_ok_and(|t| t.is_file()) {
                continue;
            }
            match fs::read_to_string(file.path()) {
                Ok(content) => {
                    out.insert((dname.clone(), fname), content);
                }
                // deleted between listing and read: treat as absent
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => errors.push(ScanFailure { path: file.path(), error: e.to_string() }),
            }
        }
    }
    Ok(out)
}

fn read_disk(path: &Path) -> std::io::Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(c) => Ok(Some(c)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// One change-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeLogEntry {
    pub at: DateTime<Utc>,
    pub directory: String,
    pub name: String,
    pub old_hash: String,
    pub new_hash: String,
    pub diff: String,
    /// Absent when the LLM could not be reached.
    pub summary: Option<String>,
}

/// Summarize each changed file of a report. Summarization failures are
/// logged and leave `summary` empty; the sync itself is already committed.
pub fn emit_change_log(report: &ScanReport, llm: &dyn LlmClient) -> Result<Vec<ChangeLogEntry>> {
    if report.changed.is_empty() {
        return Err(Error::Precondition("scan report has no changed files".into()));
    }
    let mut out = Vec::with_capacity(report.changed.len());
    for c in &report.changed {
        let diff = compare_change(&c.old_content, &c.new_content);
        let summary = if diff.is_empty() {
            Some("no changes".to_string())
        } else {
            match summarize(llm, SummaryInput::Change { old: &c.old_content, new: &c.new_content }) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("change summary for {}/{} unavailable: {e}", c.directory, c.name);
                    None
                }
            }
        };
        out.push(ChangeLogEntry {
            at: report.scanned_at,
            directory: c.directory.clone(),
            name: c.name.clone(),
            old_hash: c.old_hash.clone(),
            new_hash: c.new_hash.clone(),
            diff: diff.render(),
            summary,
        });
    }
    Ok(out)
}

/// Append entries to `<root>/.lsfs/changes.log` as JSON lines.
pub fn append_change_log(root: &Path, entries: &[ChangeLogEntry]) -> Result<()> {
    let dir = root.join(BOOKKEEPING_DIR);
    fs::create_dir_all(&dir)?;
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(CHANGE_LOG))?;
    for e in entries {
        let line = serde_json::to_string(e).expect("change log entry serializes");
        writeln!(f, "{line}")?;
    }
    Ok(())
}

struct Running {
    stop: Sender<()>,
    thread: JoinHandle<()>,
}

/// Supervisor for one mirrored root.
pub struct Supervisor {
    ctx: Arc<SyscallContext>,
    llm: Option<Arc<dyn LlmClient>>,
    versions: Option<Arc<VersionRecorder>>,
    scan_lock: Mutex<()>,
    running: Mutex<Option<Running>>,
    active: AtomicBool,
}

impl std::fmt::Debug for Supervisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Supervisor").field("root", &self.ctx.root()).field("active", &self.is_running()).finish()
    }
}

impl Supervisor {
    pub fn new(ctx: Arc<SyscallContext>) -> Result<Self> {
        if !ctx.mirror_enabled() {
            return Err(Error::MirrorDisabled);
        }
        Ok(Self { ctx, llm: None, versions: None, scan_lock: Mutex::new(()), running: Mutex::new(None), active: AtomicBool::new(false) })
    }

    /// Write a change log entry for every synced content change.
    pub fn with_llm(mut self, llm: Arc<dyn LlmClient>) -> Self {
        self.llm = Some(llm);
        self
    }

    /// Record the pre-sync state of changed files so out-of-band edits can be
    /// rolled back.
    pub fn with_versions(mut self, versions: Arc<VersionRecorder>) -> Self {
        self.versions = Some(versions);
        self
    }

    pub fn is_running(&self) -> bool {
        self.active.load(Ordering::SeqCst)
    }

    /// One reconciliation pass. Blocks while another scan is in progress.
    pub fn scan_once(&self) -> Result<ScanReport> {
        let _scan = self.scan_lock.lock();
        self.scan_locked()
    }

    fn scan_locked(&self) -> Result<ScanReport> {
        let root = self.ctx.root().ok_or(Error::MirrorDisabled)?.to_path_buf();
        let mut errors = Vec::new();
        let disk = disk_state(&root, &mut errors)?;
        let view = self.ctx.store().view();
        let mut candidates: BTreeSet<(String, String)> = disk.keys().cloned().collect();
        for e in view.entries() {
            let key = (e.metadata.directory.clone(), e.metadata.display_name.clone());
            match disk.get(&key) {
                Some(content) if *content == e.content => {
                    candidates.remove(&key);
                }
                _ => {
                    candidates.insert(key);
                }
            }
        }
        drop(view);

        let mut report =
            ScanReport { scanned_at: self.ctx.store().clock().now(), changed: vec![], deleted: vec![], created: vec![], errors };
        for (directory, name) in candidates {
            if let Err(e) = self.reconcile(&root, &directory, &name, &mut report) {
                report.errors.push(ScanFailure { path: root.join(&directory).join(&name), error: e.to_string() });
            }
        }
        if !report.changed.is_empty() {
            if let Some(llm) = &self.llm {
                let entries = emit_change_log(&report, llm.as_ref())?;
                append_change_log(&root, &entries)?;
            }
        }
        Ok(report)
    }

    /// Re-check one key under its lock and apply whatever the disk says.
    fn reconcile(&self, root: &Path, directory: &str, name: &str, report: &mut ScanReport) -> Result<()> {
        let _guard = self.ctx.locks().acquire(&[FileKey::new(directory, name)]);
        let on_disk = read_disk(&root.join(directory).join(name))?;
        let in_store = self.ctx.store().view().get(directory, name).cloned();
        let file = || FileRef { directory: directory.to_string(), name: name.to_string() };
        match (on_disk, in_store) {
            (Some(content), Some(entry)) if content != entry.content => {
                if let Some(v) = &self.versions {
                    v.record(&FileKey::new(directory, name), &entry.metadata, &entry.content)?;
                }
                self.ctx.sync_from_disk(directory, name, &content)?;
                report.changed.push(ChangedFile {
                    directory: directory.to_string(),
                    name: name.to_string(),
                    old_hash: content_hash(&entry.content),
                    new_hash: content_hash(&content),
                    old_content: entry.content.clone(),
                    new_content: content,
                });
            }
            (Some(content), None) => {
                self.ctx.sync_from_disk(directory, name, &content)?;
                report.created.push(file());
            }
            (None, Some(_)) => {
                self.ctx.sync_removed(directory, name)?;
                report.deleted.push(file());
            }
            // settled by a syscall since detection
            _ => {}
        }
        Ok(())
    }

    /// Scan every `interval_ms` on a background thread until [`stop`](Self::stop).
    /// A tick that finds a scan still in progress is skipped.
    pub fn start(self: &Arc<Self>, interval_ms: u64) -> Result<()> {
        if interval_ms < MIN_INTERVAL_MS {
            return Err(Error::IntervalTooShort(interval_ms));
        }
        let mut running = self.running.lock();
        if running.is_some() {
            return Err(Error::AlreadyRunning);
        }
        let (tx, rx) = mpsc::channel::<()>();
        let me = Arc::clone(self);
        self.active.store(true, Ordering::SeqCst);
        let thread = std::thread::Builder::new()
            .name("lsfs-supervisor".into())
            .spawn(move || loop {
                if let Some(_scan) = me.scan_lock.try_lock() {
                    match me.scan_locked() {
                        Ok(r) if !r.is_quiet() => log::info!(
                            "supervisor synced {} changed, {} created, {} deleted",
                            r.changed.len(),
                            r.created.len(),
                            r.deleted.len()
                        ),
                        Ok(_) => {}
                        Err(e) => log::warn!("supervisor scan failed: {e}"),
                    }
                }
                match rx.recv_timeout(Duration::from_millis(interval_ms)) {
                    Err(RecvTimeoutError::Timeout) => continue,
                    _ => break,
                }
            })?;
        *running = Some(Running { stop: tx, thread });
        Ok(())
    }

    /// Stop the loop and wait for an in-flight scan to finish. No-op when idle.
    pub fn stop(&self) {
        let running = self.running.lock().take();
        if let Some(r) = running {
            let _ = r.stop.send(());
            let _ = r.thread.join();
        }
        self.active.store(false, Ordering::SeqCst);
    }
}

impl Drop for Supervisor {
    fn drop(&mut self) {
        self.stop();
    }
}
