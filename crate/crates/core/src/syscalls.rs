//! Atomic and composite syscalls over the index store, mirrored to
//! `<root>/<directory>/<name>` on disk when a root is bound.
//!
//! Each mutation holds the per-file advisory lock for the whole
//! store-then-disk pair, and the supervisor takes the same locks, so the two
//! sides never disagree about a file mid-operation.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RawMutex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::ExtractorRegistry;
use crate::store::{validate_directory, validate_name, FileEntry, FileMetadata, IndexStore, MatchMode, RetrievalResult};
use crate::versions::FileKey;

pub use crate::diff::compare_change;

pub const DEFAULT_TOP_N: usize = 3;
pub const JOIN_SEPARATOR: &str = "\n";

/// Content supplied to create/overwrite/append: literal text or a file on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Import {
    Text(String),
    Path(PathBuf),
}

impl Import {
    /// Single-line values containing a path separator are treated as paths;
    /// everything else is literal text.
    pub fn from_arg(value: &str) -> Import {
        let looks_like_path = !value.contains('\n') && (value.contains('/') || value.contains('\\')) && !value.contains(' ');
        if looks_like_path {
            Import::Path(PathBuf::from(value))
        } else {
            Import::Text(value.to_string())
        }
    }
}

/// `create_or_get_file` returns either a file or a directory listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreateOrGet {
    Created(FileEntry),
    Existing(FileEntry),
    Listing(Vec<FileMetadata>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub entries: Vec<FileMetadata>,
    pub errors: Vec<ImportFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportFailure {
    pub path: PathBuf,
    pub error: String,
}

type FileGuard = parking_lot::lock_api::ArcMutexGuard<RawMutex, ()>;

/// Advisory per-file locks.
#[derive(Debug, Default)]
pub struct FileLocks {
    table: Mutex<HashMap<FileKey, Arc<Mutex<()>>>>,
}

impl FileLocks {
    /// Lock every key, in sorted order so two multi-file operations cannot
    /// deadlock.
    pub fn acquire(&self, keys: &[FileKey]) -> Vec<FileGuard> {
        let mut keys: Vec<&FileKey> = keys.iter().collect();
        keys.sort();
        keys.dedup();
        let handles: Vec<Arc<Mutex<()>>> = {
            let mut table = self.table.lock();
            keys.iter().map(|k| table.entry((*k).clone()).or_default().clone()).collect()
        };
        handles.iter().map(|m| m.lock_arc()).collect()
    }
}

pub struct SyscallContext {
    store: Arc<IndexStore>,
    root: Option<PathBuf>,
    extractors: ExtractorRegistry,
    locks: Arc<FileLocks>,
}

impl std::fmt::Debug for SyscallContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyscallContext").field("root", &self.root).finish()
    }
}

fn key(directory: &str, name: &str) -> FileKey {
    FileKey::new(directory, name)
}

impl SyscallContext {
    /// Store-only context (no disk mirror).
    pub fn detached(store: Arc<IndexStore>) -> Self {
        Self { store, root: None, extractors: ExtractorRegistry::default(), locks: Arc::default() }
    }

    /// Context mirroring into `root`, which must be an existing directory.
    pub fn mirrored(store: Arc<IndexStore>, root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::RootMissing(root.to_path_buf()));
        }
        Ok(Self { store, root: Some(root.to_path_buf()), extractors: ExtractorRegistry::default(), locks: Arc::default() })
    }

    pub fn with_extractors(mut self, extractors: ExtractorRegistry) -> Self {
        self.extractors = extractors;
        self
    }

    pub fn store(&self) -> &Arc<IndexStore> {
        &self.store
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn mirror_enabled(&self) -> bool {
        self.root.is_some()
    }

    pub fn extractors(&self) -> &ExtractorRegistry {
        &self.extractors
    }

    pub fn locks(&self) -> &Arc<FileLocks> {
        &self.locks
    }

    pub fn disk_path(&self, directory: &str, name: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(directory).join(name))
    }

    fn mirror_write(&self, directory: &str, name: &str, content: &str) -> Result<()> {
        if let Some(path) = self.disk_path(directory, name) {
            fs::create_dir_all(path.parent().expect("mirror path has a parent"))?;
            fs::write(&path, content)?;
        }
        Ok(())
    }

    fn mirror_remove(&self, directory: &str, name: &str) -> Result<()> {
        if let Some(path) = self.disk_path(directory, name) {
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
            if !self.store.view().has_directory(directory) {
                // only succeeds when empty, which is what we want
                let _ = fs::remove_dir(path.parent().expect("mirror path has a parent"));
            }
        }
        Ok(())
    }

    /// Resolve an import to text.
    pub fn read_import(&self, import: &Import) -> Result<String> {
        match import {
            Import::Text(t) => Ok(t.clone()),
            Import::Path(p) => {
                if !p.is_file() {
                    return Err(Error::PathUnreadable { path: p.clone(), reason: "no such file".into() });
                }
                self.extractors.extract_file(p)
            }
        }
    }

    fn writable(&self, directory: &str, name: &str) -> Result<FileEntry> {
        let entry = self.store.get_entry(directory, name)?;
        if entry.metadata.read_only {
            return Err(Error::locked(directory, name));
        }
        Ok(entry)
    }

    /// Create, read or list depending on which arguments are present:
    /// name + import on a missing file creates it, name alone reads it (and
    /// bumps the access time), no name lists the directory. Name + import on
    /// an existing file returns the existing file untouched.
    pub fn create_or_get_file(&self, directory: &str, name: Option<&str>, import: Option<&Import>) -> Result<CreateOrGet> {
        validate_directory(directory)?;
        let Some(name) = name else {
            return Ok(CreateOrGet::Listing(self.store.list_directory(directory)));
        };
        validate_name(name)?;
        let _guard = self.locks.acquire(&[key(directory, name)]);
        if self.store.contains(directory, name) {
            self.store.update_metadata(directory, name, |m, now| m.accessed_at = crate::clock::strictly_after(now, m.accessed_at))?;
            return Ok(CreateOrGet::Existing(self.store.get_entry(directory, name)?));
        }
        let Some(import) = import else {
            return Err(Error::not_found(directory, name));
        };
        let content = self.read_import(import)?;
        let source = match import {
            Import::Path(p) => Some(p.clone()),
            Import::Text(_) => self.disk_path(directory, name),
        };
        let entry = self.store.put_entry_with_source(directory, name, &content, None, source)?;
        self.mirror_write(directory, name, &content)?;
        Ok(CreateOrGet::Created(entry))
    }

    /// `add_`: append to the end of a file.
    pub fn append(&self, directory: &str, name: &str, new_content: &str) -> Result<FileEntry> {
        let _guard = self.locks.acquire(&[key(directory, name)]);
        let old = self.writable(directory, name)?;
        let content = format!("{}{}", old.content, new_content);
        let entry = self.store.put_entry(directory, name, &content, None)?;
        self.mirror_write(directory, name, &content)?;
        Ok(entry)
    }

    /// Replace the whole content. Does not record a version; callers that
    /// need history go through the change-summary API.
    pub fn overwrite(&self, directory: &str, name: &str, import: &Import) -> Result<FileEntry> {
        let _guard = self.locks.acquire(&[key(directory, name)]);
        self.overwrite_locked(directory, name, import)
    }

    /// `overwrite` for callers already holding the file lock.
    pub(crate) fn overwrite_locked(&self, directory: &str, name: &str, import: &Import) -> Result<FileEntry> {
        self.writable(directory, name)?;
        let content = self.read_import(import)?;
        let entry = self.store.put_entry(directory, name, &content, None)?;
        self.mirror_write(directory, name, &content)?;
        Ok(entry)
    }

    /// Set `content` in store and mirror, creating the file if it is gone.
    /// Caller holds the file lock.
    pub(crate) fn put_locked(&self, directory: &str, name: &str, content: &str) -> Result<FileEntry> {
        if self.store.view().get(directory, name).is_some_and(|e| e.metadata.read_only) {
            return Err(Error::locked(directory, name));
        }
        let entry = self.store.put_entry(directory, name, content, None)?;
        self.mirror_write(directory, name, content)?;
        Ok(entry)
    }

    /// `del_`: by name, or every file in `directory` whose content contains
    /// `key_text` (case-insensitive). When both are given the name wins.
    /// Keyword deletion is all-or-nothing: one locked match aborts it.
    pub fn delete(&self, directory: &str, name: Option<&str>, key_text: Option<&str>) -> Result<Vec<FileMetadata>> {
        let keys: Vec<(String, String)> = match (name, key_text) {
            (Some(n), _) => {
                if !self.store.contains(directory, n) {
                    return Err(Error::not_found(directory, n));
                }
                vec![(directory.to_string(), n.to_string())]
            }
            (None, Some(text)) => {
                let needle = text.to_lowercase();
                if needle.trim().is_empty() {
                    return Err(Error::EmptyQuery);
                }
                self.store
                    .view()
                    .scope(Some(directory))
                    .filter(|e| e.content.to_lowercase().contains(&needle))
                    .map(|e| (e.metadata.directory.clone(), e.metadata.display_name.clone()))
                    .collect()
            }
            (None, None) => return Err(Error::MissingArgument("name or key_text")),
        };
        let file_keys: Vec<FileKey> = keys.iter().map(|(d, n)| key(d, n)).collect();
        let _guard = self.locks.acquire(&file_keys);
        let removed = self.store.remove_many(&keys)?;
        for m in &removed {
            self.mirror_remove(&m.directory, &m.display_name)?;
        }
        Ok(removed)
    }

    pub fn keywords_retrieve(&self, keywords: &[String], directory: Option<&str>, mode: Option<MatchMode>) -> Result<RetrievalResult> {
        let mode = match (keywords.len(), mode) {
            (0, _) => return Err(Error::EmptyQuery),
            (1, m) => m.unwrap_or(MatchMode::Or),
            (_, Some(m)) => m,
            (_, None) => return Err(Error::MissingMode),
        };
        self.store.scan_keywords(directory, keywords, mode)
    }

    pub fn semantic_retrieve(&self, query: &str, directory: Option<&str>, n: Option<usize>) -> Result<RetrievalResult> {
        self.store.topn_semantic(directory, query, n.unwrap_or(DEFAULT_TOP_N))
    }

    /// Bulk import every file directly inside `import_dir` (not recursive),
    /// named after the file on disk. Per-file failures are reported, not fatal.
    pub fn create(&self, directory: &str, import_dir: &Path) -> Result<ImportReport> {
        validate_directory(directory)?;
        let listing = fs::read_dir(import_dir)
            .map_err(|e| Error::PathUnreadable { path: import_dir.to_path_buf(), reason: e.to_string() })?;
        let mut paths: Vec<PathBuf> = listing.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
        paths.sort();
        let mut report = ImportReport::default();
        for path in paths {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let outcome = validate_name(&name).and_then(|_| {
                let content = self.extractors.extract_file(&path)?;
                let _guard = self.locks.acquire(&[key(directory, &name)]);
                let entry = self.store.put_entry_with_source(directory, &name, &content, None, Some(path.clone()))?;
                self.mirror_write(directory, &name, &content)?;
                Ok(entry)
            });
            match outcome {
                Ok(entry) => report.entries.push(entry.metadata),
                Err(e) => report.errors.push(ImportFailure { path, error: e.to_string() }),
            }
        }
        Ok(report)
    }

    pub fn lock_file(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        self.set_read_only(directory, name, true)
    }

    pub fn unlock_file(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        self.set_read_only(directory, name, false)
    }

    fn set_read_only(&self, directory: &str, name: &str, read_only: bool) -> Result<FileMetadata> {
        let _guard = self.locks.acquire(&[key(directory, name)]);
        self.store.update_metadata(directory, name, |m, _| m.read_only = read_only)
    }

    pub fn update_access_time(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        let _guard = self.locks.acquire(&[key(directory, name)]);
        self.store.update_metadata(directory, name, |m, now| m.accessed_at = crate::clock::strictly_after(now, m.accessed_at))
    }

    /// Copy the selected files into a fresh directory. Name clashes get a
    /// ` (k)` suffix with the smallest free `k >= 2`.
    fn group_into(&self, selection: &RetrievalResult, new_directory: &str) -> Result<Vec<FileMetadata>> {
        validate_directory(new_directory)?;
        if self.store.view().has_directory(new_directory) {
            return Err(Error::DirectoryExists(new_directory.to_string()));
        }
        if selection.is_empty() {
            return Err(Error::EmptyResult);
        }
        let mut taken: HashSet<String> = HashSet::new();
        for (dir, name) in selection.directories.iter().zip(&selection.names) {
            let source = self.store.get_entry(dir, name)?;
            let target = free_name(name, &taken);
            taken.insert(target.clone());
            let _guard = self.locks.acquire(&[key(new_directory, &target)]);
            self.store.insert_copy(&source, new_directory, &target)?;
            self.mirror_write(new_directory, &target, &source.content)?;
        }
        Ok(self.store.list_directory(new_directory))
    }

    pub fn group_keywords(
        &self,
        keywords: &[String],
        new_directory: &str,
        source_directory: Option<&str>,
        mode: Option<MatchMode>,
    ) -> Result<Vec<FileMetadata>> {
        validate_directory(new_directory)?;
        if self.store.view().has_directory(new_directory) {
            return Err(Error::DirectoryExists(new_directory.to_string()));
        }
        let hits = self.keywords_retrieve(keywords, source_directory, mode)?;
        self.group_into(&hits, new_directory)
    }

    pub fn group_semantic(
        &self,
        query: &str,
        new_directory: &str,
        source_directory: Option<&str>,
        n: Option<usize>,
    ) -> Result<Vec<FileMetadata>> {
        validate_directory(new_directory)?;
        if self.store.view().has_directory(new_directory) {
            return Err(Error::DirectoryExists(new_directory.to_string()));
        }
        let hits = self.semantic_retrieve(query, source_directory, n)?;
        self.group_into(&hits, new_directory)
    }

    /// Keyword grouping into `new_directory`, then semantic top-n inside it.
    /// No keyword match yields an empty result and no directory.
    #[allow(clippy::too_many_arguments)]
    pub fn integrated_retrieve(
        &self,
        keywords: &[String],
        mode: Option<MatchMode>,
        query: &str,
        new_directory: &str,
        source_directory: Option<&str>,
        n: Option<usize>,
    ) -> Result<RetrievalResult> {
        if query.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        match self.group_keywords(keywords, new_directory, source_directory, mode) {
            Ok(_) => self.semantic_retrieve(query, Some(new_directory), n),
            Err(Error::EmptyResult) => Ok(RetrievalResult { scores: Some(Vec::new()), ..Default::default() }),
            Err(e) => Err(e),
        }
    }

    /// Concatenate two files. With `create_new`, a new file `name1_name2` is
    /// created in `dir1` and both originals stay; otherwise file 2 is appended
    /// to file 1 and then deleted.
    pub fn file_join(&self, dir1: &str, name1: &str, name2: &str, dir2: Option<&str>, create_new: bool) -> Result<FileEntry> {
        let dir2 = dir2.unwrap_or(dir1);
        if dir1 == dir2 && name1 == name2 {
            return Err(Error::SelfJoin);
        }
        let _guard = self.locks.acquire(&[key(dir1, name1), key(dir2, name2)]);
        let first = self.store.get_entry(dir1, name1)?;
        let second = self.store.get_entry(dir2, name2)?;
        let joined = format!("{}{}{}", first.content, JOIN_SEPARATOR, second.content);
        if create_new {
            let view = self.store.view();
            let base = format!("{name1}_{name2}");
            let taken: HashSet<String> = view.list(dir1).into_iter().map(|m| m.display_name).collect();
            let target = free_name(&base, &taken);
            let _target_guard = self.locks.acquire(&[key(dir1, &target)]);
            let entry = self.store.put_entry(dir1, &target, &joined, None)?;
            self.mirror_write(dir1, &target, &joined)?;
            return Ok(entry);
        }
        for (d, n, e) in [(dir1, name1, &first), (dir2, name2, &second)] {
            if e.metadata.read_only {
                return Err(Error::locked(d, n));
            }
        }
        let entry = self.store.put_entry(dir1, name1, &joined, None)?;
        self.mirror_write(dir1, name1, &joined)?;
        self.store.remove_entry(dir2, name2)?;
        self.mirror_remove(dir2, name2)?;
        Ok(entry)
    }

    /// Store-side update from the disk copy (supervisor path): ignores the
    /// read-only flag and never writes back to disk.
    pub(crate) fn sync_from_disk(&self, directory: &str, name: &str, content: &str) -> Result<FileEntry> {
        let source = self.disk_path(directory, name);
        self.store.put_entry_with_source(directory, name, content, None, source)
    }

    pub(crate) fn sync_removed(&self, directory: &str, name: &str) -> Result<FileMetadata> {
        self.store.force_remove(directory, name)
    }
}

fn free_name(base: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..).map(|k| format!("{base} ({k})")).find(|c| !taken.contains(c)).expect("unbounded range")
}
