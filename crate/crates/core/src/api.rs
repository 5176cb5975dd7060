//! The four user-facing APIs built from syscalls, the version recorder, the
//! link service and the LLM: retrieve-summary, change-summary, rollback and
//! links.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::diff::{compare_change, Diff};
use crate::error::{Error, Result};
use crate::llm::{summarize, LlmClient, SummaryInput};
use crate::parser::ApiCall;
use crate::share::{LinkService, ShareLink};
use crate::store::{FileEntry, MatchMode, RetrievalResult};
use crate::syscalls::{Import, SyscallContext};
use crate::versions::{FileKey, VersionRecorder};

pub const NO_CHANGES: &str = "no changes";
const INTEGRATED_DIR_PREFIX: &str = "retrieved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RetrieveArgs {
    Keyword {
        keywords: Vec<String>,
        condition: Option<MatchMode>,
        directory: Option<String>,
    },
    Semantic {
        query: String,
        n: Option<usize>,
        directory: Option<String>,
    },
    Integrated {
        keywords: Vec<String>,
        condition: Option<MatchMode>,
        query: String,
        n: Option<usize>,
        directory: Option<String>,
        new_directory: Option<String>,
    },
}

fn condition(call: &ApiCall) -> Option<MatchMode> {
    call.text("condition").and_then(|c| c.parse().ok())
}

fn count(call: &ApiCall, name: &str) -> Option<usize> {
    call.int(name).map(|v| v.max(0) as usize)
}

impl RetrieveArgs {
    /// From a validated `retrieve_summary` call.
    pub fn from_call(call: &ApiCall) -> Result<Self> {
        let keywords = || call.list("keywords").map(<[String]>::to_vec).ok_or(Error::MissingArgument("keywords"));
        let query = || call.text("query").map(str::to_string).ok_or(Error::MissingArgument("query"));
        let directory = call.text("directory").map(str::to_string);
        Ok(match call.text("mode") {
            Some("keyword") => RetrieveArgs::Keyword { keywords: keywords()?, condition: condition(call), directory },
            Some("semantic") => RetrieveArgs::Semantic { query: query()?, n: count(call, "n"), directory },
            Some("integrated") => RetrieveArgs::Integrated {
                keywords: keywords()?,
                condition: condition(call),
                query: query()?,
                n: count(call, "n"),
                directory,
                new_directory: call.text("new_directory").map(str::to_string),
            },
            _ => return Err(Error::MissingArgument("mode")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub directory: String,
    pub name: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveSummary {
    /// What the syscall returned, before the user's selection.
    pub candidates: RetrievalResult,
    /// The files the user kept, in candidate order.
    pub result: RetrievalResult,
    pub summaries: Vec<FileSummary>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub key: FileKey,
    pub diff: Diff,
    /// Absent when the LLM failed; the change is committed regardless.
    pub summary: Option<String>,
    pub version_seq_before: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "lowercase")]
pub enum RollbackTarget {
    Count { k: usize },
    Date { date: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackOutcome {
    pub key: FileKey,
    pub restored_seq: u64,
    /// Seq of the snapshot taken of the content being replaced.
    pub recorded_seq: Option<u64>,
    pub content: String,
}

pub struct SemanticApis {
    ctx: Arc<SyscallContext>,
    versions: Arc<VersionRecorder>,
    links: Arc<LinkService>,
    llm: Arc<dyn LlmClient>,
}

impl std::fmt::Debug for SemanticApis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemanticApis").field("ctx", &self.ctx).field("links", &self.links).finish()
    }
}

impl SemanticApis {
    pub fn new(ctx: Arc<SyscallContext>, versions: Arc<VersionRecorder>, links: Arc<LinkService>, llm: Arc<dyn LlmClient>) -> Self {
        Self { ctx, versions, links, llm }
    }

    pub fn ctx(&self) -> &Arc<SyscallContext> {
        &self.ctx
    }

    pub fn versions(&self) -> &Arc<VersionRecorder> {
        &self.versions
    }

    pub fn links(&self) -> &Arc<LinkService> {
        &self.links
    }

    pub fn llm(&self) -> &Arc<dyn LlmClient> {
        &self.llm
    }

    /// Find the file a bare name refers to. A directory pins it; otherwise
    /// the name must be unique in the store, or failing that, in the version
    /// history (so deleted files can still be rolled back).
    pub fn resolve(&self, name: &str, directory: Option<&str>) -> Result<FileKey> {
        if let Some(d) = directory {
            return Ok(FileKey::new(d, name));
        }
        let mut dirs = self.ctx.store().view().find_name(name);
        if dirs.is_empty() {
            dirs = self.versions.keys().into_iter().filter(|k| k.name == name).map(|k| k.directory).collect();
        }
        match dirs.len() {
            0 => Err(Error::NameNotFound(name.to_string())),
            1 => Ok(FileKey::new(dirs.remove(0), name)),
            _ => Err(Error::AmbiguousTarget { name: name.to_string(), directories: dirs }),
        }
    }

    fn fresh_directory(&self) -> String {
        let view = self.ctx.store().view();
        (1..)
            .map(|i| if i == 1 { INTEGRATED_DIR_PREFIX.to_string() } else { format!("{INTEGRATED_DIR_PREFIX}-{i}") })
            .find(|d| !view.has_directory(d))
            .expect("unbounded")
    }

    /// Run the mode's retrieval, let `select` drop candidates, then summarize
    /// what is left. An empty selection skips the LLM.
    pub fn retrieve_summary(&self, args: &RetrieveArgs, select: &dyn Fn(&RetrievalResult) -> Vec<bool>) -> Result<RetrieveSummary> {
        let candidates = match args {
            RetrieveArgs::Keyword { keywords, condition, directory } => {
                self.ctx.keywords_retrieve(keywords, directory.as_deref(), *condition)?
            }
            RetrieveArgs::Semantic { query, n, directory } => self.ctx.semantic_retrieve(query, directory.as_deref(), *n)?,
            RetrieveArgs::Integrated { keywords, condition, query, n, directory, new_directory } => {
                let target = new_directory.clone().unwrap_or_else(|| self.fresh_directory());
                self.ctx.integrated_retrieve(keywords, *condition, query, &target, directory.as_deref(), *n)?
            }
        };
        let result = candidates.retain_mask(&select(&candidates));
        let mut summaries = Vec::with_capacity(result.len());
        for i in 0..result.len() {
            let text = &result.contents[i];
            let summary = if text.trim().is_empty() {
                "(empty file)".to_string()
            } else {
                summarize(self.llm.as_ref(), SummaryInput::Document(text))?
            };
            summaries.push(FileSummary { directory: result.directories[i].clone(), name: result.names[i].clone(), summary });
        }
        let summary = summaries.iter().map(|s| format!("{}/{}: {}", s.directory, s.name, s.summary.trim())).collect::<Vec<_>>().join("\n");
        Ok(RetrieveSummary { candidates, result, summaries, summary })
    }

    /// Replace a file's content, keeping the old content as a version, and
    /// describe the change.
    pub fn change_summary(&self, key: &FileKey, import: &Import) -> Result<ChangeSummary> {
        let _guard = self.ctx.locks().acquire(std::slice::from_ref(key));
        let before = self.ctx.store().get_entry(&key.directory, &key.name)?;
        if before.metadata.read_only {
            return Err(Error::FileLocked { directory: key.directory.clone(), name: key.name.clone() });
        }
        // resolve the import first so a bad path leaves no version behind
        let new = self.ctx.read_import(import)?;
        let seq = self.versions.record(key, &before.metadata, &before.content)?;
        self.ctx.put_locked(&key.directory, &key.name, &new)?;
        let diff = compare_change(&before.content, &new);
        let summary = if diff.is_empty() {
            Some(NO_CHANGES.to_string())
        } else {
            match summarize(self.llm.as_ref(), SummaryInput::Change { old: &before.content, new: &new }) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("change summary for {key} unavailable: {e}");
                    None
                }
            }
        };
        Ok(ChangeSummary { key: key.clone(), diff, summary, version_seq_before: seq })
    }

    /// Restore an earlier version in store and mirror. The content being
    /// replaced is recorded first, so a rollback can itself be undone.
    pub fn rollback(&self, key: &FileKey, target: RollbackTarget) -> Result<RollbackOutcome> {
        let _guard = self.ctx.locks().acquire(std::slice::from_ref(key));
        let version = match target {
            RollbackTarget::Count { k } => self.versions.resolve_by_count(key, k)?,
            RollbackTarget::Date { date } => self.versions.resolve_by_date(key, date)?,
        };
        let current: Option<FileEntry> = self.ctx.store().view().get(&key.directory, &key.name).map(|e| (**e).clone());
        if let Some(cur) = &current {
            if cur.metadata.read_only {
                return Err(Error::FileLocked { directory: key.directory.clone(), name: key.name.clone() });
            }
        }
        let recorded_seq = match &current {
            Some(cur) => Some(self.versions.record(key, &cur.metadata, &cur.content)?),
            None => None,
        };
        self.ctx.put_locked(&key.directory, &key.name, &version.content)?;
        Ok(RollbackOutcome { key: key.clone(), restored_seq: version.seq, recorded_seq, content: version.content.clone() })
    }

    /// Publish the file's current content.
    pub fn create_link(&self, key: &FileKey, validity_secs: Option<i64>) -> Result<ShareLink> {
        let entry = self.ctx.store().get_entry(&key.directory, &key.name)?;
        self.links.create_link(key, &entry.content, validity_secs)
    }

    pub fn revoke_link(&self, token: &str) -> Result<ShareLink> {
        self.links.revoke_link(token)
    }

    pub fn fetch_shared(&self, token: &str) -> Result<String> {
        self.links.fetch_shared(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::embedding::HashingEmbedder;
    use crate::llm::{LlmError, LlmRequest, MockLlm};
    use crate::share::LocalShareStore;
    use crate::store::IndexStore;
    use chrono::{Duration, TimeZone};

    struct Down;

    impl LlmClient for Down {
        fn complete(&self, _: &LlmRequest) -> std::result::Result<String, LlmError> {
            Err(LlmError::ProviderUnavailable("down".into()))
        }
    }

    fn apis_with(llm: Arc<dyn LlmClient>, root: Option<&std::path::Path>) -> (SemanticApis, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2023, 6, 1, 12, 0, 0).unwrap()));
        let store = Arc::new(IndexStore::in_memory(Arc::new(HashingEmbedder::new(64)), clock.clone()));
        let ctx = match root {
            Some(r) => SyscallContext::mirrored(store, r).unwrap(),
            None => SyscallContext::detached(store),
        };
        let links = Arc::new(LinkService::new(Arc::new(LocalShareStore::in_memory()), clock.clone()));
        let versions = Arc::new(VersionRecorder::in_memory(clock.clone()));
        (SemanticApis::new(Arc::new(ctx), versions, links, llm), clock)
    }

    fn apis() -> (SemanticApis, Arc<ManualClock>) {
        apis_with(Arc::new(MockLlm::new()), None)
    }

    fn put(a: &SemanticApis, d: &str, n: &str, c: &str) {
        a.ctx().store().put_entry(d, n, c, None).unwrap();
    }

    fn keep_all(r: &RetrievalResult) -> Vec<bool> {
        vec![true; r.len()]
    }

    #[test]
    fn semantic_mode_summarizes_in_score_order() {
        let (a, _) = apis();
        put(&a, "p", "rl", "reinforcement learning for llm training reward");
        put(&a, "p", "rlhf", "reinforcement learning from human feedback llm");
        put(&a, "p", "cv", "convolution image segmentation");
        put(&a, "p", "ppo", "policy optimization reinforcement learning");
        let args = RetrieveArgs::Semantic { query: "reinforcement learning in llm training".into(), n: Some(3), directory: None };
        let out = a.retrieve_summary(&args, &keep_all).unwrap();
        assert_eq!(out.summaries.len(), 3);
        let names: Vec<&str> = out.summaries.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, out.result.names.iter().map(String::as_str).collect::<Vec<_>>());
        let scores = out.result.scores.unwrap();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn keyword_mode_and_empty_selection() {
        let (a, _) = apis();
        put(&a, "cv", "a", "Authors: Emily Zhang");
        put(&a, "cv", "b", "Authors: Wei Chen");
        put(&a, "nlp", "c", "Authors: Emily Zhang");
        let args = RetrieveArgs::Keyword { keywords: vec!["Emily Zhang".into()], condition: None, directory: Some("cv".into()) };
        let out = a.retrieve_summary(&args, &keep_all).unwrap();
        assert_eq!(out.result.names, ["a"]);

        // an LLM that always fails proves the empty selection never calls it
        let (a, _) = apis_with(Arc::new(Down), None);
        put(&a, "cv", "a", "Authors: Emily Zhang");
        let out = a.retrieve_summary(&args, &|r| vec![false; r.len()]).unwrap();
        assert!(out.result.is_empty());
        assert_eq!(out.summary, "");
        assert_eq!(out.candidates.len(), 1);
    }

    #[test]
    fn integrated_mode_picks_a_fresh_directory() {
        let (a, _) = apis();
        put(&a, "p", "x", "transformer attention");
        put(&a, "retrieved", "y", "occupied");
        let args = RetrieveArgs::Integrated {
            keywords: vec!["attention".into()],
            condition: None,
            query: "attention".into(),
            n: None,
            directory: None,
            new_directory: None,
        };
        let out = a.retrieve_summary(&args, &keep_all).unwrap();
        assert_eq!(out.result.directories, ["retrieved-2"]);
    }

    #[test]
    fn change_summary_records_one_version() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = apis_with(Arc::new(MockLlm::new()), Some(dir.path()));
        a.ctx().create_or_get_file("d", Some("f"), Some(&Import::Text("old".into()))).unwrap();
        let key = FileKey::new("d", "f");
        let cs = a.change_summary(&key, &Import::Text("new".into())).unwrap();
        assert_eq!(a.versions().len(&key), 1);
        assert!(a.versions().contains(&key, cs.version_seq_before));
        assert!(!cs.diff.is_empty());
        assert_eq!(a.ctx().store().get_entry("d", "f").unwrap().content, "new");
        assert_eq!(std::fs::read_to_string(dir.path().join("d/f")).unwrap(), "new");

        let same = a.change_summary(&key, &Import::Text("new".into())).unwrap();
        assert!(same.diff.is_empty());
        assert_eq!(same.summary.as_deref(), Some(NO_CHANGES));
        assert_eq!(a.versions().len(&key), 2);
    }

    #[test]
    fn change_summary_commits_when_llm_is_down() {
        let (a, _) = apis_with(Arc::new(Down), None);
        put(&a, "d", "f", "old");
        let key = FileKey::new("d", "f");
        let cs = a.change_summary(&key, &Import::Text("new".into())).unwrap();
        assert!(cs.summary.is_none());
        assert_eq!(a.ctx().store().get_entry("d", "f").unwrap().content, "new");
    }

    #[test]
    fn change_summary_preconditions() {
        let (a, _) = apis();
        let key = FileKey::new("d", "f");
        assert!(matches!(a.change_summary(&key, &Import::Text("x".into())), Err(Error::NotFound { .. })));
        put(&a, "d", "f", "old");
        a.ctx().lock_file("d", "f").unwrap();
        assert!(matches!(a.change_summary(&key, &Import::Text("x".into())), Err(Error::FileLocked { .. })));
        a.ctx().unlock_file("d", "f").unwrap();
        let missing = Import::Path("/definitely/not/here.txt".into());
        assert!(a.change_summary(&key, &missing).is_err());
        assert_eq!(a.versions().len(&key), 0);
    }

    #[test]
    fn rollback_by_count_and_undo() {
        let dir = tempfile::tempdir().unwrap();
        let (a, clock) = apis_with(Arc::new(MockLlm::new()), Some(dir.path()));
        a.ctx().create_or_get_file("d", Some("cnn"), Some(&Import::Text("v0".into()))).unwrap();
        let key = FileKey::new("d", "cnn");
        for i in 1..=5 {
            clock.advance(Duration::hours(1));
            a.change_summary(&key, &Import::Text(format!("v{i}"))).unwrap();
        }
        // snapshots are v0..v4; 3 back from the current v5 is v2
        let out = a.rollback(&key, RollbackTarget::Count { k: 3 }).unwrap();
        assert_eq!(out.content, "v2");
        assert_eq!(std::fs::read_to_string(dir.path().join("d/cnn")).unwrap(), "v2");
        assert_eq!(a.versions().len(&key), 6);
        let undo = a.rollback(&key, RollbackTarget::Count { k: 1 }).unwrap();
        assert_eq!(undo.content, "v5");
        assert!(matches!(a.rollback(&key, RollbackTarget::Count { k: 99 }), Err(Error::TooFewVersions { .. })));
    }

    #[test]
    fn rollback_by_date() {
        let (a, clock) = apis();
        put(&a, "d", "syntax", "june-1");
        let key = FileKey::new("d", "syntax");
        a.change_summary(&key, &Import::Text("june-1-later".into())).unwrap();
        clock.set(Utc.with_ymd_and_hms(2023, 6, 20, 0, 0, 0).unwrap());
        a.change_summary(&key, &Import::Text("june-20".into())).unwrap();
        let target = Utc.with_ymd_and_hms(2023, 6, 15, 23, 59, 59).unwrap();
        let out = a.rollback(&key, RollbackTarget::Date { date: target }).unwrap();
        assert_eq!(out.content, "june-1");
        let early = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        assert!(matches!(a.rollback(&key, RollbackTarget::Date { date: early }), Err(Error::NoVersionBefore(_))));
        assert!(matches!(a.rollback(&FileKey::new("d", "none"), RollbackTarget::Count { k: 1 }), Err(Error::UnknownKey(_))));
    }

    #[test]
    fn resolve_names() {
        let (a, _) = apis();
        put(&a, "x", "cnn", "1");
        put(&a, "x", "rnn", "1");
        put(&a, "y", "rnn", "2");
        assert_eq!(a.resolve("cnn", None).unwrap(), FileKey::new("x", "cnn"));
        assert!(matches!(a.resolve("rnn", None), Err(Error::AmbiguousTarget { .. })));
        assert_eq!(a.resolve("rnn", Some("y")).unwrap(), FileKey::new("y", "rnn"));
        assert!(matches!(a.resolve("gru", None), Err(Error::NameNotFound(_))));
    }

    #[test]
    fn link_serves_published_content() {
        let (a, clock) = apis();
        put(&a, "d", "llm-base", "base");
        let link = a.create_link(&FileKey::new("d", "llm-base"), Some(90 * 86_400)).unwrap();
        assert_eq!(a.fetch_shared(&link.token).unwrap(), "base");
        clock.advance(Duration::days(91));
        assert!(matches!(a.fetch_shared(&link.token), Err(Error::Gone)));
        assert!(matches!(a.create_link(&FileKey::new("d", "nope"), None), Err(Error::NotFound { .. })));
    }

    #[test]
    fn from_call_modes() {
        let c = ApiCall::new("retrieve_summary").with("mode", "keyword").with_list("keywords", &["a", "b"]).with("condition", "or");
        assert_eq!(
            RetrieveArgs::from_call(&c).unwrap(),
            RetrieveArgs::Keyword { keywords: vec!["a".into(), "b".into()], condition: Some(MatchMode::Or), directory: None }
        );
        let c = ApiCall::new("retrieve_summary").with("mode", "semantic").with("query", "q").with("n", 3);
        assert!(matches!(RetrieveArgs::from_call(&c).unwrap(), RetrieveArgs::Semantic { n: Some(3), .. }));
    }
}
