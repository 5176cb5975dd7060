//! The prompt pipeline: parse, validate, gate, dispatch, render. The CLI and
//! the HTTP service both go through [`Lsfs`], so a prompt produces the same
//! transcript on either surface.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::api::{ChangeSummary, RetrieveArgs, RetrieveSummary, RollbackOutcome, RollbackTarget, SemanticApis};
use crate::clock::Clock;
use crate::config::RuntimeConfig;
use crate::error::{Error, Result};
use crate::gate::{ApprovedCall, Approver, AuditRecord, Gate, PendingAction, Submission, Verdict};
use crate::llm::LlmClient;
use crate::parser::{ApiCall, Parser};
use crate::share::{LinkService, LocalShareStore, ShareLink};
use crate::store::{FileMetadata, IndexStore, RetrievalResult};
use crate::supervisor::{ScanReport, Supervisor};
use crate::syscalls::{CreateOrGet, Import, ImportReport, SyscallContext};
use crate::versions::{FileKey, VersionRecorder};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Summary(RetrieveSummary),
    Change(ChangeSummary),
    Rollback(RollbackOutcome),
    Link(ShareLink),
    File { created: bool, metadata: FileMetadata, content: String },
    Listing { directory: String, files: Vec<FileMetadata> },
    Retrieval(RetrievalResult),
    Removed { files: Vec<FileMetadata> },
    Imported(ImportReport),
    Grouped { directory: String, files: Vec<FileMetadata> },
    Metadata(FileMetadata),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    /// LLM output behind a parse failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        let raw_output = match e {
            Error::Parse(p) if !p.raw().is_empty() => Some(p.raw().to_string()),
            _ => None,
        };
        Self { kind: e.kind().to_string(), message: e.to_string(), raw_output }
    }
}

/// Everything that happened to one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub call: Option<ApiCall>,
    pub preview: Option<String>,
    pub danger: bool,
    pub approval: Option<AuditRecord>,
    pub outcome: Option<Outcome>,
    pub error: Option<ErrorReport>,
}

impl Transcript {
    fn new(prompt: &str) -> Self {
        Self { prompt: prompt.to_string(), call: None, preview: None, danger: false, approval: None, outcome: None, error: None }
    }

    fn fail(mut self, e: &Error) -> Self {
        self.error = Some(ErrorReport::from(e));
        self
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// 0 on success, 2 when the prompt could not be turned into a call, 3
    /// when the gate refused it, 1 for any other failure.
    pub fn exit_code(&self) -> i32 {
        match self.error.as_ref().map(|e| e.kind.as_str()) {
            None => EXIT_OK,
            Some("UnparseableOutput" | "UnknownApi" | "SchemaViolation") => EXIT_PARSE,
            Some("Rejected" | "ApprovalTimeout") => EXIT_REFUSED,
            Some(_) => EXIT_FAILED,
        }
    }

    /// Plain-text rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "prompt: {}", self.prompt);
        if let Some(c) = &self.call {
            let _ = writeln!(out, "call: {c}");
        }
        if let Some(p) = &self.preview {
            let _ = writeln!(out, "plan: {p}{}", if self.danger { " [needs confirmation]" } else { "" });
        }
        if let Some(a) = &self.approval {
            let verdict = match a.verdict {
                Verdict::AutoApproved => "auto-approved".to_string(),
                Verdict::Approved => format!("approved by {}", a.approved_by.as_deref().unwrap_or("?")),
                Verdict::Rejected => match &a.approved_by {
                    Some(by) => format!("rejected by {by}"),
                    None => "refused (no approver)".to_string(),
                },
                Verdict::Expired => "expired".to_string(),
            };
            let _ = writeln!(out, "approval: {verdict} ({})", a.action_id);
        }
        if let Some(o) = &self.outcome {
            out.push_str(&render_outcome(o));
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error [{}]: {}", e.kind, e.message);
            if let Some(raw) = &e.raw_output {
                let _ = writeln!(out, "llm output: {raw}");
            }
        }
        out
    }
}

fn render_files(out: &mut String, files: &[FileMetadata]) {
    for f in files {
        let _ = writeln!(out, "  {}/{} ({} bytes{})", f.directory, f.display_name, f.size_bytes, if f.read_only { ", read-only" } else { "" });
    }
}

fn render_retrieval(out: &mut String, r: &RetrievalResult) {
    for i in 0..r.len() {
        match &r.scores {
            Some(s) => {
                let _ = writeln!(out, "  {}/{} score={:.4}", r.directories[i], r.names[i], s[i]);
            }
            None => {
                let _ = writeln!(out, "  {}/{}", r.directories[i], r.names[i]);
            }
        }
    }
}

fn render_outcome(o: &Outcome) -> String {
    let mut out = String::new();
    match o {
        Outcome::Summary(s) => {
            let _ = writeln!(out, "retrieved {} file(s), kept {}:", s.candidates.len(), s.result.len());
            render_retrieval(&mut out, &s.result);
            for f in &s.summaries {
                let _ = writeln!(out, "summary {}/{}: {}", f.directory, f.name, f.summary.trim());
            }
        }
        Outcome::Change(c) => {
            let _ = writeln!(out, "updated {} (previous content saved as version {})", c.key, c.version_seq_before);
            out.push_str(&c.diff.render());
            let _ = writeln!(out, "summary: {}", c.summary.as_deref().unwrap_or("(unavailable)").trim());
        }
        Outcome::Rollback(r) => {
            let _ = writeln!(out, "restored {} to version {}", r.key, r.restored_seq);
            if let Some(s) = r.recorded_seq {
                let _ = writeln!(out, "replaced content saved as version {s}");
            }
        }
        Outcome::Link(l) => {
            let _ = writeln!(out, "link for {}: {}", l.key, l.url);
            match l.expires_at {
                Some(t) => {
                    let _ = writeln!(out, "expires: {}", t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
                }
                None => out.push_str("expires: never\n"),
            }
            if l.revoked {
                out.push_str("revoked\n");
            }
        }
        Outcome::File { created, metadata, content } => {
            let _ = writeln!(out, "{} {}/{}", if *created { "created" } else { "file" }, metadata.directory, metadata.display_name);
            out.push_str(content);
            if !content.ends_with('\n') && !content.is_empty() {
                out.push('\n');
            }
        }
        Outcome::Listing { directory, files } => {
            let _ = writeln!(out, "{directory}: {} file(s)", files.len());
            render_files(&mut out, files);
        }
        Outcome::Retrieval(r) => {
            let _ = writeln!(out, "{} file(s)", r.len());
            render_retrieval(&mut out, r);
        }
        Outcome::Removed { files } => {
            let _ = writeln!(out, "deleted {} file(s)", files.len());
            render_files(&mut out, files);
        }
        Outcome::Imported(r) => {
            let _ = writeln!(out, "imported {} file(s), {} failure(s)", r.entries.len(), r.errors.len());
            render_files(&mut out, &r.entries);
            for e in &r.errors {
                let _ = writeln!(out, "  failed {}: {}", e.path.display(), e.error);
            }
        }
        Outcome::Grouped { directory, files } => {
            let _ = writeln!(out, "grouped {} file(s) into {directory}", files.len());
            render_files(&mut out, files);
        }
        Outcome::Metadata(m) => {
            let _ = writeln!(
                out,
                "{}/{}: read_only={} accessed_at={}",
                m.directory,
                m.display_name,
                m.read_only,
                m.accessed_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
            );
        }
    }
    out
}

/// Keeps only the candidates named `directory/name` in `keep`; approves
/// nothing on its own.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub keep: Option<Vec<String>>,
}

impl Approver for Selection {
    fn approve(&self, _: &PendingAction) -> Option<bool> {
        None
    }

    fn select(&self, candidates: &RetrievalResult) -> Vec<bool> {
        match &self.keep {
            None => vec![true; candidates.len()],
            Some(keep) => (0..candidates.len())
                .map(|i| {
                    let full = format!("{}/{}", candidates.directories[i], candidates.names[i]);
                    keep.iter().any(|k| *k == full || *k == candidates.names[i])
                })
                .collect(),
        }
    }
}

/// Result of a deferred (HTTP) prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Submitted {
    Done(Transcript),
    Pending { transcript: Transcript, action: PendingAction },
}

pub struct Lsfs {
    apis: SemanticApis,
    parser: Parser,
    gate: Gate,
    supervisor: Option<Arc<Supervisor>>,
}

impl std::fmt::Debug for Lsfs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lsfs").field("apis", &self.apis).field("gate", &self.gate).finish()
    }
}

impl Drop for Lsfs {
    fn drop(&mut self) {
        if let Some(s) = &self.supervisor {
            s.stop();
        }
    }
}

impl Lsfs {
    pub fn new(apis: SemanticApis, gate: Gate) -> Self {
        let parser = Parser::new(apis.ctx().store().clock().clone());
        let supervisor = Supervisor::new(apis.ctx().clone())
            .ok()
            .map(|s| Arc::new(s.with_llm(apis.llm().clone()).with_versions(apis.versions().clone())));
        Self { apis, parser, gate, supervisor }
    }

    /// Everything in memory, no disk mirror, seeded link tokens: tests and
    /// benchmarks.
    pub fn ephemeral(clock: Arc<dyn Clock>, llm: Arc<dyn LlmClient>, embedder: Arc<dyn crate::embedding::Embedder>) -> Self {
        let store = Arc::new(IndexStore::in_memory(embedder, clock.clone()));
        let ctx = Arc::new(SyscallContext::detached(store));
        let versions = Arc::new(VersionRecorder::in_memory(clock.clone()));
        let links = Arc::new(LinkService::new(Arc::new(LocalShareStore::in_memory()), clock.clone()).with_token_seed(0));
        Self::new(SemanticApis::new(ctx, versions, links, llm), Gate::new(clock))
    }

    /// Open (or initialize) the persistent state under `config.root`.
    pub fn open(config: &RuntimeConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        if !config.root.is_dir() {
            return Err(Error::RootMissing(config.root.clone()));
        }
        let data = config.data_dir();
        fs::create_dir_all(&data)?;
        let embedder = config.embedding.build()?;
        let llm: Arc<dyn LlmClient> = Arc::from(config.llm.build()?);
        let store = Arc::new(IndexStore::open(&data, Arc::from(embedder), clock.clone())?);
        let ctx = Arc::new(SyscallContext::mirrored(store, &config.root)?);
        let versions = Arc::new(VersionRecorder::open(&data, clock.clone())?);
        let links = Arc::new(LinkService::open(&data, clock.clone())?.with_base_url(&config.share_base_url()));
        let gate = Gate::new(clock).with_auto_approve_safe(config.auto_approve_safe).with_audit_dir(&data)?;
        Ok(Self::new(SemanticApis::new(ctx, versions, links, llm), gate))
    }

    pub fn apis(&self) -> &SemanticApis {
        &self.apis
    }

    pub fn ctx(&self) -> &Arc<SyscallContext> {
        self.apis.ctx()
    }

    pub fn store(&self) -> &Arc<IndexStore> {
        self.apis.ctx().store()
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn parser(&self) -> &Parser {
        &self.parser
    }

    pub fn supervisor(&self) -> Option<&Arc<Supervisor>> {
        self.supervisor.as_ref()
    }

    /// One supervisor pass when a mirror is configured.
    pub fn sync(&self) -> Result<Option<ScanReport>> {
        self.supervisor.as_ref().map(|s| s.scan_once()).transpose()
    }

    /// Write snapshots of the index and the version history.
    pub fn persist(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        if self.store().data_dir().is_some() {
            out.push(self.store().persist()?);
        }
        match self.apis.versions().persist() {
            Ok(p) => out.push(p),
            Err(Error::Precondition(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(out)
    }

    pub fn parse(&self, prompt: &str) -> Result<ApiCall> {
        self.parser.parse(prompt, self.apis.llm().as_ref())
    }

    fn key(&self, call: &ApiCall) -> Result<FileKey> {
        let name = call.text("name").ok_or(Error::MissingArgument("name"))?;
        self.apis.resolve(name, call.text("directory"))
    }

    /// Run an approved call. Only the gate can produce one.
    pub fn execute(&self, approved: &ApprovedCall, approver: &dyn Approver) -> Result<Outcome> {
        let call = approved.call();
        let ctx = self.ctx();
        let text = |n: &'static str| call.text(n).ok_or(Error::MissingArgument(n));
        let count = |n: &str| call.int(n).map(|v| v.max(0) as usize);
        let mode = || call.text("condition").and_then(|c| c.parse().ok());
        let list = |n: &'static str| call.list(n).ok_or(Error::MissingArgument(n));
        Ok(match call.api.as_str() {
            "retrieve_summary" => {
                let args = RetrieveArgs::from_call(call)?;
                Outcome::Summary(self.apis.retrieve_summary(&args, &|r| approver.select(r))?)
            }
            "change_summary" => Outcome::Change(self.apis.change_summary(&self.key(call)?, &Import::from_arg(text("import_file")?))?),
            "rollback" => {
                let target = match text("by")? {
                    "count" => RollbackTarget::Count { k: count("k").ok_or(Error::MissingArgument("k"))? },
                    _ => RollbackTarget::Date { date: call.timestamp("date").ok_or(Error::MissingArgument("date"))? },
                };
                Outcome::Rollback(self.apis.rollback(&self.key(call)?, target)?)
            }
            "create_link" => Outcome::Link(self.apis.create_link(&self.key(call)?, call.int("validity"))?),
            "revoke_link" => Outcome::Link(self.apis.revoke_link(text("token")?)?),
            "create_or_get_file" => {
                let dir = text("directory")?;
                let import = call.text("import_file").map(Import::from_arg);
                match ctx.create_or_get_file(dir, call.text("name"), import.as_ref())? {
                    CreateOrGet::Created(e) => Outcome::File { created: true, metadata: e.metadata, content: e.content },
                    CreateOrGet::Existing(e) => Outcome::File { created: false, metadata: e.metadata, content: e.content },
                    CreateOrGet::Listing(files) => Outcome::Listing { directory: dir.to_string(), files },
                }
            }
            "add_" => {
                let e = ctx.append(text("directory")?, text("name")?, text("new_content")?)?;
                Outcome::File { created: false, metadata: e.metadata, content: e.content }
            }
            "overwrite" => {
                let e = ctx.overwrite(text("directory")?, text("name")?, &Import::from_arg(text("import_file")?))?;
                Outcome::File { created: false, metadata: e.metadata, content: e.content }
            }
            "del_" => Outcome::Removed { files: ctx.delete(text("directory")?, call.text("name"), call.text("key_text"))? },
            "keywords_retrieve" => Outcome::Retrieval(ctx.keywords_retrieve(list("keywords")?, call.text("directory"), mode())?),
            "semantic_retrieve" => Outcome::Retrieval(ctx.semantic_retrieve(text("query")?, call.text("directory"), count("n"))?),
            "create" => Outcome::Imported(ctx.create(text("directory")?, &PathBuf::from(text("import_dir")?))?),
            "lock_file" => Outcome::Metadata(ctx.lock_file(text("directory")?, text("name")?)?),
            "unlock_file" => Outcome::Metadata(ctx.unlock_file(text("directory")?, text("name")?)?),
            "update_access_time" => Outcome::Metadata(ctx.update_access_time(text("directory")?, text("name")?)?),
            "group_keywords" => {
                let dir = text("new_directory")?;
                let files = ctx.group_keywords(list("keywords")?, dir, call.text("source_directory"), mode())?;
                Outcome::Grouped { directory: dir.to_string(), files }
            }
            "group_semantic" => {
                let dir = text("new_directory")?;
                let files = ctx.group_semantic(text("query")?, dir, call.text("source_directory"), count("n"))?;
                Outcome::Grouped { directory: dir.to_string(), files }
            }
            "integrated_retrieve" => Outcome::Retrieval(ctx.integrated_retrieve(
                list("keywords")?,
                mode(),
                text("query")?,
                text("new_directory")?,
                call.text("source_directory"),
                count("n"),
            )?),
            "file_join" => {
                let create_new = call.text("condition") == Some("new");
                let e = ctx.file_join(text("dir1")?, text("name1")?, text("name2")?, call.text("dir2"), create_new)?;
                Outcome::File { created: create_new, metadata: e.metadata, content: e.content }
            }
            other => return Err(Error::Precondition(format!("no executor for {other}"))),
        })
    }

    fn run_approved(&self, mut t: Transcript, result: Result<ApprovedCall>, record: Option<AuditRecord>, approver: &dyn Approver) -> Transcript {
        t.approval = record;
        match result {
            Err(e) => t.fail(&e),
            Ok(approved) => match self.execute(&approved, approver) {
                Ok(o) => {
                    t.outcome = Some(o);
                    t
                }
                Err(e) => t.fail(&e),
            },
        }
    }

    fn planned(&self, prompt: &str, call: &ApiCall) -> Transcript {
        let mut t = Transcript::new(prompt);
        t.preview = Some(crate::gate::preview(call));
        t.danger = call.is_danger();
        t.call = Some(call.clone());
        t
    }

    /// Parse, gate and run a natural-language prompt.
    pub fn run_prompt(&self, prompt: &str, approver: &dyn Approver) -> Transcript {
        match self.parse(prompt) {
            Err(e) => Transcript::new(prompt).fail(&e),
            Ok(call) => self.run_call_as(prompt, call, approver),
        }
    }

    /// Gate and run an already-built call (the `exec` path).
    pub fn run_call(&self, call: ApiCall, approver: &dyn Approver) -> Transcript {
        let label = call.to_wire();
        self.run_call_as(&label, call, approver)
    }

    fn run_call_as(&self, prompt: &str, call: ApiCall, approver: &dyn Approver) -> Transcript {
        let t = self.planned(prompt, &call);
        let (result, record) = self.gate.review_audited(call, approver);
        self.run_approved(t, result, record, approver)
    }

    /// Deferred variant for the HTTP service: calls that need confirmation
    /// are parked until [`confirm`](Self::confirm).
    pub fn submit_prompt(&self, prompt: &str, selection: &Selection) -> Submitted {
        let call = match self.parse(prompt) {
            Err(e) => return Submitted::Done(Transcript::new(prompt).fail(&e)),
            Ok(c) => c,
        };
        self.submit_call_as(prompt, call, selection)
    }

    pub fn submit_call(&self, call: ApiCall, selection: &Selection) -> Submitted {
        let label = call.to_wire();
        self.submit_call_as(&label, call, selection)
    }

    fn submit_call_as(&self, prompt: &str, call: ApiCall, selection: &Selection) -> Submitted {
        let t = self.planned(prompt, &call);
        match self.gate.submit(call) {
            Err(e) => Submitted::Done(t.fail(&e)),
            Ok(Submission::Ready(approved)) => {
                let record = approved.record().clone();
                Submitted::Done(self.run_approved(t, Ok(approved), Some(record), selection))
            }
            Ok(Submission::Pending(action)) => Submitted::Pending { transcript: t, action },
        }
    }

    /// Decide a parked action and, when approved, run it.
    pub fn confirm(&self, id: &str, approve: bool, by: &str, selection: &Selection) -> Transcript {
        let (result, record) = self.gate.confirm_audited(id, approve, by);
        let mut t = match &record {
            Some(r) => self.planned(&r.call.raw_prompt, &r.call),
            None => Transcript::new(""),
        };
        if t.prompt.is_empty() {
            t.prompt = record.as_ref().map(|r| r.call.to_wire()).unwrap_or_default();
        }
        self.run_approved(t, result, record, selection)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::embedding::HashingEmbedder;
    use crate::gate::{AlwaysApprove, AlwaysReject, NoApprover};
    use crate::llm::{MockLlm, BUILTIN_MOCK_RULES};
    use chrono::{TimeZone, Utc};

    fn engine() -> Lsfs {
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()));
        let store = Arc::new(IndexStore::in_memory(Arc::new(HashingEmbedder::new(64)), clock.clone()));
        let ctx = Arc::new(SyscallContext::detached(store));
        let versions = Arc::new(VersionRecorder::in_memory(clock.clone()));
        let links = Arc::new(LinkService::new(Arc::new(LocalShareStore::in_memory()), clock.clone()).with_token_seed(1));
        let llm = Arc::new(MockLlm::from_jsonl(BUILTIN_MOCK_RULES).unwrap());
        Lsfs::new(SemanticApis::new(ctx, versions, links, llm), Gate::new(clock))
    }

    fn seed(l: &Lsfs) {
        let s = l.store();
        s.put_entry("computer-vision", "seg", "Segmentation\nAuthors: Emily Zhang", None).unwrap();
        s.put_entry("computer-vision", "det", "Detection\nAuthors: Wei Chen", None).unwrap();
        s.put_entry("nlp", "mt", "Translation\nAuthors: Emily Zhang", None).unwrap();
    }

    #[test]
    fn keyword_prompt_end_to_end() {
        let l = engine();
        seed(&l);
        let t = l.run_prompt("Find papers in the computer-vision category authored by Emily Zhang.", &NoApprover);
        assert!(t.is_ok(), "{}", t.render());
        let Some(Outcome::Summary(s)) = &t.outcome else { panic!("{}", t.render()) };
        assert_eq!(s.result.names, ["seg"]);
        assert_eq!(t.approval.as_ref().unwrap().verdict, Verdict::AutoApproved);
        assert_eq!(t.exit_code(), EXIT_OK);
    }

    #[test]
    fn gibberish_exits_two() {
        let l = engine();
        let t = l.run_prompt("flurb the wozzle quickly", &AlwaysApprove);
        assert_eq!(t.error.as_ref().unwrap().kind, "UnknownApi");
        assert_eq!(t.exit_code(), EXIT_PARSE);
        assert!(t.error.unwrap().raw_output.is_some());
    }

    #[test]
    fn destructive_without_approver_is_refused() {
        let l = engine();
        seed(&l);
        let before = l.store().state_hash();
        let call = l.parser().from_pairs("del_", &[("directory".into(), "nlp".into()), ("name".into(), "mt".into())]).unwrap();
        let t = l.run_call(call.clone(), &NoApprover);
        assert_eq!(t.exit_code(), EXIT_REFUSED);
        assert!(t.render().contains("no approver"));
        assert_eq!(l.store().state_hash(), before);
        let t = l.run_call(call.clone(), &AlwaysReject);
        assert_eq!(t.exit_code(), EXIT_REFUSED);
        assert_eq!(l.store().state_hash(), before);
        let t = l.run_call(call, &AlwaysApprove);
        assert!(t.is_ok());
        assert!(!l.store().contains("nlp", "mt"));
    }

    #[test]
    fn deferred_confirm_runs_the_call() {
        let l = engine();
        seed(&l);
        let call = l.parser().from_pairs("del_", &[("directory".into(), "nlp".into()), ("name".into(), "mt".into())]).unwrap();
        let Submitted::Pending { action, transcript } = l.submit_call(call, &Selection::default()) else { panic!() };
        assert!(transcript.danger && transcript.outcome.is_none());
        assert!(l.store().contains("nlp", "mt"));
        let t = l.confirm(&action.id, true, "console", &Selection::default());
        assert!(t.is_ok(), "{}", t.render());
        assert!(!l.store().contains("nlp", "mt"));
        let again = l.confirm(&action.id, true, "console", &Selection::default());
        assert_eq!(again.error.unwrap().kind, "PendingNotFound");
    }

    #[test]
    fn transcripts_are_deterministic_and_surface_independent() {
        let run = |deferred: bool| {
            let l = engine();
            seed(&l);
            let prompts = [
                "Find papers in the computer-vision category authored by Emily Zhang.",
                "Provide a link for seg that will be active for 3 months.",
                "Locate the 2 papers showing the highest correlation with translation.",
            ];
            prompts
                .iter()
                .map(|p| {
                    let t = if deferred {
                        match l.submit_prompt(p, &Selection::default()) {
                            Submitted::Done(t) => t,
                            Submitted::Pending { .. } => panic!("safe prompt parked"),
                        }
                    } else {
                        l.run_prompt(p, &NoApprover)
                    };
                    serde_json::to_string(&t).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(false), run(false));
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn selection_prunes_before_summary() {
        let l = engine();
        seed(&l);
        let sel = Selection { keep: Some(vec!["nlp/mt".into()]) };
        let call = l
            .parser()
            .from_pairs("retrieve_summary", &[("mode".into(), "keyword".into()), ("keywords".into(), "Emily Zhang".into())])
            .unwrap();
        let Submitted::Done(t) = l.submit_call(call, &sel) else { panic!() };
        let Some(Outcome::Summary(s)) = t.outcome else { panic!() };
        assert_eq!(s.candidates.len(), 2);
        assert_eq!(s.result.names, ["mt"]);
    }

    #[test]
    fn from_pairs_validates() {
        let l = engine();
        let bad = l.parser().from_pairs("rollback", &[("name".into(), "x".into()), ("by".into(), "count".into()), ("k".into(), "0".into())]);
        assert!(bad.is_err());
        let ok = l
            .parser()
            .from_pairs("keywords_retrieve", &[("keywords".into(), "a|b".into()), ("condition".into(), "and".into())])
            .unwrap();
        assert_eq!(ok.list("keywords").unwrap(), ["a", "b"]);
    }

    #[test]
    fn open_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()));
        let cfg = RuntimeConfig::new(dir.path());
        {
            let l = Lsfs::open(&cfg, clock.clone()).unwrap();
            let call = l
                .parser()
                .from_pairs("create_or_get_file", &[("directory".into(), "d".into()), ("name".into(), "a".into()), ("import_file".into(), "hello".into())])
                .unwrap();
            assert!(l.run_call(call, &NoApprover).is_ok());
            let call = l.parser().from_pairs("change_summary", &[("name".into(), "a".into()), ("import_file".into(), "bye".into())]).unwrap();
            assert!(l.run_call(call, &AlwaysApprove).is_ok());
            l.persist().unwrap();
        }
        let l = Lsfs::open(&cfg, clock).unwrap();
        assert_eq!(l.store().get_entry("d", "a").unwrap().content, "bye");
        assert_eq!(l.apis().versions().len(&FileKey::new("d", "a")), 1);
        assert!(dir.path().join(".lsfs/audit.log").exists());
        assert!(l.sync().unwrap().unwrap().is_quiet());
    }
}
