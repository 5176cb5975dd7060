//! Confirmation gate for parsed calls.
//!
//! Every call passes through here before execution and leaves an audit
//! record. Dangerous calls (deletes, overwrites, rollbacks, destructive joins)
//! always need an explicit approval; safe calls are auto-approved unless the
//! gate is configured otherwise. [`ApprovedCall`] can only be built by the
//! gate, so the executor cannot be handed an unreviewed call.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::parser::{validate, ApiCall};
use crate::store::RetrievalResult;

pub const DEFAULT_TTL_SECS: i64 = 600;
pub const AUDIT_LOG: &str = "audit.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAction {
    pub id: String,
    pub call: ApiCall,
    pub danger: bool,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub preview: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AutoApproved,
    Approved,
    Rejected,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub action_id: String,
    pub call: ApiCall,
    pub danger: bool,
    pub verdict: Verdict,
    pub approved_by: Option<String>,
    pub created_at: DateTime<Utc>,
    pub decided_at: DateTime<Utc>,
}

/// A call that went through the gate and was approved.
#[derive(Debug, Clone, PartialEq)]
pub struct ApprovedCall {
    call: ApiCall,
    action_id: String,
    record: AuditRecord,
}

impl ApprovedCall {
    pub fn call(&self) -> &ApiCall {
        &self.call
    }

    pub fn action_id(&self) -> &str {
        &self.action_id
    }

    /// The approval event this call carries.
    pub fn record(&self) -> &AuditRecord {
        &self.record
    }
}

/// The human side of the loop: approves plans and prunes retrieval
/// candidates.
pub trait Approver: Send + Sync {
    /// `None` means nobody answered.
    fn approve(&self, action: &PendingAction) -> Option<bool>;

    /// Which candidates to keep before summarizing; keeps all by default.
    fn select(&self, candidates: &RetrievalResult) -> Vec<bool> {
        vec![true; candidates.len()]
    }

    fn name(&self) -> &str {
        "user"
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysApprove;

impl Approver for AlwaysApprove {
    fn approve(&self, _: &PendingAction) -> Option<bool> {
        Some(true)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysReject;

impl Approver for AlwaysReject {
    fn approve(&self, _: &PendingAction) -> Option<bool> {
        Some(false)
    }
}

/// Non-interactive sessions: nobody can approve anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoApprover;

impl Approver for NoApprover {
    fn approve(&self, _: &PendingAction) -> Option<bool> {
        None
    }

    fn name(&self) -> &str {
        "none"
    }
}

pub enum Submission {
    Ready(ApprovedCall),
    Pending(PendingAction),
}

pub fn preview(call: &ApiCall) -> String {
    let effect = match call.api.as_str() {
        "del_" => "deletes files",
        "overwrite" | "change_summary" => "replaces the file content (the old content is kept as a version)",
        "rollback" => "replaces the file content with an earlier version",
        "file_join" if call.is_danger() => "appends the second file to the first and deletes the second",
        _ => "does not destroy data",
    };
    format!("{call}: {effect}")
}

pub struct Gate {
    clock: Arc<dyn Clock>,
    auto_approve_safe: bool,
    ttl: Duration,
    next_id: Mutex<u64>,
    pending: Mutex<BTreeMap<String, PendingAction>>,
    audit: Mutex<Vec<AuditRecord>>,
    audit_file: Option<PathBuf>,
}

impl std::fmt::Debug for Gate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gate").field("auto_approve_safe", &self.auto_approve_safe).field("ttl", &self.ttl).finish()
    }
}

impl Gate {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            auto_approve_safe: true,
            ttl: Duration::seconds(DEFAULT_TTL_SECS),
            next_id: Mutex::new(0),
            pending: Mutex::default(),
            audit: Mutex::default(),
            audit_file: None,
        }
    }

    /// When false, safe calls need approval too. Dangerous calls always do.
    pub fn with_auto_approve_safe(mut self, on: bool) -> Self {
        self.auto_approve_safe = on;
        self
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Append audit records to `<dir>/audit.log` as JSON lines. Action ids
    /// continue after the highest one already in the log.
    pub fn with_audit_dir(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(AUDIT_LOG);
        if path.exists() {
            let last = fs::read_to_string(&path)?
                .lines()
                .filter_map(|l| serde_json::from_str::<AuditRecord>(l).ok())
                .filter_map(|r| r.action_id.strip_prefix("act-").and_then(|n| n.parse::<u64>().ok()))
                .max()
                .unwrap_or(0);
            *self.next_id.lock() = last;
        }
        self.audit_file = Some(path);
        Ok(self)
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.audit.lock().clone()
    }

    fn log(&self, record: AuditRecord) -> Result<()> {
        if let Some(path) = &self.audit_file {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("audit record serializes"))?;
        }
        self.audit.lock().push(record);
        Ok(())
    }

    fn open_action(&self, call: ApiCall) -> Result<PendingAction> {
        validate(&call)?;
        let now = self.clock.now();
        let id = {
            let mut n = self.next_id.lock();
            *n += 1;
            format!("act-{:06}", *n)
        };
        Ok(PendingAction { id, danger: call.is_danger(), preview: preview(&call), created_at: now, expires_at: now + self.ttl, call })
    }

    fn decide(&self, action: PendingAction, verdict: Verdict, by: Option<&str>) -> Result<(AuditRecord, Option<ApprovedCall>)> {
        let record = AuditRecord {
            action_id: action.id.clone(),
            call: action.call.clone(),
            danger: action.danger,
            verdict,
            approved_by: by.map(str::to_string),
            created_at: action.created_at,
            decided_at: self.clock.now(),
        };
        self.log(record.clone())?;
        let approved = match verdict {
            Verdict::Approved | Verdict::AutoApproved => Some(ApprovedCall { call: action.call, action_id: action.id, record: record.clone() }),
            _ => None,
        };
        Ok((record, approved))
    }

    fn needs_approval(&self, action: &PendingAction) -> bool {
        action.danger || !self.auto_approve_safe
    }

    /// Review a call synchronously with `approver`.
    pub fn review(&self, call: ApiCall, approver: &dyn Approver) -> Result<ApprovedCall> {
        self.review_audited(call, approver).0
    }

    /// Like [`review`](Self::review), also returning the audit record when
    /// one was written (invalid calls are refused before auditing).
    pub fn review_audited(&self, call: ApiCall, approver: &dyn Approver) -> (Result<ApprovedCall>, Option<AuditRecord>) {
        let action = match self.open_action(call) {
            Ok(a) => a,
            Err(e) => return (Err(e), None),
        };
        let id = action.id.clone();
        let (verdict, by) = if !self.needs_approval(&action) {
            (Verdict::AutoApproved, None)
        } else {
            match approver.approve(&action) {
                Some(true) if self.clock.now() >= action.expires_at => (Verdict::Expired, None),
                Some(true) => (Verdict::Approved, Some(approver.name())),
                Some(false) => (Verdict::Rejected, Some(approver.name())),
                None => (Verdict::Rejected, None),
            }
        };
        let (record, approved) = match self.decide(action, verdict, by) {
            Ok(r) => r,
            Err(e) => return (Err(e), None),
        };
        let out = match (approved, verdict) {
            (Some(a), _) => Ok(a),
            (None, Verdict::Expired) => Err(Error::ApprovalTimeout(id)),
            (None, _) if by.is_none() => Err(Error::Rejected(format!("{id} needs confirmation and no approver is available"))),
            (None, _) => Err(Error::Rejected(format!("{id} was rejected"))),
        };
        (out, Some(record))
    }

    /// Deferred review: safe calls come back ready; others wait for
    /// [`confirm`](Self::confirm).
    pub fn submit(&self, call: ApiCall) -> Result<Submission> {
        let action = self.open_action(call)?;
        if !self.needs_approval(&action) {
            return Ok(Submission::Ready(self.decide(action, Verdict::AutoApproved, None)?.1.expect("auto approval")));
        }
        self.pending.lock().insert(action.id.clone(), action.clone());
        Ok(Submission::Pending(action))
    }

    pub fn confirm(&self, id: &str, approve: bool, by: &str) -> Result<ApprovedCall> {
        self.confirm_audited(id, approve, by).0
    }

    pub fn confirm_audited(&self, id: &str, approve: bool, by: &str) -> (Result<ApprovedCall>, Option<AuditRecord>) {
        let Some(action) = self.pending.lock().remove(id) else {
            return (Err(Error::PendingNotFound(id.to_string())), None);
        };
        let verdict = if self.clock.now() >= action.expires_at {
            Verdict::Expired
        } else if approve {
            Verdict::Approved
        } else {
            Verdict::Rejected
        };
        let by = (verdict != Verdict::Expired).then_some(by);
        match self.decide(action, verdict, by) {
            Err(e) => (Err(e), None),
            Ok((record, Some(approved))) => (Ok(approved), Some(record)),
            Ok((record, None)) if verdict == Verdict::Expired => (Err(Error::ApprovalTimeout(id.to_string())), Some(record)),
            Ok((record, None)) => (Err(Error::Rejected(format!("{id} was rejected"))), Some(record)),
        }
    }

    /// Pending actions still awaiting a decision; expired ones are audited
    /// and dropped.
    pub fn pending(&self) -> Result<Vec<PendingAction>> {
        let now = self.clock.now();
        let expired: Vec<PendingAction> = {
            let mut p = self.pending.lock();
            let ids: Vec<String> = p.values().filter(|a| now >= a.expires_at).map(|a| a.id.clone()).collect();
            ids.iter().filter_map(|id| p.remove(id)).collect()
        };
        for a in expired {
            self.decide(a, Verdict::Expired, None)?;
        }
        Ok(self.pending.lock().values().cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::TimeZone;

    fn gate() -> (Gate, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()));
        (Gate::new(clock.clone()), clock)
    }

    fn delete() -> ApiCall {
        ApiCall::new("del_").with("directory", "d").with("name", "a")
    }

    fn retrieve() -> ApiCall {
        ApiCall::new("semantic_retrieve").with("query", "q")
    }

    #[test]
    fn danger_needs_approval() {
        let (g, _) = gate();
        assert!(matches!(g.review(delete(), &AlwaysReject), Err(Error::Rejected(_))));
        assert!(matches!(g.review(delete(), &NoApprover), Err(Error::Rejected(_))));
        let ok = g.review(delete(), &AlwaysApprove).unwrap();
        assert_eq!(ok.call().api, "del_");
        let verdicts: Vec<Verdict> = g.audit().iter().map(|r| r.verdict).collect();
        assert_eq!(verdicts, [Verdict::Rejected, Verdict::Rejected, Verdict::Approved]);
    }

    #[test]
    fn safe_calls_auto_approve_unless_disabled() {
        let (g, _) = gate();
        assert!(g.review(retrieve(), &NoApprover).is_ok());
        assert_eq!(g.audit()[0].verdict, Verdict::AutoApproved);
        let (g, _) = gate();
        let g = g.with_auto_approve_safe(false);
        assert!(g.review(retrieve(), &NoApprover).is_err());
    }

    #[test]
    fn deferred_flow_and_expiry() {
        let (g, clock) = gate();
        let Submission::Pending(p) = g.submit(delete()).unwrap() else { panic!() };
        assert!(p.danger);
        assert_eq!(g.pending().unwrap().len(), 1);
        assert!(g.confirm(&p.id, true, "tester").is_ok());
        assert!(matches!(g.confirm(&p.id, true, "tester"), Err(Error::PendingNotFound(_))));

        let Submission::Pending(p) = g.submit(delete()).unwrap() else { panic!() };
        clock.advance(Duration::minutes(10));
        assert!(matches!(g.confirm(&p.id, true, "tester"), Err(Error::ApprovalTimeout(_))));

        let Submission::Pending(p) = g.submit(delete()).unwrap() else { panic!() };
        clock.advance(Duration::minutes(11));
        assert!(g.pending().unwrap().is_empty());
        assert!(matches!(g.confirm(&p.id, true, "tester"), Err(Error::PendingNotFound(_))));
        assert!(matches!(g.submit(retrieve()).unwrap(), Submission::Ready(_)));
    }

    #[test]
    fn invalid_calls_never_reach_approval() {
        let (g, _) = gate();
        let bad = ApiCall::new("rollback").with("name", "x").with("by", "count").with("k", 0);
        assert!(matches!(g.review(bad, &AlwaysApprove), Err(Error::Parse(_))));
        assert!(g.audit().is_empty());
    }

    #[test]
    fn join_danger_depends_on_condition() {
        let j = ApiCall::new("file_join").with("dir1", "d").with("name1", "a").with("name2", "b");
        assert!(j.is_danger());
        assert!(!j.clone().with("condition", "new").is_danger());
        assert!(preview(&j).contains("deletes the second"));
    }

    #[test]
    fn audit_file_lines() {
        let dir = tempfile::tempdir().unwrap();
        let (g, _) = gate();
        let g = g.with_audit_dir(dir.path()).unwrap();
        g.review(retrieve(), &NoApprover).unwrap();
        let text = fs::read_to_string(dir.path().join(AUDIT_LOG)).unwrap();
        let rec: AuditRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(rec.action_id, "act-000001");

        // a reopened gate keeps numbering where the log left off
        let (g2, _) = gate();
        let g2 = g2.with_audit_dir(dir.path()).unwrap();
        assert_eq!(g2.review(retrieve(), &NoApprover).unwrap().action_id(), "act-000002");
    }
}
