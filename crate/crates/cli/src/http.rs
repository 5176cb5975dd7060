//! HTTP service: the `/v1` JSON API used by the web console plus the public
//! `/share/{token}` endpoint. Every state change goes through the same
//! gate and execution path as the CLI.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use lsfs_core::engine::{Lsfs, Outcome, Selection, Submitted, Transcript};
use lsfs_core::gate::{AuditRecord, PendingAction, Verdict};
use lsfs_core::parser::ApiCall;
use lsfs_core::store::FileMetadata;
use lsfs_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct AppState {
    pub lsfs: Arc<Lsfs>,
    /// Required as `Authorization: Bearer <token>` on /v1 when set.
    pub token: Option<String>,
}

impl AppState {
    pub fn new(lsfs: Arc<Lsfs>, token: Option<String>) -> Arc<Self> {
        Arc::new(Self { lsfs, token })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/prompt", post(prompt))
        .route("/confirm", post(confirm))
        .route("/pending", get(pending))
        .route("/directories", get(directories))
        .route("/directories/{d}/files", get(directory_files))
        .route("/files/{d}/{n}", get(file))
        .route("/files/{d}/{n}/versions", get(versions))
        .route("/rollback", post(rollback))
        .route("/links", post(create_link))
        .route("/links/{token}", delete(revoke_link))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().nest("/v1", v1).route("/share/{token}", get(share)).fallback(not_found).with_state(state)
}

/// Bind and serve until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => anyhow::bail!("PortInUse: {addr} is already in use"),
        Err(e) => return Err(e.into()),
    };
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

// ---- errors ----

/// Problem-detail body: `{type, title, detail}` plus optional context.
#[derive(Debug, Serialize)]
pub struct Problem {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub detail: String,
    pub status: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Box<Transcript>>,
}

impl Problem {
    fn new(status: StatusCode, kind: &str, detail: impl Into<String>) -> Self {
        Self {
            kind: format!("urn:lsfs:error:{kind}"),
            title: kind.to_string(),
            detail: detail.into(),
            status: status.as_u16(),
            raw_output: None,
            transcript: None,
        }
    }

    fn from_error(e: &Error) -> Self {
        Self::new(status_for(e.kind()), e.kind(), e.to_string())
    }

    /// A failed transcript, keeping the plan and raw parser output.
    fn from_transcript(t: Transcript) -> Self {
        let err = t.error.clone().expect("failed transcript");
        let mut p = Self::new(status_for(&err.kind), &err.kind, err.message);
        p.raw_output = err.raw_output;
        p.transcript = Some(Box::new(t));
        p
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut res = (status, Json(self)).into_response();
        res.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/problem+json"));
        res
    }
}

pub fn status_for(kind: &str) -> StatusCode {
    match kind {
        "UnparseableOutput" | "UnknownApi" | "SchemaViolation" => StatusCode::UNPROCESSABLE_ENTITY,
        "InvalidName" | "InvalidDirectory" | "EmptyQuery" | "MissingMode" | "MissingArgument" | "SelfJoin" | "TooFewVersions"
        | "NoVersionBefore" | "Precondition" | "ExtractorUnsupported" | "PathUnreadable" | "BadRequest" => StatusCode::UNPROCESSABLE_ENTITY,
        "NotFound" | "UnknownKey" | "PendingNotFound" | "EmptyResult" => StatusCode::NOT_FOUND,
        "Gone" | "ApprovalTimeout" => StatusCode::GONE,
        "Rejected" => StatusCode::FORBIDDEN,
        "FileLocked" | "DirectoryExists" | "AmbiguousTarget" => StatusCode::CONFLICT,
        "Unauthorized" => StatusCode::UNAUTHORIZED,
        "ProviderUnavailable" | "Timeout" | "RateLimited" | "ShareStoreUnavailable" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

type Reply = Result<Response, Problem>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Problem> {
    tokio::task::spawn_blocking(f).await.map_err(|e| Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_str()) {
            let mut res = Problem::new(StatusCode::UNAUTHORIZED, "Unauthorized", "a valid bearer token is required").into_response();
            res.headers_mut().insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
            return res;
        }
    }
    next.run(req).await
}

async fn not_found() -> Problem {
    Problem::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

// ---- prompt / confirm ----

#[derive(Debug, Serialize)]
pub struct Plan {
    pub call: Option<ApiCall>,
    pub preview: Option<String>,
    pub danger: bool,
}

impl Plan {
    fn of(t: &Transcript) -> Self {
        Self { call: t.call.clone(), preview: t.preview.clone(), danger: t.danger }
    }
}

#[derive(Debug, Serialize)]
pub struct Executed {
    pub plan: Plan,
    /// False when the user rejected the action.
    pub executed: bool,
    pub result: Option<Outcome>,
    pub approval: Option<AuditRecord>,
}

#[derive(Debug, Serialize)]
pub struct PendingView {
    pub pending_id: String,
    pub preview: String,
    pub danger: bool,
    pub call: ApiCall,
    pub created_at: String,
    pub expires_at: String,
}

impl From<PendingAction> for PendingView {
    fn from(a: PendingAction) -> Self {
        Self {
            pending_id: a.id,
            preview: a.preview,
            danger: a.danger,
            call: a.call,
            created_at: a.created_at.to_rfc3339(),
            expires_at: a.expires_at.to_rfc3339(),
        }
    }
}

/// 202 body: the plan plus the pending action awaiting `/v1/confirm`.
#[derive(Debug, Serialize)]
pub struct Parked {
    pub plan: Plan,
    #[serde(flatten)]
    pub pending: PendingView,
}

#[derive(Debug, Deserialize)]
pub struct PromptBody {
    pub prompt: String,
    /// Retrieval candidates to keep, as `directory/name` or bare names.
    #[serde(default)]
    pub select: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
pub struct ConfirmBody {
    pub pending_id: String,
    pub approve: bool,
    #[serde(default)]
    pub by: Option<String>,
    #[serde(default)]
    pub select: Option<Vec<String>>,
}

fn finished(lsfs: &Lsfs, t: Transcript) -> Reply {
    if t.is_ok() {
        persist(lsfs);
        return Ok(Json(Executed { plan: Plan::of(&t), executed: true, result: t.outcome, approval: t.approval }).into_response());
    }
    // an explicit "no" from a person is a normal answer, not a failure
    let declined = t.approval.as_ref().is_some_and(|a| a.verdict == Verdict::Rejected && a.approved_by.is_some());
    if declined {
        return Ok(Json(Executed { plan: Plan::of(&t), executed: false, result: None, approval: t.approval }).into_response());
    }
    Err(Problem::from_transcript(t))
}

fn submitted(lsfs: &Lsfs, s: Submitted) -> Reply {
    match s {
        Submitted::Done(t) => finished(lsfs, t),
        Submitted::Pending { transcript, action } => {
            let body = Parked { plan: Plan::of(&transcript), pending: action.into() };
            Ok((StatusCode::ACCEPTED, Json(body)).into_response())
        }
    }
}

fn persist(lsfs: &Lsfs) {
    if let Err(e) = lsfs.persist() {
        log::warn!("persist failed: {e}");
    }
}

async fn prompt(State(state): State<Arc<AppState>>, Json(body): Json<PromptBody>) -> Reply {
    let lsfs = state.lsfs.clone();
    blocking(move || {
        let selection = Selection { keep: body.select };
        let s = lsfs.submit_prompt(&body.prompt, &selection);
        submitted(&lsfs, s)
    })
    .await?
}

async fn confirm(State(state): State<Arc<AppState>>, Json(body): Json<ConfirmBody>) -> Reply {
    let lsfs = state.lsfs.clone();
    blocking(move || {
        let by = body.by.unwrap_or_else(|| "console".to_string());
        let t = lsfs.confirm(&body.pending_id, body.approve, &by, &Selection { keep: body.select });
        finished(&lsfs, t)
    })
    .await?
}

async fn pending(State(state): State<Arc<AppState>>) -> Reply {
    let actions = state.lsfs.gate().pending().map_err(|e| Problem::from_error(&e))?;
    let views: Vec<PendingView> = actions.into_iter().map(PendingView::from).collect();
    Ok(Json(json!({ "pending": views })).into_response())
}

// ---- browsing ----

async fn directories(State(state): State<Arc<AppState>>) -> Reply {
    Ok(Json(json!({ "directories": state.lsfs.store().directories() })).into_response())
}

async fn directory_files(State(state): State<Arc<AppState>>, Path(d): Path<String>) -> Reply {
    let view = state.lsfs.store().view();
    if !view.has_directory(&d) {
        return Err(Problem::new(StatusCode::NOT_FOUND, "NotFound", format!("directory {d:?} not found")));
    }
    let files: Vec<FileMetadata> = view.list(&d);
    Ok(Json(json!({ "directory": d, "files": files })).into_response())
}

async fn file(State(state): State<Arc<AppState>>, Path((d, n)): Path<(String, String)>) -> Reply {
    let entry = state.lsfs.store().get_entry(&d, &n).map_err(|e| Problem::from_error(&e))?;
    Ok(Json(json!({ "metadata": entry.metadata, "content": entry.content })).into_response())
}

#[derive(Debug, Serialize)]
struct VersionView {
    seq: u64,
    recorded_at: String,
    size_bytes: u64,
    content_hash: String,
    content: String,
}

async fn versions(State(state): State<Arc<AppState>>, Path((d, n)): Path<(String, String)>) -> Reply {
    let key = lsfs_core::versions::FileKey::new(&d, &n);
    let chain = state.lsfs.apis().versions().versions(&key);
    if chain.is_empty() && !state.lsfs.store().contains(&d, &n) {
        return Err(Problem::from_error(&Error::UnknownKey(format!("{d}/{n}"))));
    }
    let views: Vec<VersionView> = chain
        .iter()
        .map(|v| VersionView {
            seq: v.seq,
            recorded_at: v.recorded_at.to_rfc3339(),
            size_bytes: v.content.len() as u64,
            content_hash: lsfs_core::store::content_hash(&v.content),
            content: v.content.clone(),
        })
        .collect();
    Ok(Json(json!({ "directory": d, "name": n, "versions": views })).into_response())
}

// ---- gated shortcuts ----

/// Build a call from JSON fields the same way `lsfs exec` does and submit it.
async fn submit_pairs(state: &AppState, api: &'static str, pairs: Vec<(String, String)>) -> Reply {
    let lsfs = state.lsfs.clone();
    blocking(move || {
        let call = lsfs.parser().from_pairs(api, &pairs).map_err(|e| Problem::from_error(&Error::Parse(e)))?;
        let s = lsfs.submit_call(call, &Selection::default());
        submitted(&lsfs, s)
    })
    .await?
}

fn pairs_from(body: &Value, fields: &[&str]) -> Result<Vec<(String, String)>, Problem> {
    let obj = body.as_object().ok_or_else(|| Problem::new(StatusCode::BAD_REQUEST, "BadRequest", "expected a JSON object"))?;
    let mut pairs = Vec::new();
    for f in fields {
        match obj.get(*f) {
            None | Some(Value::Null) => {}
            Some(Value::String(s)) => pairs.push((f.to_string(), s.clone())),
            Some(Value::Number(n)) => pairs.push((f.to_string(), n.to_string())),
            Some(other) => return Err(Problem::new(StatusCode::UNPROCESSABLE_ENTITY, "BadRequest", format!("{f}: unsupported value {other}"))),
        }
    }
    Ok(pairs)
}

/// `{name, directory?, k? | date?}`; `by` is inferred when omitted.
async fn rollback(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> Reply {
    let mut pairs = pairs_from(&body, &["name", "directory", "by", "k", "date"])?;
    if !pairs.iter().any(|(k, _)| k == "by") {
        let by = if pairs.iter().any(|(k, _)| k == "date") { "date" } else { "count" };
        pairs.push(("by".into(), by.into()));
    }
    submit_pairs(&state, "rollback", pairs).await
}

/// `{name, directory?, validity?}`; validity is seconds or a phrase such as "3 days".
async fn create_link(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> Reply {
    let pairs = pairs_from(&body, &["name", "directory", "validity"])?;
    let res = submit_pairs(&state, "create_link", pairs).await?;
    Ok(with_status_if_ok(res, StatusCode::CREATED))
}

async fn revoke_link(State(state): State<Arc<AppState>>, Path(token): Path<String>) -> Reply {
    submit_pairs(&state, "revoke_link", vec![("token".into(), token)]).await
}

fn with_status_if_ok(mut res: Response, status: StatusCode) -> Response {
    if res.status() == StatusCode::OK {
        *res.status_mut() = status;
    }
    res
}

// ---- public share endpoint ----

async fn share(State(state): State<Arc<AppState>>, Path(token): Path<String>) -> Reply {
    let content = state.lsfs.apis().fetch_shared(&token).map_err(|e| Problem::from_error(&e))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], content).into_response())
}
