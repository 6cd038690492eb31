//! HTTP control plane.
//!
//! All routes live under `/api` and speak JSON. Errors are
//! `{"code", "message", "subject"}` with the status from
//! [`RuntimeError::status`]. Mutations are validated and applied before the
//! response is sent; the body carries a command number and the events the
//! command recorded. A swap answers 202 once the new generation serves;
//! its `Released` event arrives later on the event stream.
//!
//! `GET /api/events?cursor=N&follow=B` streams newline-delimited events
//! with `seq > N`. With `follow=false` it ends at the newest event. When
//! `N` is older than the oldest retained event the first line is a
//! `CursorTooOld` error object and the stream continues from the oldest.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use eight_core::ism::{ChangeContext, ModelSpec, SystemModel};
use eight_core::Value;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{certify_report, scope_report, ContextArg};
use crate::config::{present, AdapterSpec, ConnectionConfig, InstanceConfig, PortAddr, RebindEntry};
use crate::container::{Container, LifecycleEvent};
use crate::error::RuntimeError;
use crate::json::{from_json, to_json};
use crate::manifest::ComponentRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub subject: Option<String>,
}

impl From<&RuntimeError> for ApiError {
    fn from(e: &RuntimeError) -> Self {
        ApiError { code: e.code().into(), message: e.to_string(), subject: e.subject() }
    }
}

struct Failure(RuntimeError);

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, axum::Json(ApiError::from(&self.0))).into_response()
    }
}

type Reply = Result<Response, Failure>;

#[derive(Clone)]
struct AppState {
    container: Container,
    commands: Arc<AtomicU64>,
}

impl AppState {
    fn command(&self) -> u64 {
        self.commands.fetch_add(1, Ordering::SeqCst) + 1
    }
}

/// Acknowledgement of an applied mutation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandReply {
    pub command: u64,
    pub subject: String,
    pub events: Vec<LifecycleEvent>,
}

fn ok<T: Serialize>(value: T) -> Reply {
    Ok(axum::Json(value).into_response())
}

fn accepted(state: &AppState, subject: &str, events: Vec<LifecycleEvent>, status: StatusCode) -> Reply {
    let reply = CommandReply { command: state.command(), subject: subject.into(), events };
    Ok((status, axum::Json(reply)).into_response())
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure(RuntimeError::BadRequest(e.to_string())))
}

/// Runs lifecycle work off the async executor; it may wait on drains.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, RuntimeError> + Send + 'static) -> Result<T, Failure> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure),
        Err(e) => Err(Failure(RuntimeError::Io(format!("worker failed: {e}")))),
    }
}

pub fn router(container: Container) -> Router {
    let state = AppState { container, commands: Arc::new(AtomicU64::new(0)) };
    Router::new()
        .route("/api/components", get(components).post(upload_component))
        .route("/api/instances", get(instances).post(create_instance))
        .route("/api/instances/{id}", axum::routing::delete(delete_instance))
        .route("/api/instances/{id}/swap", post(swap))
        .route("/api/instances/{id}/invoke", post(invoke))
        .route("/api/connections", get(connections).post(create_connection))
        .route("/api/connections/{id}", put(relink).delete(delete_connection))
        .route("/api/connections/{id}/adapter", put(put_adapter))
        .route("/api/graph", get(graph))
        .route("/api/snapshot", get(snapshot))
        .route("/api/events", get(events))
        .route("/api/scan", post(scan))
        .route("/api/ism/model", post(ism_model))
        .route("/api/ism/scope", post(ism_scope))
        .route("/api/ism/certify", post(ism_certify))
        .fallback(|| async { Failure(RuntimeError::UnknownId("no such route".into())) })
        .with_state(state)
}

async fn components(State(s): State<AppState>) -> Reply {
    ok(s.container.components())
}

async fn instances(State(s): State<AppState>) -> Reply {
    ok(s.container.instances())
}

async fn connections(State(s): State<AppState>) -> Reply {
    ok(s.container.connections())
}

async fn graph(State(s): State<AppState>) -> Reply {
    ok(s.container.graph())
}

async fn snapshot(State(s): State<AppState>) -> Reply {
    ok(s.container.snapshot())
}

/// Body: raw package bytes.
async fn upload_component(State(s): State<AppState>, body: Bytes) -> Reply {
    let c = s.container.clone();
    let events = blocking(move || c.load_bytes(&body, "upload")).await?;
    let subject = events.first().map(|e| e.subject.clone()).unwrap_or_default();
    accepted(&s, &subject, events, StatusCode::OK)
}

async fn create_instance(State(s): State<AppState>, body: Bytes) -> Reply {
    let cfg: InstanceConfig = parse(&body)?;
    let id = cfg.id.clone();
    let c = s.container.clone();
    let events = blocking(move || c.instantiate_recorded(cfg)).await?;
    accepted(&s, &id, events, StatusCode::OK)
}

async fn delete_instance(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    let c = s.container.clone();
    let i = id.clone();
    let events = blocking(move || c.unload_instance(&i)).await?;
    accepted(&s, &id, events, StatusCode::OK)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SwapRequest {
    component: ComponentRef,
    #[serde(default)]
    rebind: Vec<RebindEntry>,
}

async fn swap(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply {
    let req: SwapRequest = parse(&body)?;
    if req.rebind.iter().any(|e| matches!(&e.adapter, Some(Some(a)) if a.has_unresolved_file())) {
        return Err(Failure(RuntimeError::BadRequest("script_file adapters must be inlined by the client".into())));
    }
    let c = s.container.clone();
    let i = id.clone();
    let handle = blocking(move || c.begin_swap(&i, req.component, &req.rebind)).await?;
    let events = handle.events.clone();
    // The watcher thread finishes the drain; its Released event goes to
    // the log.
    drop(handle);
    accepted(&s, &id, events, StatusCode::ACCEPTED)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InvokeRequest {
    #[serde(default = "main_port")]
    port: String,
    method: String,
    #[serde(default)]
    args: Vec<serde_json::Value>,
}

fn main_port() -> String {
    "main".into()
}

async fn invoke(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply {
    let req: InvokeRequest = parse(&body)?;
    let args = req
        .args
        .iter()
        .map(from_json)
        .collect::<Result<Vec<Value>, _>>()
        .map_err(|e| Failure(RuntimeError::BadRequest(e.to_string())))?;
    let c = s.container.clone();
    let result = blocking(move || c.invoke_named(&id, &req.port, &req.method, args)).await?;
    ok(json!({ "result": to_json(&result) }))
}

async fn create_connection(State(s): State<AppState>, body: Bytes) -> Reply {
    let cfg: ConnectionConfig = parse(&body)?;
    let id = cfg.id.clone();
    let c = s.container.clone();
    let event = blocking(move || c.create_connection_recorded(cfg)).await?;
    accepted(&s, &id, vec![event], StatusCode::OK)
}

async fn delete_connection(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    let c = s.container.clone();
    let i = id.clone();
    let event = blocking(move || c.remove_connection(&i)).await?;
    accepted(&s, &id, vec![event], StatusCode::OK)
}

/// Body: an adapter spec, or `null` to remove the adapter.
async fn put_adapter(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply {
    let spec: Option<AdapterSpec> = parse(&body)?;
    let c = s.container.clone();
    let i = id.clone();
    let event = blocking(move || c.reload_adapter(&i, spec)).await?;
    accepted(&s, &id, vec![event], StatusCode::OK)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RelinkRequest {
    #[serde(default)]
    to: Option<PortAddr>,
    /// Absent keeps the adapter, `null` removes it.
    #[serde(default, deserialize_with = "present")]
    adapter: Option<Option<AdapterSpec>>,
}

async fn relink(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply {
    let req: RelinkRequest = parse(&body)?;
    let c = s.container.clone();
    let i = id.clone();
    let event = blocking(move || c.relink(&i, req.to, req.adapter)).await?;
    accepted(&s, &id, vec![event], StatusCode::OK)
}

async fn scan(State(s): State<AppState>) -> Reply {
    let c = s.container.clone();
    let (delta, events) = blocking(move || c.scan_and_apply()).await?;
    let subject = events.first().map(|e| e.subject.clone()).unwrap_or_default();
    Ok(axum::Json(json!({
        "command": s.command(),
        "subject": subject,
        "delta": delta,
        "events": events,
    }))
    .into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ModelRequest {
    /// Context the running system is exported under; `s` by default.
    #[serde(default)]
    context: Option<String>,
}

fn export_context(c: Option<&str>) -> Result<ChangeContext, Failure> {
    c.unwrap_or("s").parse().map_err(|e: eight_core::ism::IsmError| Failure(e.into()))
}

fn body_or_default<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, Failure> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

async fn ism_model(State(s): State<AppState>, body: Bytes) -> Reply {
    let req: ModelRequest = body_or_default(&body)?;
    let x = export_context(req.context.as_deref())?;
    ok(s.container.export_ism_model(x).to_spec())
}

/// A model given inline, or the running system exported under
/// `export_context`.
fn model_of(s: &AppState, spec: Option<ModelSpec>, export: Option<&str>) -> Result<SystemModel, Failure> {
    match spec {
        Some(spec) => SystemModel::build(&spec).map_err(|e| Failure(e.into())),
        None => Ok(s.container.export_ism_model(export_context(export)?)),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScopeRequest {
    #[serde(default)]
    model: Option<ModelSpec>,
    context: ContextArg,
    change: Vec<String>,
}

async fn ism_scope(State(s): State<AppState>, body: Bytes) -> Reply {
    let req: ScopeRequest = parse(&body)?;
    let x = req.context.parse()?;
    let first = x.iter().next().map(|c| c.to_string());
    let model = model_of(&s, req.model, first.as_deref())?;
    ok(scope_report(&model, x, &req.change)?)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CertifyRequest {
    #[serde(default)]
    model: Option<ModelSpec>,
    #[serde(default)]
    context: Option<String>,
    #[serde(default)]
    app: Option<String>,
    #[serde(default)]
    module: Option<String>,
}

async fn ism_certify(State(s): State<AppState>, body: Bytes) -> Reply {
    let req: CertifyRequest = body_or_default(&body)?;
    let model = model_of(&s, req.model, req.context.as_deref())?;
    let reports = certify_report(&model, req.app.as_deref(), req.module.as_deref())?;
    ok(json!({ "ideal": crate::analysis::all_ideal(&reports), "applications": reports }))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    cursor: u64,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn ndjson<T: Serialize>(v: &T) -> Bytes {
    let mut line = serde_json::to_vec(v).expect("events serialize");
    line.push(b'\n');
    Bytes::from(line)
}

struct Tail {
    container: Container,
    cursor: u64,
    pending: VecDeque<Bytes>,
    follow: bool,
}

async fn events(State(s): State<AppState>, Query(q): Query<EventsQuery>) -> Response {
    let tail = Tail { container: s.container.clone(), cursor: q.cursor, pending: VecDeque::new(), follow: q.follow };
    let stream = futures::stream::unfold(tail, |mut t| async move {
        loop {
            if let Some(line) = t.pending.pop_front() {
                return Some((Ok::<_, Infallible>(line), t));
            }
            let container = t.container.clone();
            let log = container.events();
            let mut notified = std::pin::pin!(log.notified());
            notified.as_mut().enable();
            match log.since(t.cursor) {
                Ok(batch) if !batch.is_empty() => {
                    t.cursor = batch.last().map_or(t.cursor, |e| e.seq);
                    t.pending.extend(batch.iter().map(ndjson));
                }
                Ok(_) if !t.follow => return None,
                Ok(_) => notified.await,
                Err(e @ RuntimeError::CursorTooOld { oldest, .. }) => {
                    t.pending.push_back(ndjson(&ApiError::from(&e)));
                    t.cursor = oldest - 1;
                }
                Err(_) => return None,
            }
        }
    });
    ([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response()
}

/// Serves `container` on `listener` until `shutdown` completes.
pub async fn serve(
    container: Container,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(container)).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread. Stops when dropped.
pub struct Server {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `bind` and serves `container` from a background thread.
pub fn spawn(container: Container, bind: &str) -> Result<Server, RuntimeError> {
    let fail = |e: std::io::Error| RuntimeError::BindFailure { addr: bind.to_string(), reason: e.to_string() };
    let std_listener = std::net::TcpListener::bind(bind).map_err(fail)?;
    std_listener.set_nonblocking(true).map_err(fail)?;
    let addr = std_listener.local_addr().map_err(fail)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(fail)?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("api".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let shutdown = async move {
                    let _ = stopped.await;
                };
                if let Err(e) = serve(container, listener, shutdown).await {
                    log::error!("api server: {e}");
                }
            });
            runtime.shutdown_background();
        })
        .map_err(fail)?;
    Ok(Server { addr, stop: Some(stop), thread: Some(thread) })
}
