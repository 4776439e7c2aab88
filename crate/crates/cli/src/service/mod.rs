//! HTTP + WebSocket service over the plan library.

mod ws;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nc_core::events::{RunEvent, TraceKind};
use nc_core::orchestrator::agents::AgentConfig;
use nc_core::orchestrator::{EventListener, Run, Status};
use nc_core::project::parse_inputs;
use nc_core::reference::Reference;
use nc_core::store::{CaseFilter, RunId};
use nc_core::NodeAddr;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::error::Failure;
use crate::library::{Library, NewProject};
use crate::ops::{run_view, AgentSource, StartRequest, Workspace};
use crate::views::{FlowRange, TensorView};

pub const EVENTS_PROTOCOL: &str = "nc-events/1";

const INDEX_HTML: &str = include_str!("../../app/index.html");
const APP_JS: &str = include_str!("../../app/app.js");

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_json())).into_response()
    }
}

type ApiResult<T = Json<Value>> = Result<T, Failure>;

/// Per-run event fan-out. Subscribers backfill from the store and drop
/// duplicates by sequence number.
#[derive(Default)]
pub struct Hub {
    channels: Mutex<HashMap<RunId, broadcast::Sender<RunEvent>>>,
}

impl Hub {
    fn sender(&self, run: &RunId) -> broadcast::Sender<RunEvent> {
        self.channels
            .lock()
            .unwrap()
            .entry(run.clone())
            .or_insert_with(|| broadcast::channel(1024).0)
            .clone()
    }

    pub fn publish(&self, event: &RunEvent) {
        let _ = self.sender(&event.run_id).send(event.clone());
    }

    pub fn subscribe(&self, run: &RunId) -> broadcast::Receiver<RunEvent> {
        self.sender(run).subscribe()
    }
}

pub struct AppState {
    library: Mutex<Library>,
    workspaces: Mutex<HashMap<PathBuf, Workspace>>,
    runs: Mutex<HashMap<RunId, Workspace>>,
    active: Mutex<HashSet<RunId>>,
    hub: Arc<Hub>,
    workers: usize,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub library: PathBuf,
    /// Projects registered at startup.
    pub projects: Vec<PathBuf>,
    pub app_dir: Option<PathBuf>,
    pub workers: usize,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Failure> + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(500, "internal", e.to_string()))?
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Result<Arc<Self>, Failure> {
        let mut library = Library::open(&config.library)?;
        for root in &config.projects {
            library.register(None, root)?;
        }
        Ok(Arc::new(AppState {
            library: Mutex::new(library),
            workspaces: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
            active: Mutex::new(HashSet::new()),
            hub: Arc::new(Hub::default()),
            workers: config.workers.max(1),
        }))
    }

    fn workspace(&self, id: &str) -> Result<Workspace, Failure> {
        let project = {
            let lib = self.library.lock().unwrap();
            lib.get(id)?.1
        };
        let mut cache = self.workspaces.lock().unwrap();
        if let Some(ws) = cache.get(project.root()) {
            return Ok(ws.clone());
        }
        let ws = Workspace::open(project)?;
        cache.insert(ws.project.root().to_path_buf(), ws.clone());
        Ok(ws)
    }

    /// Workspace holding `run`, searching every library project on a miss.
    fn run_workspace(&self, run: &RunId) -> Result<Workspace, Failure> {
        if let Some(ws) = self.runs.lock().unwrap().get(run) {
            return Ok(ws.clone());
        }
        let ids: Vec<String> = self.library.lock().unwrap().entries().keys().cloned().collect();
        for id in ids {
            let Ok(ws) = self.workspace(&id) else { continue };
            if ws.has_run(run) {
                self.runs.lock().unwrap().insert(run.clone(), ws.clone());
                return Ok(ws);
            }
        }
        Err(Failure::not_found("run", run.as_str()))
    }

    fn listener(&self) -> EventListener {
        let hub = self.hub.clone();
        Arc::new(move |e: &RunEvent| hub.publish(e))
    }

    fn claim(&self, run: &RunId) -> Result<(), Failure> {
        if !self.active.lock().unwrap().insert(run.clone()) {
            return Err(Failure::conflict(format!("run {run} is already executing")).with_details(json!({ "run": run })));
        }
        Ok(())
    }

    /// Drives an opened run to idle on a blocking worker.
    fn drive(self: &Arc<Self>, mut run: Run) {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let id = run.run_id().clone();
            if let Err(e) = run.run_to_idle() {
                eprintln!("run {id}: {e}");
            }
            state.active.lock().unwrap().remove(&id);
        });
    }
}

pub fn router(state: Arc<AppState>, app_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/compile", post(compile_project))
        .route("/projects/{id}/narrative", get(narrative))
        .route("/projects/{id}/stats", get(stats))
        .route("/projects/{id}/runs", get(list_runs).post(start_run))
        .route("/projects/{id}/cases", get(cases))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/graph", get(graph))
        .route("/runs/{id}/values", get(values))
        .route("/runs/{id}/checkpoints", get(checkpoints))
        .route("/runs/{id}/checkpoints/{f}/tensor", get(tensor))
        .route("/runs/{id}/checkpoints/{f}/override", post(override_value))
        .route("/runs/{id}/checkpoints/{f}/fork", post(fork_run))
        .route("/runs/{id}/resume", post(resume))
        .route("/runs/{id}/trace/{kind}", get(trace))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/ws", get(ws::handler));
    let app = match app_dir {
        Some(dir) => Router::new().nest_service("/app", tower_http::services::ServeDir::new(dir)),
        None => Router::new()
            .route("/app", get(|| async { Html(INDEX_HTML) }))
            .route("/app/", get(|| async { Html(INDEX_HTML) }))
            .route(
                "/app/app.js",
                get(|| async { ([(header::CONTENT_TYPE, "text/javascript; charset=utf-8")], APP_JS) }),
            ),
    };
    api.merge(app).with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), Failure> {
    let state = AppState::new(&config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::new(500, "bind", format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Failure::new(500, "bind", e.to_string()))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(state, config.app_dir))
        .await
        .map_err(|e| Failure::new(500, "serve", e.to_string()))
}

fn parse_run(id: &str) -> Result<RunId, Failure> {
    RunId::parse(id).ok_or_else(|| Failure::not_found("run", id))
}

fn parse_addr(f: &str) -> Result<NodeAddr, Failure> {
    f.parse::<NodeAddr>()
        .map_err(|e| Failure::bad_request(format!("bad address `{f}`: {}", e.reason)))
}

async fn list_projects(State(st): State<Arc<AppState>>) -> ApiResult {
    let entries: Vec<(String, crate::library::Entry)> = st
        .library
        .lock()
        .unwrap()
        .entries()
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let st2 = st.clone();
    let out = blocking(move || {
        Ok(entries
            .into_iter()
            .map(|(id, e)| {
                let compiled = st2.workspace(&id).and_then(|ws| ws.artifact_state()).unwrap_or("invalid");
                json!({ "id": id, "name": e.name, "root": e.root, "compiled": compiled })
            })
            .collect::<Vec<_>>())
    })
    .await?;
    Ok(Json(json!(out)))
}

async fn create_project(State(st): State<Arc<AppState>>, Json(req): Json<NewProject>) -> ApiResult<(StatusCode, Json<Value>)> {
    let (id, entry) = blocking(move || st.library.lock().unwrap().create(req)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "name": entry.name, "root": entry.root })),
    ))
}

async fn get_project(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        let ws = st.workspace(&id)?;
        let entry = st.library.lock().unwrap().get(&id)?.0.clone();
        Ok(Json(json!({
            "id": id,
            "name": entry.name,
            "root": entry.root,
            "compiled": ws.artifact_state()?,
            "source": ws.project.source()?,
        })))
    })
    .await
}

async fn compile_project(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    blocking(move || {
        let ws = st.workspace(&id)?;
        let (compiled, written) = ws.build()?;
        let s = &compiled.plan.stats;
        Ok(Json(json!({
            "plan": compiled.plan.name,
            "digest": compiled.bundle.digest(),
            "artifacts": written,
            "nodes": compiled.plan.nodes.len(),
            "stats": {
                "semantic": s.semantic_count,
                "syntactic": s.syntactic_count,
                "syntactic_fraction": s.syntactic_fraction(),
            },
        })))
    })
    .await
}

async fn narrative(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = blocking(move || Ok(st.workspace(&id)?.compile()?.narrative)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn stats(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    blocking(move || Ok(Json(json!(st.workspace(&id)?.stats()?)))).await
}

async fn list_runs(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    blocking(move || Ok(Json(json!(st.workspace(&id)?.runs()?)))).await
}

#[derive(Debug, Default, Deserialize)]
struct StartBody {
    #[serde(default)]
    inputs: BTreeMap<String, Value>,
    #[serde(default)]
    breakpoints: Vec<String>,
    #[serde(default)]
    agents: Option<AgentConfig>,
}

fn agent_source(agents: Option<AgentConfig>) -> AgentSource {
    agents.map(AgentSource::Inline).unwrap_or_default()
}

async fn start_run(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<StartBody>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let body = body.map(|b| b.0).unwrap_or_default();
    let state = st.clone();
    let run = blocking(move || {
        let ws = state.workspace(&id)?;
        let inputs = parse_inputs(&body.inputs).map_err(|m| Failure::new(422, "invalid_inputs", m))?;
        let req = StartRequest {
            inputs,
            breakpoints: body.breakpoints,
            agents: agent_source(body.agents),
            run_id: Some(RunId::generate()),
        };
        let run_id = req.run_id.clone().expect("set above");
        state.runs.lock().unwrap().insert(run_id.clone(), ws.clone());
        state.claim(&run_id)?;
        match ws.start(req, state.workers, Some(state.listener())) {
            Ok(run) => Ok(run),
            Err(e) => {
                state.active.lock().unwrap().remove(&run_id);
                state.runs.lock().unwrap().remove(&run_id);
                Err(e)
            }
        }
    })
    .await?;
    let run_id = run.run_id().clone();
    st.drive(run);
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

async fn get_run(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let run = parse_run(&id)?;
    blocking(move || {
        let ws = st.run_workspace(&run)?;
        let record = ws.record(&run)?;
        let mut v = run_view(&record);
        v["counts"] = json!(ws.board(&run)?.counts());
        v["active"] = json!(st.active.lock().unwrap().contains(&run));
        Ok(Json(v))
    })
    .await
}

async fn graph(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let run = parse_run(&id)?;
    blocking(move || {
        let ws = st.run_workspace(&run)?;
        let mut g = ws.graph(&run)?;
        g["active"] = json!(st.active.lock().unwrap().contains(&run));
        Ok(Json(g))
    })
    .await
}

async fn values(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let run = parse_run(&id)?;
    blocking(move || {
        let values = st.run_workspace(&run)?.values(&run)?;
        let out: serde_json::Map<String, Value> = values.iter().map(|(a, r)| (a.to_string(), r.to_json_value())).collect();
        Ok(Json(Value::Object(out)))
    })
    .await
}

async fn checkpoints(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let run = parse_run(&id)?;
    blocking(move || Ok(Json(json!(st.run_workspace(&run)?.checkpoints(&run)?)))).await
}

#[derive(Debug, Default, Deserialize)]
struct ViewQuery {
    view: Option<String>,
}

async fn tensor(State(st): State<Arc<AppState>>, Path((id, f)): Path<(String, String)>, Query(q): Query<ViewQuery>) -> ApiResult {
    let run = parse_run(&id)?;
    let addr = parse_addr(&f)?;
    let view: TensorView = q.view.as_deref().unwrap_or("table").parse().map_err(Failure::bad_request)?;
    blocking(move || Ok(Json(json!(st.run_workspace(&run)?.tensor(&run, &addr, view)?)))).await
}

#[derive(Debug, Deserialize)]
struct OverrideBody {
    value: Value,
}

async fn override_value(
    State(st): State<Arc<AppState>>,
    Path((id, f)): Path<(String, String)>,
    Json(body): Json<OverrideBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let run = parse_run(&id)?;
    let addr = parse_addr(&f)?;
    let value = Reference::from_input_value(&body.value)?;
    let outcome = blocking(move || {
        let ws = st.run_workspace(&run)?;
        let outcome = ws.override_value(&run, &addr, value)?;
        st.runs.lock().unwrap().insert(outcome.run_id.clone(), ws);
        Ok(outcome)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!(outcome))))
}

async fn fork_run(State(st): State<Arc<AppState>>, Path((id, f)): Path<(String, String)>) -> ApiResult<(StatusCode, Json<Value>)> {
    let run = parse_run(&id)?;
    let addr = parse_addr(&f)?;
    let new = blocking(move || {
        let ws = st.run_workspace(&run)?;
        let new = ws.fork(&run, &addr)?;
        st.runs.lock().unwrap().insert(new.clone(), ws);
        Ok(new)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": new, "parent": id, "address": f }))))
}

#[derive(Debug, Default, Deserialize)]
struct ResumeBody {
    #[serde(default)]
    agents: Option<AgentConfig>,
}

async fn resume(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<ResumeBody>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let run_id = parse_run(&id)?;
    let agents = agent_source(body.and_then(|b| b.0.agents));
    let state = st.clone();
    let rid = run_id.clone();
    let run = blocking(move || {
        let ws = state.run_workspace(&rid)?;
        state.claim(&rid)?;
        ws.reopen(&rid, &agents, state.workers, Some(state.listener())).inspect_err(|_| {
            state.active.lock().unwrap().remove(&rid);
        })
    })
    .await?;
    st.drive(run);
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

async fn trace(
    State(st): State<Arc<AppState>>,
    Path((id, kind)): Path<(String, String)>,
    Query(q): Query<RangeQuery>,
) -> ApiResult {
    let run = parse_run(&id)?;
    let kind = TraceKind::parse(&kind).ok_or_else(|| Failure::not_found("trace view", &kind))?;
    let range = FlowRange::parse(q.from.as_deref(), q.to.as_deref()).map_err(Failure::bad_request)?;
    blocking(move || Ok(Json(json!(st.run_workspace(&run)?.trace(&run, kind, &range)?)))).await
}

#[derive(Debug, Default, Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

async fn events(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SinceQuery>) -> ApiResult {
    let run = parse_run(&id)?;
    blocking(move || Ok(Json(json!(st.run_workspace(&run)?.events(&run, q.since.unwrap_or(0))?)))).await
}

#[derive(Debug, Default, Deserialize)]
struct CaseQuery {
    run: Option<String>,
    address: Option<String>,
    status: Option<String>,
}

pub fn parse_status(s: &str) -> Result<Status, Failure> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| Failure::bad_request(format!("unknown status `{s}`")))
}

async fn cases(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<CaseQuery>) -> ApiResult {
    let filter = CaseFilter {
        run: q.run.as_deref().map(parse_run).transpose()?,
        address: q.address.as_deref().map(parse_addr).transpose()?,
        status: q.status.as_deref().map(parse_status).transpose()?,
        ..Default::default()
    };
    blocking(move || Ok(Json(json!(st.workspace(&id)?.cases(&filter)?)))).await
}
