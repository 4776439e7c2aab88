//! The `nc` command.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nc_core::events::TraceKind;
use nc_core::project::Project;
use nc_core::store::{CaseFilter, RunId};
use nc_core::NodeAddr;
use serde_json::{json, Value};

use crate::error::{scope_details, Failure};
use crate::ops::{self, AgentSource, StartRequest, Workspace};
use crate::service::{self, ServiceConfig};
use crate::views::{FlowRange, TensorView};

#[derive(Debug, Parser)]
#[command(name = "nc", version, about = "Compile, run and revise scoped workflow plans")]
pub struct Cli {
    /// Project directory.
    #[arg(long, global = true, env = "NC_PROJECT_ROOT")]
    pub project: Option<PathBuf>,
    /// Print machine-readable JSON, including diagnostics.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceView {
    Agent,
    Data,
    Orch,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a plan and write its build artifacts.
    Compile {
        /// A `.ncds` file or project directory.
        plan: Option<PathBuf>,
    },
    /// Print the plan's narrative.
    Narrate { plan: Option<PathBuf> },
    /// Semantic and syntactic node counts.
    Stats { plan: Option<PathBuf> },
    /// Start a run and execute it until it finishes or pauses.
    Run {
        /// `name=text`, `name=@file` or `name=json:<value>`.
        #[arg(long = "input", short = 'i')]
        inputs: Vec<String>,
        /// Pause every instance of this flow index before it executes.
        #[arg(long = "breakpoint", short = 'b')]
        breakpoints: Vec<String>,
        /// Agent configuration replacing the project's `agents.json`.
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Continue a paused, failed, forked or overridden run.
    Resume {
        run: String,
        #[arg(long)]
        agents: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Show a value from a run; without an address, every value as JSON.
    Inspect {
        run: String,
        address: Option<String>,
        #[arg(long, value_enum, default_value_t = TensorView::Table)]
        view: TensorView,
    },
    /// Replace a completed value in a new run and mark its dependents stale.
    Override {
        run: String,
        address: String,
        /// Reference JSON, or any other file as one text value.
        #[arg(long)]
        value: PathBuf,
    },
    /// Start a new run from a checkpoint.
    Fork { run: String, address: String },
    /// Agent, data or orchestration trace of a run.
    Trace {
        run: String,
        #[arg(long, value_enum)]
        view: TraceView,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Runs recorded in the project store.
    Runs,
    /// Event log of a run.
    Events {
        run: String,
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    /// Retained checkpoints across runs.
    Cases {
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        address: Option<String>,
        #[arg(long)]
        status: Option<String>,
    },
    /// Serve the HTTP and WebSocket API and the canvas.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Plan library directory; defaults to `library` under the current
        /// directory.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Serve the canvas from this directory instead of the built-in copy.
        #[arg(long)]
        app: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

/// Rendered command output.
pub enum Output {
    Text(String),
    Json(Value),
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json_mode = cli.json;
    match execute(cli) {
        Ok((out, code)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = match out {
                Output::Text(s) => stdout.write_all(s.as_bytes()),
                Output::Json(v) => writeln!(stdout, "{}", serde_json::to_string_pretty(&v).expect("json")),
            };
            code
        }
        Err(f) => {
            if json_mode {
                println!("{}", serde_json::to_string_pretty(&f.to_json()).expect("json"));
            } else {
                eprintln!("error: {}", f.message);
                if let Some(items) = f.details.as_array() {
                    for d in items {
                        if let (Some(line), Some(col)) = (d.get("line"), d.get("column")) {
                            let msg = d.get("message").and_then(Value::as_str).unwrap_or_default();
                            match d.get("file").and_then(Value::as_str) {
                                Some(file) => eprintln!("  {file}:{line}:{col}: {msg}"),
                                None => eprintln!("  at {line}:{col}: {msg}"),
                            }
                        }
                    }
                }
            }
            1
        }
    }
}

fn project_at(cli_project: Option<&Path>, plan: Option<&Path>) -> Result<Project, Failure> {
    if let Some(p) = plan {
        return Ok(if p.is_dir() { Project::open(p)? } else { Project::from_plan_path(p)? });
    }
    let root = match cli_project {
        Some(p) => p.to_path_buf(),
        None => std::env::current_dir().map_err(|e| Failure::new(500, "io_error", e.to_string()))?,
    };
    Ok(Project::open(root)?)
}

fn run_id(s: &str) -> Result<RunId, Failure> {
    RunId::parse(s).ok_or_else(|| Failure::not_found("run", s))
}

fn addr(s: &str) -> Result<NodeAddr, Failure> {
    s.parse()
        .map_err(|e: nc_core::flow::AddrParseError| Failure::bad_request(format!("bad address `{s}`: {}", e.reason)))
}

fn agents(path: Option<PathBuf>) -> AgentSource {
    path.map(AgentSource::File).unwrap_or_default()
}

fn finish(run: &mut nc_core::orchestrator::Run, json_mode: bool) -> Result<(Output, i32), Failure> {
    let summary = run.run_to_idle()?;
    let code = if summary.phase == nc_core::events::RunPhase::Failed { 2 } else { 0 };
    let out = if json_mode {
        Output::Json(ops::summary_json(&summary, run.blackboard()))
    } else {
        Output::Text(ops::summary_text(&summary, run.blackboard()))
    };
    Ok((out, code))
}

fn lines(entries: &[Value], kind: TraceKind) -> String {
    let s = |v: &Value, k: &str| v.get(k).map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string())).unwrap_or_default();
    let mut out = String::new();
    for e in entries {
        match kind {
            TraceKind::Agent => {
                out.push_str(&format!(
                    "{} {} {{{}}} agent={} {}ms\n",
                    s(e, "at"),
                    s(e, "address"),
                    s(e, "concept"),
                    s(e, "agent"),
                    s(e, "duration_ms")
                ));
                for key in ["prompt", "response", "error"] {
                    if let Some(text) = e.get(key).and_then(Value::as_str) {
                        out.push_str(&format!("  {key}:\n"));
                        for l in text.lines() {
                            out.push_str(&format!("    {l}\n"));
                        }
                    }
                }
            }
            TraceKind::Data => {
                out.push_str(&format!("{} {{{}}}\n", s(e, "address"), s(e, "concept")));
                for input in e.get("inputs").and_then(Value::as_array).into_iter().flatten() {
                    out.push_str(&format!("  in  {} = {}\n", s(input, "name"), reference_text(input.get("reference"))));
                }
                out.push_str(&format!("  out {}\n", reference_text(e.get("output").and_then(|o| o.get("reference")))));
            }
            TraceKind::Orchestration => {
                let addr = e.get("address").and_then(Value::as_str).unwrap_or("-");
                let detail = e.get("detail").filter(|d| !d.is_null()).map(|d| d.to_string()).unwrap_or_default();
                out.push_str(&format!("{} {:<8} {} {}\n", s(e, "at"), s(e, "event"), addr, detail).trim_end().to_string());
                out.push('\n');
            }
        }
    }
    out
}

fn reference_text(v: Option<&Value>) -> String {
    v.and_then(|v| nc_core::Reference::from_json_value(v).ok())
        .map(|r| crate::views::render(&r, TensorView::List).trim_end().replace('\n', "; "))
        .unwrap_or_else(|| "?".into())
}

pub fn execute(cli: Cli) -> Result<(Output, i32), Failure> {
    let json_mode = cli.json;
    let open = || -> Result<Workspace, Failure> { Workspace::open(project_at(cli.project.as_deref(), None)?) };
    let text = |s: String| Ok((Output::Text(s), 0));
    let value = |v: Value| Ok((Output::Json(v), 0));
    match cli.command {
        Command::Compile { ref plan } => {
            let ws = Workspace::open(project_at(cli.project.as_deref(), plan.as_deref())?)?;
            let (compiled, written) = ws.build().map_err(|f| {
                if f.code == "scope_error" {
                    let sites = scope_details_for(&ws, &f);
                    f.with_details(sites)
                } else {
                    f
                }
            })?;
            let s = &compiled.plan.stats;
            if json_mode {
                return value(json!({
                    "plan": compiled.plan.name,
                    "artifacts": written,
                    "nodes": compiled.plan.nodes.len(),
                    "semantic": s.semantic_count,
                    "syntactic": s.syntactic_count,
                }));
            }
            let mut out = format!(
                "compiled {} nodes ({} semantic, {} syntactic)\n",
                compiled.plan.nodes.len(),
                s.semantic_count,
                s.syntactic_count
            );
            for p in written {
                out.push_str(&format!("wrote {}\n", p.display()));
            }
            text(out)
        }
        Command::Narrate { ref plan } => {
            let ws = Workspace::open(project_at(cli.project.as_deref(), plan.as_deref())?)?;
            let narrative = ws.compile()?.narrative;
            if json_mode {
                return value(json!({ "narrative": narrative }));
            }
            text(narrative)
        }
        Command::Stats { ref plan } => {
            let ws = Workspace::open(project_at(cli.project.as_deref(), plan.as_deref())?)?;
            let s = ws.stats()?;
            if json_mode {
                return value(json!(s));
            }
            text(format!(
                "semantic {}\nsyntactic {}\ntotal {}\nsyntactic_fraction {:.4}\n",
                s.semantic, s.syntactic, s.total, s.syntactic_fraction
            ))
        }
        Command::Run {
            ref inputs,
            ref breakpoints,
            ref agents,
            workers,
        } => {
            let ws = open()?;
            let inputs = inputs.iter().map(|a| ops::parse_input_arg(a)).collect::<Result<_, _>>()?;
            let req = StartRequest {
                inputs,
                breakpoints: breakpoints.clone(),
                agents: self::agents(agents.clone()),
                run_id: None,
            };
            let mut run = ws.start(req, workers, None)?;
            finish(&mut run, json_mode)
        }
        Command::Resume { ref run, ref agents, workers } => {
            let ws = open()?;
            let mut run = ws.reopen(&run_id(run)?, &self::agents(agents.clone()), workers, None)?;
            finish(&mut run, json_mode)
        }
        Command::Inspect { ref run, ref address, view } => {
            let ws = open()?;
            let run = run_id(run)?;
            match address {
                None => {
                    let values = ws.values(&run)?;
                    let map: serde_json::Map<String, Value> =
                        values.iter().map(|(a, r)| (a.to_string(), r.to_json_value())).collect();
                    value(Value::Object(map))
                }
                Some(a) => {
                    let t = ws.tensor(&run, &addr(a)?, view)?;
                    if json_mode {
                        return value(json!(t));
                    }
                    text(t.rendered)
                }
            }
        }
        Command::Override { ref run, ref address, value: ref file } => {
            let ws = open()?;
            let v = ops::read_value_file(file)?;
            let o = ws.override_value(&run_id(run)?, &addr(address)?, v)?;
            if json_mode {
                return value(json!(o));
            }
            let mut out = format!("run {} overrides {address} in {run}: {} stale\n", o.run_id, o.stale.len());
            for a in &o.stale {
                out.push_str(&format!("stale {a}\n"));
            }
            for a in &o.dropped {
                out.push_str(&format!("dropped {a}\n"));
            }
            text(out)
        }
        Command::Fork { ref run, ref address } => {
            let ws = open()?;
            let new = ws.fork(&run_id(run)?, &addr(address)?)?;
            if json_mode {
                return value(json!({ "run_id": new }));
            }
            text(format!("{new}\n"))
        }
        Command::Trace {
            ref run,
            view,
            ref from,
            ref to,
        } => {
            let ws = open()?;
            let kind = match view {
                TraceView::Agent => TraceKind::Agent,
                TraceView::Data => TraceKind::Data,
                TraceView::Orch => TraceKind::Orchestration,
            };
            let range = FlowRange::parse(from.as_deref(), to.as_deref()).map_err(Failure::bad_request)?;
            let entries = ws.trace(&run_id(run)?, kind, &range)?;
            if json_mode {
                return value(json!(entries));
            }
            text(lines(&entries, kind))
        }
        Command::Runs => {
            let runs = open()?.runs()?;
            if json_mode {
                return value(json!(runs));
            }
            let mut out = String::new();
            for r in runs {
                out.push_str(&format!(
                    "{} {} {} {}\n",
                    r["run_id"].as_str().unwrap_or_default(),
                    r["phase"].as_str().unwrap_or_default(),
                    r["origin"]["kind"].as_str().unwrap_or_default(),
                    r["created_at"].as_str().unwrap_or_default()
                ));
            }
            text(out)
        }
        Command::Events { ref run, since } => {
            let events = open()?.events(&run_id(run)?, since)?;
            if json_mode {
                return value(json!(events));
            }
            let mut out = String::new();
            for e in events {
                out.push_str(&serde_json::to_string(&e).expect("event serializes"));
                out.push('\n');
            }
            text(out)
        }
        Command::Cases {
            ref run,
            ref address,
            ref status,
        } => {
            let filter = CaseFilter {
                run: run.as_deref().map(run_id).transpose()?,
                address: address.as_deref().map(addr).transpose()?,
                status: status.as_deref().map(service::parse_status).transpose()?,
                ..Default::default()
            };
            let cases = open()?.cases(&filter)?;
            if json_mode {
                return value(json!(cases));
            }
            let mut out = String::new();
            for c in cases {
                out.push_str(&format!("{} {:>4} {} {}\n", c.run_id, c.seq, c.address, c.created_at.to_rfc3339()));
            }
            text(out)
        }
        Command::Serve {
            addr,
            ref library,
            ref app,
            workers,
        } => {
            let mut projects = Vec::new();
            if let Ok(p) = project_at(cli.project.as_deref(), None) {
                projects.push(p.root().to_path_buf());
            }
            let config = ServiceConfig {
                library: library.clone().unwrap_or_else(|| PathBuf::from("library")),
                projects,
                app_dir: app.clone(),
                workers,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new(500, "runtime", e.to_string()))?;
            rt.block_on(service::serve(config, addr))?;
            text(String::new())
        }
    }
}

/// Scope diagnostics with the plan file prefixed to each site.
fn scope_details_for(ws: &Workspace, f: &Failure) -> Value {
    let file = ws.project.plan_path();
    let mut details = f.details.clone();
    if let Some(items) = details.as_array_mut() {
        for d in items {
            d["file"] = json!(file);
        }
    }
    if details.is_null() {
        return scope_details(&[]);
    }
    details
}
