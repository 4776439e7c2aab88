//! Operations behind both the command line and the HTTP service.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nc_core::compiler::Derivation;
use nc_core::events::{fold, RunEvent, TraceKind};
use nc_core::orchestrator::agents::AgentConfig;
use nc_core::orchestrator::{AgentRegistry, Blackboard, EventListener, Run, RunContext, RunOptions, RunSummary};
use nc_core::project::{Compiled, Project};
use nc_core::reference::{Digest, Reference, Resolver};
use nc_core::store::{fork, override_value, CaseFilter, CaseStore, CaseSummary, OverrideOutcome, RunId, RunRecord};
use nc_core::{FlowIndex, NodeAddr};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Failure;
use crate::views::{self, FlowRange, TensorView};

/// Where a run's agents come from.
#[derive(Debug, Clone, Default)]
pub enum AgentSource {
    /// The project's `agents.json`.
    #[default]
    Project,
    File(PathBuf),
    Inline(AgentConfig),
}

#[derive(Debug, Clone, Default)]
pub struct StartRequest {
    /// Overrides the project's `inputs.json`, keyed by concept name or flow
    /// index.
    pub inputs: BTreeMap<String, Reference>,
    pub breakpoints: Vec<String>,
    pub agents: AgentSource,
    pub run_id: Option<RunId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanStatsView {
    pub semantic: usize,
    pub syntactic: usize,
    pub total: usize,
    pub syntactic_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorOut {
    pub run_id: RunId,
    pub address: NodeAddr,
    /// Checkpoint holding the value; absent for values a derived run
    /// inherited from its parent.
    pub checkpoint: Option<u64>,
    pub digest: Digest,
    pub view: &'static str,
    pub rendered: String,
    pub reference: Value,
}

/// A project with its case store opened once.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub project: Project,
    pub store: Arc<CaseStore>,
}

impl Workspace {
    pub fn open(project: Project) -> Result<Self, Failure> {
        let store = Arc::new(project.store()?);
        Ok(Workspace { project, store })
    }

    pub fn compile(&self) -> Result<Compiled, Failure> {
        Ok(self.project.compile()?)
    }

    /// Compiles and writes the build artifacts.
    pub fn build(&self) -> Result<(Compiled, Vec<PathBuf>), Failure> {
        let compiled = self.compile()?;
        let written = self.project.write_artifacts(&compiled)?;
        Ok((compiled, written))
    }

    pub fn stats(&self) -> Result<PlanStatsView, Failure> {
        let s = self.compile()?.plan.stats;
        Ok(PlanStatsView {
            semantic: s.semantic_count,
            syntactic: s.syntactic_count,
            total: s.total(),
            syntactic_fraction: s.syntactic_fraction(),
        })
    }

    /// `fresh`, `stale` or `absent`.
    pub fn artifact_state(&self) -> Result<&'static str, Failure> {
        if !self.project.build_dir().join(nc_core::project::NCD_FILE).is_file() {
            return Ok("absent");
        }
        Ok(if self.project.artifacts_fresh()? { "fresh" } else { "stale" })
    }

    pub fn registry(&self, source: &AgentSource) -> Result<AgentRegistry, Failure> {
        let agent_err = |e: nc_core::orchestrator::AgentError| Failure::new(422, "agent_config", e.to_string());
        match source {
            AgentSource::Project => Ok(self.project.agents()?),
            AgentSource::File(path) => {
                let cfg = AgentConfig::load(path).map_err(agent_err)?;
                let base = path.parent().unwrap_or(Path::new("."));
                AgentRegistry::from_config(&cfg, base).map_err(agent_err)
            }
            AgentSource::Inline(cfg) => AgentRegistry::from_config(cfg, self.project.root()).map_err(agent_err),
        }
    }

    pub fn resolver(&self) -> Arc<dyn Resolver> {
        Arc::new(self.project.resolver())
    }

    pub fn context(&self, agents: AgentRegistry, workers: usize, listener: Option<EventListener>) -> RunContext {
        let mut ctx = RunContext::new(self.store.clone(), Arc::new(agents), self.resolver());
        ctx.output_dir = Some(self.project.output_dir());
        ctx.workers = workers.max(1);
        ctx.listener = listener;
        ctx
    }

    /// Records a run with its grounds completed; the caller drives it.
    pub fn start(&self, req: StartRequest, workers: usize, listener: Option<EventListener>) -> Result<Run, Failure> {
        let compiled = self.compile()?;
        let agents = self.registry(&req.agents)?;
        let inputs = merge_inputs(&compiled, self.project.default_inputs()?, req.inputs);
        let breakpoints = req
            .breakpoints
            .iter()
            .map(|b| {
                b.parse::<FlowIndex>()
                    .map_err(|e| Failure::bad_request(format!("bad breakpoint `{b}`: {}", e.reason)))
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        let options = RunOptions {
            inputs,
            breakpoints,
            run_id: req.run_id,
        };
        Ok(Run::start(self.context(agents, workers, listener), compiled.bundle, options)?)
    }

    /// Reopens a stopped or derived run, releasing paused instances.
    pub fn reopen(&self, run: &RunId, agents: &AgentSource, workers: usize, listener: Option<EventListener>) -> Result<Run, Failure> {
        let ctx = self.context(self.registry(agents)?, workers, listener);
        Ok(Run::resume(ctx, run)?)
    }

    pub fn fork(&self, run: &RunId, address: &NodeAddr) -> Result<RunId, Failure> {
        Ok(fork(&self.store, self.resolver(), run, address)?)
    }

    pub fn override_value(&self, run: &RunId, address: &NodeAddr, value: Reference) -> Result<OverrideOutcome, Failure> {
        Ok(override_value(&self.store, run, address, value)?)
    }

    pub fn record(&self, run: &RunId) -> Result<RunRecord, Failure> {
        Ok(self.store.get_run(run)?)
    }

    pub fn has_run(&self, run: &RunId) -> bool {
        self.store.get_run(run).is_ok()
    }

    /// Latest value of every completed instance.
    pub fn values(&self, run: &RunId) -> Result<BTreeMap<NodeAddr, Reference>, Failure> {
        let record = self.record(run)?;
        let snap = self.store.latest_state(&record)?;
        snap.concepts
            .iter()
            .map(|(a, d)| Ok((a.clone(), self.store.get_object(d)?)))
            .collect()
    }

    /// Value of `address` at its latest checkpoint in `run`, or inherited
    /// from the run's base.
    pub fn tensor(&self, run: &RunId, address: &NodeAddr, view: TensorView) -> Result<TensorOut, Failure> {
        let (checkpoint, value) = match self.store.retrieve(run, address) {
            Ok(m) => {
                let v = m.concepts.get(address).cloned();
                (Some(m.checkpoint.seq), v)
            }
            Err(nc_core::store::StoreError::NoCheckpoint { .. }) => (None, self.values(run)?.remove(address)),
            Err(e) => return Err(e.into()),
        };
        let Some(value) = value else {
            return Err(Failure::new(404, "no_value", format!("{address} has no value in run {run}"))
                .with_details(json!({ "run": run, "address": address })));
        };
        Ok(TensorOut {
            run_id: run.clone(),
            address: address.clone(),
            checkpoint,
            digest: value.digest(),
            view: match view {
                TensorView::Table => "table",
                TensorView::List => "list",
                TensorView::Json => "json",
            },
            rendered: views::render(&value, view),
            reference: value.to_json_value(),
        })
    }

    pub fn events(&self, run: &RunId, since: u64) -> Result<Vec<RunEvent>, Failure> {
        self.record(run)?;
        Ok(self.store.events(run, since)?)
    }

    /// Blackboard from the event log, or from the stored state for a
    /// derived run that has not been opened yet.
    pub fn board(&self, run: &RunId) -> Result<Blackboard, Failure> {
        let record = self.record(run)?;
        let events = self.store.events(run, 0)?;
        if events.is_empty() {
            return Ok(self.store.latest_state(&record)?.blackboard);
        }
        Ok(fold(&events))
    }

    pub fn graph(&self, run: &RunId) -> Result<Value, Failure> {
        let record = self.record(run)?;
        let plan = self.store.get_plan(&record.plan_digest)?.compiled_plan();
        let board = self.board(run)?;
        let nodes: Vec<Value> = plan
            .nodes
            .values()
            .map(|n| {
                let instances: Vec<Value> = board
                    .iter()
                    .filter(|(a, _)| a.flow == n.flow_index)
                    .map(|(a, s)| json!({ "address": a, "status": s }))
                    .collect();
                json!({
                    "flow": n.flow_index,
                    "concept": n.concept_name,
                    "kind": n.kind,
                    "ground": matches!(n.derivation, Derivation::Ground { .. }),
                    "depth": n.flow_index.depth(),
                    "iterates": n.iterates.as_ref().map(|l| &l.axis),
                    "instances": instances,
                })
            })
            .collect();
        let edges: Vec<Value> = plan
            .dep_graph
            .iter()
            .map(|e| json!({ "from": e.from, "to": e.to }))
            .collect();
        Ok(json!({
            "run_id": record.run_id,
            "plan": record.plan_name,
            "phase": record.phase,
            "origin": record.origin,
            "nodes": nodes,
            "edges": edges,
            "counts": board.counts(),
        }))
    }

    pub fn checkpoints(&self, run: &RunId) -> Result<Vec<Value>, Failure> {
        let record = self.record(run)?;
        let plan = self.store.get_plan(&record.plan_digest)?;
        Ok(self
            .store
            .checkpoints(run)?
            .into_iter()
            .map(|cp| {
                let concept = plan.concept(&cp.address.flow).map(|c| c.name.clone());
                json!({
                    "seq": cp.seq,
                    "address": cp.address,
                    "concept": concept,
                    "created_at": cp.created_at,
                    "counts": cp.blackboard.counts(),
                })
            })
            .collect())
    }

    /// Trace entries in `range`. Data entries gain the input values their
    /// digests name.
    pub fn trace(&self, run: &RunId, kind: TraceKind, range: &FlowRange) -> Result<Vec<Value>, Failure> {
        self.record(run)?;
        let mut entries = range.filter(self.store.traces(run, kind)?);
        if kind == TraceKind::Data {
            for e in &mut entries {
                let Some(inputs) = e.get_mut("inputs").and_then(Value::as_array_mut) else {
                    continue;
                };
                for input in inputs {
                    let digest = input.get("digest").and_then(Value::as_str).and_then(Digest::parse);
                    if let Some(r) = digest.and_then(|d| self.store.get_object(&d).ok()) {
                        input["reference"] = r.to_json_value();
                    }
                }
            }
        }
        Ok(entries)
    }

    pub fn runs(&self) -> Result<Vec<Value>, Failure> {
        Ok(self.store.runs()?.iter().map(run_view).collect())
    }

    pub fn cases(&self, filter: &CaseFilter) -> Result<Vec<CaseSummary>, Failure> {
        Ok(self.store.list_cases(filter)?)
    }
}

pub fn run_view(r: &RunRecord) -> Value {
    json!({
        "run_id": r.run_id,
        "plan": r.plan_name,
        "phase": r.phase,
        "origin": r.origin,
        "created_at": r.created_at,
        "updated_at": r.updated_at,
        "breakpoints": r.breakpoints,
    })
}

/// Default inputs with explicit ones laid over them. An explicit input
/// replaces the default for the same ground whether either is keyed by name
/// or by flow index.
pub fn merge_inputs(
    compiled: &Compiled,
    defaults: BTreeMap<String, Reference>,
    explicit: BTreeMap<String, Reference>,
) -> BTreeMap<String, Reference> {
    let ground_of = |key: &str| -> Option<FlowIndex> {
        compiled
            .plan
            .nodes
            .values()
            .find(|n| {
                matches!(n.derivation, Derivation::Ground { literal: None })
                    && (n.concept_name == key || n.flow_index.to_string() == key)
            })
            .map(|n| n.flow_index.clone())
    };
    let covered: BTreeSet<FlowIndex> = explicit.keys().filter_map(|k| ground_of(k)).collect();
    let mut out: BTreeMap<String, Reference> = defaults
        .into_iter()
        .filter(|(k, _)| ground_of(k).is_none_or(|f| !covered.contains(&f)))
        .collect();
    out.extend(explicit);
    out
}

/// `name=text`, `name=@file` (a reference JSON file, or any other file as
/// text) or `name=json:<value>`.
pub fn parse_input_arg(arg: &str) -> Result<(String, Reference), Failure> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Failure::bad_request(format!("input `{arg}` must look like name=value")))?;
    let value = if let Some(path) = raw.strip_prefix('@') {
        read_value_file(Path::new(path))?
    } else if let Some(text) = raw.strip_prefix("json:") {
        let v: Value = serde_json::from_str(text).map_err(|e| Failure::bad_request(format!("input `{key}`: {e}")))?;
        Reference::from_input_value(&v)?
    } else {
        Reference::text(raw)
    };
    Ok((key.to_string(), value))
}

/// A JSON file holding a reference (canonical or lenient form); any file
/// that is not JSON is read as one text cell.
pub fn read_value_file(path: &Path) -> Result<Reference, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::bad_request(format!("{}: {e}", path.display())).with_details(json!({ "path": path })))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(v) => Ok(Reference::from_input_value(&v)?),
        Err(_) => Ok(Reference::text(text)),
    }
}

/// Statuses and counters of a finished session, one line per instance.
pub fn summary_text(summary: &RunSummary, board: &Blackboard) -> String {
    let mut out = String::new();
    for (addr, status) in board.iter() {
        out.push_str(&format!("{addr:<16} {status}\n"));
    }
    for (addr, err) in &summary.failures {
        out.push_str(&format!("failed {addr}: {err}\n"));
    }
    let c = &summary.counters;
    out.push_str(&format!(
        "run {} {}: executed {} semantic_calls {} transmutations {} failures {}\n",
        summary.run_id, summary.phase, c.executed, c.semantic_calls, c.transmutations, c.failures
    ));
    out
}

pub fn summary_json(summary: &RunSummary, board: &Blackboard) -> Value {
    let mut v = serde_json::to_value(summary).expect("summary serializes");
    v["statuses"] = serde_json::to_value(board.as_map()).expect("board serializes");
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_args() {
        let (k, v) = parse_input_arg("topic=tide pools").unwrap();
        assert_eq!((k.as_str(), v), ("topic", Reference::text("tide pools")));
        let (_, v) = parse_input_arg("n=json:3").unwrap();
        assert_eq!(v.as_scalar().unwrap().render(), "3");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        fs::write(&p, Reference::list("x", vec![]).unwrap().to_canonical_json()).unwrap();
        let (_, v) = parse_input_arg(&format!("x=@{}", p.display())).unwrap();
        assert_eq!(v.axis_len("x"), Some(0));
        let t = dir.path().join("notes.md");
        fs::write(&t, "# heading\n").unwrap();
        let (_, v) = parse_input_arg(&format!("x=@{}", t.display())).unwrap();
        assert_eq!(v, Reference::text("# heading\n"));
        assert!(parse_input_arg("novalue").is_err());
    }

    #[test]
    fn explicit_inputs_replace_defaults_by_name_or_flow() {
        let dir = tempfile::tempdir().unwrap();
        let project = Project::create(dir.path(), "{c}\n    <= \"use\"({x})\n    {x}\n", &BTreeMap::new(), None).unwrap();
        let compiled = project.compile().unwrap();
        let defaults = BTreeMap::from([("x".to_string(), Reference::text("old"))]);
        let explicit = BTreeMap::from([("1.1".to_string(), Reference::text("new"))]);
        let merged = merge_inputs(&compiled, defaults.clone(), explicit);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged["1.1"], Reference::text("new"));
        assert_eq!(merge_inputs(&compiled, defaults, BTreeMap::new())["x"], Reference::text("old"));
    }
}
