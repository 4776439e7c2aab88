//! Executes an activated plan over node instances.
//!
//! Instances are flow indices qualified by iteration (`1.3.2[i=4]`). An
//! instance becomes Ready once every instance it reads has Completed; the
//! waitlist dispatches the lowest Ready address first. A loop expands its
//! body when its collection completes, and the loop node itself runs once
//! after every iteration with body values stacked along the collection's
//! axis. Every completion is retained as a checkpoint in the case store.

pub mod agents;
mod blackboard;
pub mod builtins;
mod plan;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use agents::{AgentError, AgentRegistry};
pub use blackboard::{Blackboard, Status, Waitlist};
pub use builtins::OperatorError;
pub use plan::{ground_value, is_ground, Expansions, RuntimePlan};

use crate::compiler::{Derivation, InputSource, OpSpec, PlanBundle};
use crate::events::{EventBody, RunEvent, RunPhase, TraceKind};
use crate::flow::{FlowIndex, NodeAddr};
use crate::reference::{transmute, Cell, Reference, ReferenceError, Resolver};
use crate::store::{
    CaseStore, Checkpoint, EnvEntry, EnvMap, RunBase, RunId, RunOrigin, RunRecord, SessionState, StoreError,
    CHECKPOINT_SCHEMA,
};

/// Failure of a single node instance. The run continues around it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("collection for loop {0} is a scalar; nothing to iterate")]
    MissingLoopAxis(NodeAddr),
    #[error("input {0} has no value")]
    MissingValue(NodeAddr),
    #[error("ground {0} cannot be executed")]
    NotExecutable(NodeAddr),
}

/// Errors that stop a run from starting or continuing.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Agents(#[from] AgentError),
    #[error("no agent rule covers semantic node {0}")]
    UncoveredSemanticNode(FlowIndex),
    #[error("missing run input for {{{0}}}")]
    MissingGroundInput(String),
    #[error("no ground input named `{0}`")]
    UnknownInput(String),
    #[error("no node {0} for breakpoint")]
    UnknownBreakpoint(FlowIndex),
    #[error("run {0} has finished; fork or override it instead")]
    Terminal(RunId),
}

pub type EventListener = Arc<dyn Fn(&RunEvent) + Send + Sync>;

/// Services shared by runs.
#[derive(Clone)]
pub struct RunContext {
    pub store: Arc<CaseStore>,
    pub agents: Arc<AgentRegistry>,
    pub resolver: Arc<dyn Resolver>,
    /// Where `save` writes; unset disables it.
    pub output_dir: Option<PathBuf>,
    /// Ready instances executed concurrently per step.
    pub workers: usize,
    pub listener: Option<EventListener>,
}

impl RunContext {
    pub fn new(store: Arc<CaseStore>, agents: Arc<AgentRegistry>, resolver: Arc<dyn Resolver>) -> Self {
        RunContext {
            store,
            agents,
            resolver,
            output_dir: None,
            workers: 1,
            listener: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Values for ground inputs, keyed by concept name or flow index.
    pub inputs: BTreeMap<String, Reference>,
    pub breakpoints: BTreeSet<FlowIndex>,
    pub run_id: Option<RunId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunCounters {
    /// Instances dispatched (grounds excluded).
    pub executed: usize,
    pub semantic_calls: usize,
    pub transmutations: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: RunId,
    pub phase: RunPhase,
    pub counters: RunCounters,
    pub counts: BTreeMap<Status, usize>,
    pub failures: BTreeMap<NodeAddr, String>,
    pub paused: Vec<NodeAddr>,
}

/// `prov://` from the plan's provisions, everything else from the host.
pub struct PlanResolver {
    provisions: BTreeMap<String, String>,
    fallback: Arc<dyn Resolver>,
}

impl PlanResolver {
    pub fn new(bundle: &PlanBundle, fallback: Arc<dyn Resolver>) -> Self {
        PlanResolver {
            provisions: bundle.provision_texts(),
            fallback,
        }
    }
}

impl Resolver for PlanResolver {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, ReferenceError> {
        if let Some(name) = uri.strip_prefix("prov://") {
            if let Some(text) = self.provisions.get(name) {
                return Ok(text.as_bytes().to_vec());
            }
        }
        self.fallback.fetch(uri)
    }
}

/// Result of executing one instance, applied to the run afterwards.
struct Outcome {
    result: Result<Reference, NodeError>,
    inputs: Vec<(String, Reference)>,
    env: EnvMap,
    agent_trace: Option<Value>,
    transmutations: usize,
    semantic: bool,
}

/// Number of iterations a collection value yields for a loop.
pub fn iteration_count(plan: &RuntimePlan, loop_addr: &NodeAddr, collection: &Reference) -> Result<usize, NodeError> {
    let axis = plan
        .iteration_axis(&loop_addr.flow, collection)
        .ok_or_else(|| NodeError::MissingLoopAxis(loop_addr.clone()))?;
    Ok(collection.axis_len(&axis).unwrap_or(0))
}

/// Expansions implied by completed collections.
pub fn derive_expansions(
    plan: &RuntimePlan,
    board: &Blackboard,
    mut value: impl FnMut(&NodeAddr) -> Option<Reference>,
) -> Expansions {
    let mut out = Expansions::new();
    for (addr, _) in board.iter() {
        let Some(spec) = plan.node(&addr.flow).and_then(|n| n.iterates.as_ref()) else {
            continue;
        };
        let c = NodeAddr::new(spec.collection.clone(), addr.iters.clone());
        if !board.is_completed(&c) {
            continue;
        }
        if let Some(n) = value(&c).and_then(|v| iteration_count(plan, addr, &v).ok()) {
            out.insert(addr.clone(), n);
        }
    }
    out
}

/// Every instance that transitively reads `from`, excluding `from`.
pub fn instance_closure(plan: &RuntimePlan, board: &Blackboard, expansions: &Expansions, from: &NodeAddr) -> BTreeSet<NodeAddr> {
    let mut consumers: BTreeMap<NodeAddr, Vec<NodeAddr>> = BTreeMap::new();
    for (addr, _) in board.iter() {
        if let Some(deps) = plan.instance_deps(addr, expansions) {
            for d in deps {
                consumers.entry(d).or_default().push(addr.clone());
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![from.clone()];
    while let Some(a) = stack.pop() {
        for c in consumers.get(&a).into_iter().flatten() {
            if seen.insert(c.clone()) {
                stack.push(c.clone());
            }
        }
    }
    seen.remove(from);
    seen
}

fn validate_agents(ctx: &RunContext, plan: &RuntimePlan) -> Result<(), RunError> {
    ctx.agents.validate(&plan.plan).map_err(|e| match e {
        AgentError::NoRule(f) => RunError::UncoveredSemanticNode(f),
        other => RunError::Agents(other),
    })
}

pub struct Run {
    ctx: RunContext,
    plan: Arc<RuntimePlan>,
    record: RunRecord,
    resolver: Arc<dyn Resolver>,
    inputs: BTreeMap<String, Reference>,
    board: Blackboard,
    values: BTreeMap<NodeAddr, Reference>,
    expansions: Expansions,
    env: EnvMap,
    env_pending: EnvMap,
    waitlist: Waitlist,
    failures: BTreeMap<NodeAddr, String>,
    counters: RunCounters,
    next_event: u64,
    next_checkpoint: u64,
    last_checkpoint: Option<u64>,
}

impl std::fmt::Debug for Run {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Run")
            .field("run_id", &self.record.run_id)
            .field("board", &self.board)
            .finish()
    }
}

impl Run {
    /// Records a fresh run and completes its grounds.
    pub fn start(ctx: RunContext, bundle: PlanBundle, options: RunOptions) -> Result<Run, RunError> {
        let plan = Arc::new(RuntimePlan::new(bundle));
        validate_agents(&ctx, &plan)?;
        for b in &options.breakpoints {
            if plan.node(b).is_none() {
                return Err(RunError::UnknownBreakpoint(b.clone()));
            }
        }
        let mut accepted = BTreeSet::new();
        for node in plan.nodes() {
            if matches!(node.derivation, Derivation::Ground { literal: None }) {
                let key = [node.flow_index.to_string(), node.concept_name.clone()]
                    .into_iter()
                    .find(|k| options.inputs.contains_key(k))
                    .ok_or_else(|| RunError::MissingGroundInput(node.concept_name.clone()))?;
                accepted.insert(key);
            }
        }
        if let Some(extra) = options.inputs.keys().find(|k| !accepted.contains(*k)) {
            return Err(RunError::UnknownInput(extra.clone()));
        }
        let store = ctx.store.clone();
        let plan_digest = store.put_plan(&plan.bundle)?;
        let mut input_digests = BTreeMap::new();
        for (k, v) in &options.inputs {
            input_digests.insert(k.clone(), store.put_object(v)?);
        }
        let now = Utc::now();
        let record = RunRecord {
            run_id: options.run_id.unwrap_or_else(RunId::generate),
            plan_digest,
            plan_name: plan.plan.name.clone(),
            origin: RunOrigin::Fresh,
            created_at: now,
            updated_at: now,
            phase: RunPhase::Created,
            inputs: input_digests,
            breakpoints: options.breakpoints,
            released: BTreeSet::new(),
            base: RunBase::default(),
            session: None,
        };
        store.insert_run(&record)?;
        let mut run = Run::assemble(ctx, plan, record, options.inputs);
        run.orch_trace("start", None, json!({ "origin": "fresh" }))?;
        let top: Vec<NodeAddr> = run.plan.top_level().collect();
        for addr in &top {
            run.set_status(addr, Some(Status::Pending))?;
        }
        for addr in top {
            run.complete_if_ground(&addr)?;
        }
        run.reconcile_expansions()?;
        run.refresh_ready()?;
        run.save_session()?;
        Ok(run)
    }

    fn assemble(ctx: RunContext, plan: Arc<RuntimePlan>, record: RunRecord, inputs: BTreeMap<String, Reference>) -> Run {
        let resolver: Arc<dyn Resolver> = Arc::new(PlanResolver::new(&plan.bundle, ctx.resolver.clone()));
        Run {
            ctx,
            plan,
            record,
            resolver,
            inputs,
            board: Blackboard::new(),
            values: BTreeMap::new(),
            expansions: Expansions::new(),
            env: EnvMap::new(),
            env_pending: EnvMap::new(),
            waitlist: Waitlist::default(),
            failures: BTreeMap::new(),
            counters: RunCounters::default(),
            next_event: 0,
            next_checkpoint: 0,
            last_checkpoint: None,
        }
    }

    /// Reloads a recorded run from the store at its latest state.
    pub fn open(ctx: RunContext, run_id: &RunId) -> Result<Run, RunError> {
        let store = ctx.store.clone();
        let record = store.get_run(run_id)?;
        let bundle = store.get_plan(&record.plan_digest)?;
        let plan = Arc::new(RuntimePlan::new(bundle));
        validate_agents(&ctx, &plan)?;
        let snap = store.latest_state(&record)?;
        let mut inputs = BTreeMap::new();
        for (k, d) in &record.inputs {
            inputs.insert(k.clone(), store.get_object(d)?);
        }
        let mut run = Run::assemble(ctx, plan, record, inputs);
        for (addr, digest) in &snap.concepts {
            run.values.insert(addr.clone(), store.get_object(digest)?);
        }
        run.env = snap.env;
        run.last_checkpoint = snap.last_seq;
        run.next_checkpoint = snap.last_seq.map_or(0, |s| s + 1);
        let events = store.events(run_id, 0)?;
        run.next_event = events.len() as u64;
        let known = crate::events::fold(&events);
        run.board = known;
        for (addr, status) in snap.blackboard.iter() {
            let status = match status {
                Status::Running | Status::Ready => Status::Pending,
                s => s,
            };
            if run.board.get(addr) != Some(status) {
                run.set_status(addr, Some(status))?;
            }
        }
        let gone: Vec<NodeAddr> = run
            .board
            .iter()
            .filter(|(a, _)| !snap.blackboard.contains(a))
            .map(|(a, _)| a.clone())
            .collect();
        for addr in gone {
            run.set_status(&addr, None)?;
        }
        let pending: Vec<NodeAddr> = run.board.with_status(Status::Pending).cloned().collect();
        for addr in pending {
            run.complete_if_ground(&addr)?;
        }
        run.reconcile_expansions()?;
        run.refresh_ready()?;
        Ok(run)
    }

    /// Releases paused instances and continues a stopped run.
    pub fn resume(ctx: RunContext, run_id: &RunId) -> Result<Run, RunError> {
        let mut run = Run::open(ctx, run_id)?;
        let paused: Vec<NodeAddr> = run.board.with_status(Status::PausedAtBreakpoint).cloned().collect();
        if paused.is_empty() && run.record.phase.is_terminal() {
            return Err(RunError::Terminal(run_id.clone()));
        }
        for addr in paused {
            run.record.released.insert(addr.clone());
            run.orch_trace("release", Some(&addr), Value::Null)?;
            run.set_status(&addr, Some(Status::Ready))?;
            run.waitlist.push(addr);
        }
        Ok(run)
    }

    pub fn run_id(&self) -> &RunId {
        &self.record.run_id
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn plan(&self) -> &RuntimePlan {
        &self.plan
    }

    pub fn blackboard(&self) -> &Blackboard {
        &self.board
    }

    pub fn value(&self, addr: &NodeAddr) -> Option<&Reference> {
        self.values.get(addr)
    }

    pub fn values(&self) -> &BTreeMap<NodeAddr, Reference> {
        &self.values
    }

    pub fn env(&self) -> &EnvMap {
        &self.env
    }

    pub fn counters(&self) -> &RunCounters {
        &self.counters
    }

    pub fn waitlist(&self) -> &Waitlist {
        &self.waitlist
    }

    pub fn failures(&self) -> &BTreeMap<NodeAddr, String> {
        &self.failures
    }

    fn emit(&mut self, body: EventBody) -> Result<(), RunError> {
        let event = RunEvent {
            run_id: self.record.run_id.clone(),
            seq: self.next_event,
            body,
        };
        self.next_event += 1;
        self.ctx.store.append_event(&event)?;
        if let Some(listener) = &self.ctx.listener {
            listener(&event);
        }
        Ok(())
    }

    fn set_status(&mut self, addr: &NodeAddr, status: Option<Status>) -> Result<(), RunError> {
        match status {
            Some(s) => {
                self.board.set(addr.clone(), s);
            }
            None => {
                self.board.remove(addr);
            }
        }
        self.emit(EventBody::StatusChanged {
            address: addr.clone(),
            status,
        })
    }

    fn trace(&mut self, kind: TraceKind, entry: Value) -> Result<(), RunError> {
        self.ctx.store.append_trace(&self.record.run_id, kind, &entry)?;
        self.emit(EventBody::TraceAppended { trace: kind, entry })
    }

    fn orch_trace(&mut self, event: &str, addr: Option<&NodeAddr>, detail: Value) -> Result<(), RunError> {
        let entry = json!({
            "at": Utc::now(),
            "event": event,
            "address": addr.map(|a| a.to_string()),
            "detail": detail,
        });
        self.trace(TraceKind::Orchestration, entry)
    }

    fn input_for(&self, flow: &FlowIndex) -> Option<Reference> {
        let node = self.plan.node(flow)?;
        self.inputs
            .get(&flow.to_string())
            .or_else(|| self.inputs.get(&node.concept_name))
            .cloned()
    }

    fn complete_if_ground(&mut self, addr: &NodeAddr) -> Result<(), RunError> {
        let Some(node) = self.plan.node(&addr.flow) else {
            return Ok(());
        };
        if !is_ground(node) || self.board.is_completed(addr) {
            return Ok(());
        }
        let value = match ground_value(node) {
            Some(v) => v,
            None => self
                .input_for(&addr.flow)
                .ok_or_else(|| RunError::MissingGroundInput(node.concept_name.clone()))?,
        };
        self.complete(addr, value, &[])
    }

    /// Marks `addr` Completed with `value` and retains a checkpoint.
    fn complete(&mut self, addr: &NodeAddr, value: Reference, inputs: &[(String, Reference)]) -> Result<(), RunError> {
        let digest = self.ctx.store.put_object(&value)?;
        self.values.insert(addr.clone(), value.clone());
        self.set_status(addr, Some(Status::Completed))?;
        let seq = self.next_checkpoint;
        let checkpoint = Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            run_id: self.record.run_id.clone(),
            seq,
            address: addr.clone(),
            created_at: Utc::now(),
            blackboard: self.board.clone(),
            concepts_delta: BTreeMap::from([(addr.clone(), digest.clone())]),
            env_delta: std::mem::take(&mut self.env_pending),
        };
        self.ctx.store.append_checkpoint(&checkpoint)?;
        self.next_checkpoint += 1;
        self.last_checkpoint = Some(seq);
        self.emit(EventBody::CheckpointRetained {
            address: addr.clone(),
            checkpoint: seq,
        })?;
        let concept = self.plan.node(&addr.flow).map(|n| n.concept_name.clone()).unwrap_or_default();
        let data = json!({
            "at": Utc::now(),
            "address": addr.to_string(),
            "concept": concept,
            "inputs": inputs.iter().map(|(n, r)| json!({"name": n, "digest": r.digest()})).collect::<Vec<_>>(),
            "output": {"digest": digest, "reference": value.to_json_value()},
        });
        self.trace(TraceKind::Data, data)?;
        if let Some(loop_node) = self.plan.loop_of_collection(&addr.flow).cloned() {
            let loop_addr = NodeAddr::new(loop_node, addr.iters.clone());
            if self.board.contains(&loop_addr) {
                self.expand(&loop_addr, &value)?;
            }
        }
        Ok(())
    }

    fn fail(&mut self, addr: &NodeAddr, error: &NodeError) -> Result<(), RunError> {
        self.counters.failures += 1;
        self.failures.insert(addr.clone(), error.to_string());
        self.set_status(addr, Some(Status::Failed))?;
        self.orch_trace("fail", Some(addr), json!({ "error": error.to_string() }))
    }

    /// Creates body instances for a loop once its collection is known.
    fn expand(&mut self, loop_addr: &NodeAddr, collection: &Reference) -> Result<(), RunError> {
        let n = match iteration_count(&self.plan, loop_addr, collection) {
            Ok(n) => n,
            Err(e) => return self.fail(loop_addr, &e),
        };
        self.expansions.insert(loop_addr.clone(), n);
        let body: Vec<FlowIndex> = self.plan.body(&loop_addr.flow).to_vec();
        let mut created = Vec::new();
        for i in 0..n as u32 {
            for b in &body {
                let mut iters = loop_addr.iters.clone();
                iters.push(i);
                let addr = NodeAddr::new(b.clone(), iters);
                if !self.board.contains(&addr) {
                    self.set_status(&addr, Some(Status::Pending))?;
                    created.push(addr);
                }
            }
        }
        self.orch_trace("expand", Some(loop_addr), json!({ "iterations": n, "created": created.len() }))?;
        created.sort();
        for addr in created {
            self.complete_if_ground(&addr)?;
        }
        Ok(())
    }

    /// Expands loops whose collection completed in an earlier session or in
    /// the run this one was derived from.
    fn reconcile_expansions(&mut self) -> Result<(), RunError> {
        loop {
            let todo: Vec<(NodeAddr, Reference)> = self
                .board
                .iter()
                .filter(|(a, _)| !self.expansions.contains_key(*a))
                .filter_map(|(a, _)| {
                    let spec = self.plan.node(&a.flow)?.iterates.as_ref()?;
                    let c = NodeAddr::new(spec.collection.clone(), a.iters.clone());
                    Some((a.clone(), self.values.get(&c)?.clone()))
                })
                .filter(|(a, _)| self.board.get(a) != Some(Status::Failed))
                .collect();
            if todo.is_empty() {
                return Ok(());
            }
            for (loop_addr, value) in todo {
                self.expand(&loop_addr, &value)?;
            }
        }
    }

    fn refresh_ready(&mut self) -> Result<(), RunError> {
        let candidates: Vec<NodeAddr> = self
            .board
            .iter()
            .filter(|(_, s)| matches!(s, Status::Pending | Status::Stale))
            .map(|(a, _)| a.clone())
            .collect();
        for addr in candidates {
            let Some(deps) = self.plan.instance_deps(&addr, &self.expansions) else {
                continue;
            };
            if deps.iter().all(|d| self.board.is_completed(d)) {
                self.set_status(&addr, Some(Status::Ready))?;
                self.waitlist.push(addr);
            }
        }
        Ok(())
    }

    fn value_of(&self, addr: &NodeAddr) -> Result<&Reference, NodeError> {
        self.values.get(addr).ok_or_else(|| NodeError::MissingValue(addr.clone()))
    }

    fn resolve_source(&self, addr: &NodeAddr, source: &InputSource) -> Result<Reference, NodeError> {
        let v = &addr.iters;
        match source {
            InputSource::Node(y) => {
                let dy = self.plan.node(y).map(|n| n.loop_depth()).unwrap_or(0);
                if dy <= v.len() {
                    return Ok(self.value_of(&NodeAddr::new(y.clone(), v[..dy].to_vec()))?.clone());
                }
                let axis = self
                    .plan
                    .node(&addr.flow)
                    .and_then(|n| n.iterates.as_ref())
                    .map(|s| s.axis.clone())
                    .ok_or_else(|| NodeError::MissingValue(NodeAddr::new(y.clone(), v.clone())))?;
                let n = self.expansions.get(addr).copied().unwrap_or(0);
                let mut items = Vec::with_capacity(n);
                for i in 0..n as u32 {
                    let mut w = v.clone();
                    w.push(i);
                    items.push(self.value_of(&NodeAddr::new(y.clone(), w))?.clone());
                }
                Ok(Reference::stack(&items, &axis)?)
            }
            InputSource::LoopElement { loop_node } => {
                let depth = self.plan.node(loop_node).map(|n| n.loop_depth()).unwrap_or(0);
                let spec = self
                    .plan
                    .node(loop_node)
                    .and_then(|n| n.iterates.as_ref())
                    .ok_or_else(|| NodeError::MissingValue(addr.clone()))?;
                let loop_addr = NodeAddr::new(loop_node.clone(), v[..depth].to_vec());
                let collection = self.value_of(&NodeAddr::new(spec.collection.clone(), v[..depth].to_vec()))?;
                let axis = self
                    .plan
                    .iteration_axis(loop_node, collection)
                    .ok_or(NodeError::MissingLoopAxis(loop_addr))?;
                Ok(collection.slice(&axis, v[depth] as usize)?)
            }
        }
    }

    /// Exactly the declared inputs of `addr`, in declaration order.
    pub fn assemble_inputs(&self, addr: &NodeAddr) -> Result<Vec<(String, Reference)>, NodeError> {
        let node = self
            .plan
            .node(&addr.flow)
            .ok_or_else(|| NodeError::MissingValue(addr.clone()))?;
        node.inputs()
            .iter()
            .map(|b| Ok((b.name.clone(), self.resolve_source(addr, &b.source)?)))
            .collect()
    }

    fn execute(&self, addr: &NodeAddr) -> Outcome {
        let mut out = Outcome {
            result: Err(NodeError::NotExecutable(addr.clone())),
            inputs: Vec::new(),
            env: EnvMap::new(),
            agent_trace: None,
            transmutations: 0,
            semantic: false,
        };
        let Some(node) = self.plan.node(&addr.flow) else {
            return out;
        };
        match &node.derivation {
            Derivation::Ground { .. } => {}
            Derivation::Value { source } => out.result = self.resolve_source(addr, source),
            Derivation::Functional { op, .. } => {
                let inputs = match self.assemble_inputs(addr) {
                    Ok(i) => i,
                    Err(e) => {
                        out.result = Err(e);
                        return out;
                    }
                };
                out.result = match op {
                    OpSpec::Builtin(b) => {
                        let env = builtins::BuiltinEnv {
                            output_dir: self.ctx.output_dir.as_deref(),
                        };
                        builtins::execute_builtin(*b, &inputs, &env).map_err(NodeError::from)
                    }
                    OpSpec::Instruction(instruction) => {
                        out.semantic = true;
                        self.execute_semantic(addr, &node.concept_name, instruction, &inputs, &mut out)
                    }
                };
                out.inputs = inputs;
            }
        }
        out
    }

    fn execute_semantic(
        &self,
        addr: &NodeAddr,
        concept: &str,
        instruction: &str,
        inputs: &[(String, Reference)],
        out: &mut Outcome,
    ) -> Result<Reference, NodeError> {
        let mut transmuted = Vec::with_capacity(inputs.len());
        for (name, r) in inputs {
            let t = r.try_map_cells(|cell| match cell {
                Cell::Sign(sign) => {
                    let t = transmute(sign, self.resolver.as_ref())?;
                    out.transmutations += 1;
                    out.env.insert(
                        sign.sign_id.clone(),
                        EnvEntry {
                            uri: sign.uri.clone(),
                            content_digest: t.content_digest,
                        },
                    );
                    Ok::<_, ReferenceError>(t.content)
                }
                other => Ok(other.clone()),
            })?;
            transmuted.push((name.clone(), t));
        }
        let template = self
            .plan
            .bundle
            .inference_repo
            .execution
            .prompt_template
            .as_ref()
            .and_then(|p| self.plan.bundle.provisions.get(p))
            .map(|p| p.content.as_str())
            .unwrap_or(agents::DEFAULT_PROMPT_TEMPLATE);
        let prompt = agents::build_prompt(template, concept, instruction, &transmuted);
        let key = agents::request_key(instruction, &transmuted);
        let (agent_name, agent) = self.ctx.agents.resolve(&addr.flow)?;
        let started = Instant::now();
        let request = agents::AgentRequest {
            address: addr,
            concept,
            instruction,
            inputs: &transmuted,
            prompt: &prompt,
            key: &key,
        };
        let raw = agent.invoke(&request);
        let parsed = raw.clone().and_then(|r| agents::parse_agent_response(&r));
        out.agent_trace = Some(json!({
            "at": Utc::now(),
            "address": addr.to_string(),
            "concept": concept,
            "agent": agent_name,
            "key": key,
            "prompt": prompt,
            "response": raw.as_ref().ok(),
            "error": parsed.as_ref().err().map(|e| e.to_string()),
            "duration_ms": started.elapsed().as_millis() as u64,
        }));
        Ok(parsed?)
    }

    fn apply(&mut self, addr: &NodeAddr, outcome: Outcome) -> Result<(), RunError> {
        self.counters.executed += 1;
        self.counters.transmutations += outcome.transmutations;
        if outcome.semantic {
            self.counters.semantic_calls += 1;
        }
        if let Some(entry) = outcome.agent_trace {
            self.trace(TraceKind::Agent, entry)?;
        }
        for (k, v) in outcome.env {
            if self.env.get(&k) != Some(&v) {
                self.env.insert(k.clone(), v.clone());
                self.env_pending.insert(k, v);
            }
        }
        match outcome.result {
            Ok(value) => {
                self.orch_trace("complete", Some(addr), json!({ "digest": value.digest() }))?;
                self.complete(addr, value, &outcome.inputs)
            }
            Err(e) => self.fail(addr, &e),
        }
    }

    /// Dispatches up to `workers` Ready instances. Returns the instances
    /// dispatched or paused; empty when nothing is Ready.
    pub fn step(&mut self) -> Result<Vec<NodeAddr>, RunError> {
        let workers = self.ctx.workers.max(1);
        let mut batch = Vec::new();
        let mut touched = Vec::new();
        while batch.len() < workers {
            let Some(addr) = self.waitlist.pop() else { break };
            touched.push(addr.clone());
            if self.record.breakpoints.contains(&addr.flow) && !self.record.released.contains(&addr) {
                self.set_status(&addr, Some(Status::PausedAtBreakpoint))?;
                self.orch_trace("pause", Some(&addr), Value::Null)?;
                continue;
            }
            self.set_status(&addr, Some(Status::Running))?;
            self.orch_trace("dispatch", Some(&addr), Value::Null)?;
            batch.push(addr);
        }
        let outcomes: Vec<Outcome> = if batch.len() <= 1 {
            batch.iter().map(|a| self.execute(a)).collect()
        } else {
            let this = &*self;
            std::thread::scope(|s| {
                let handles: Vec<_> = batch.iter().map(|a| s.spawn(move || this.execute(a))).collect();
                handles.into_iter().map(|h| h.join().expect("node execution panicked")).collect()
            })
        };
        for (addr, outcome) in batch.iter().zip(outcomes) {
            self.apply(addr, outcome)?;
        }
        if !batch.is_empty() {
            self.refresh_ready()?;
        }
        Ok(touched)
    }

    fn phase_now(&self) -> RunPhase {
        let counts = self.board.counts();
        if counts.contains_key(&Status::PausedAtBreakpoint) {
            RunPhase::Paused
        } else if counts.keys().all(|s| *s == Status::Completed) {
            RunPhase::Completed
        } else {
            RunPhase::Failed
        }
    }

    fn save_session(&mut self) -> Result<(), RunError> {
        self.record.updated_at = Utc::now();
        self.record.session = Some(SessionState {
            after_checkpoint: self.last_checkpoint,
            blackboard: self.board.clone(),
        });
        self.ctx.store.update_run(&self.record)?;
        Ok(())
    }

    /// Steps until nothing is Ready, then records the run's phase.
    pub fn run_to_idle(&mut self) -> Result<RunSummary, RunError> {
        self.record.phase = RunPhase::Running;
        self.save_session()?;
        while !self.waitlist.is_empty() {
            self.step()?;
        }
        let phase = self.phase_now();
        self.record.phase = phase;
        self.save_session()?;
        let counts = self.board.counts();
        self.orch_trace("finish", None, json!({ "phase": phase }))?;
        self.emit(EventBody::RunFinished { phase, counts })?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.record.run_id.clone(),
            phase: self.record.phase,
            counters: self.counters.clone(),
            counts: self.board.counts(),
            failures: self.failures.clone(),
            paused: self.board.with_status(Status::PausedAtBreakpoint).cloned().collect(),
        }
    }
}
