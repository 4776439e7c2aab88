//! Structured diagnostics shared by the CLI (`--json`) and the service.

use std::fmt;

use nc_core::compiler::ScopeError;
use nc_core::orchestrator::RunError;
use nc_core::project::ProjectError;
use nc_core::store::StoreError;
use nc_core::{CompileError, ReferenceError};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// HTTP status; the CLI maps every failure to exit code 1.
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl Failure {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Failure::new(400, "bad_request", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Failure::new(404, "not_found", format!("unknown {what} `{id}`")).with_details(json!({ "kind": what, "id": id }))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Failure::new(409, "conflict", message)
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "code": self.code, "message": self.message, "details": self.details } })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn scope_details(errors: &[ScopeError]) -> Value {
    errors
        .iter()
        .map(|e| {
            json!({
                "kind": format!("{:?}", e.kind),
                "concept": e.concept,
                "block": e.block,
                "line": e.loc.line,
                "column": e.loc.column,
                "message": format!("`{}` {} (block of `{}`)", e.concept, e.kind, e.block),
            })
        })
        .collect()
}

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Self {
        let message = e.to_string();
        match e {
            CompileError::Syntax(s) => Failure::new(422, "syntax_error", message).with_details(json!([{
                "line": s.loc.line,
                "column": s.loc.column,
                "message": s.kind.to_string(),
            }])),
            CompileError::Scope(errors) => Failure::new(422, "scope_error", message).with_details(scope_details(&errors)),
            CompileError::Cycle(flows) => Failure::new(422, "cycle", message)
                .with_details(json!({ "flows": flows.iter().map(|f| f.to_string()).collect::<Vec<_>>() })),
            CompileError::UnknownFlowIndex(_) => Failure::new(422, "compile_error", message),
            CompileError::MissingProvision(name) => {
                Failure::new(422, "missing_provision", message).with_details(json!({ "provision": name }))
            }
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::UnknownRun(run) => Failure::not_found("run", run.as_str()),
            StoreError::UnknownPlan(d) => Failure::not_found("plan", d.as_str()),
            StoreError::UnknownNode(a) => Failure::not_found("node", &a.to_string()),
            StoreError::NoCheckpoint { run, address } => Failure::new(404, "no_checkpoint", message)
                .with_details(json!({ "run": run, "address": address })),
            StoreError::NotCompleted(a) => {
                Failure::new(409, "not_completed", message).with_details(json!({ "address": a }))
            }
            StoreError::DuplicateRun(run) => Failure::conflict(message).with_details(json!({ "run": run })),
            StoreError::ShapeMismatch { address, expected, got } => Failure::new(422, "shape_mismatch", message)
                .with_details(json!({ "address": address, "expected": expected, "got": got })),
            StoreError::Reference(r) => r.into(),
            StoreError::Io(_) | StoreError::Corrupt { .. } | StoreError::MissingObject(_) => {
                Failure::new(500, "store_error", message)
            }
        }
    }
}

impl From<ReferenceError> for Failure {
    fn from(e: ReferenceError) -> Self {
        let message = e.to_string();
        match e {
            ReferenceError::UnresolvableSign { uri, .. } => {
                Failure::new(422, "unresolvable_sign", message).with_details(json!({ "uri": uri }))
            }
            _ => Failure::new(422, "invalid_reference", message),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let message = e.to_string();
        match e {
            RunError::Store(s) => s.into(),
            RunError::Terminal(run) => Failure::conflict(message).with_details(json!({ "run": run })),
            RunError::UnknownBreakpoint(f) => {
                Failure::new(422, "unknown_breakpoint", message).with_details(json!({ "flow": f }))
            }
            RunError::MissingGroundInput(n) | RunError::UnknownInput(n) => {
                Failure::new(422, "invalid_inputs", message).with_details(json!({ "input": n }))
            }
            RunError::Agents(_) | RunError::UncoveredSemanticNode(_) => Failure::new(422, "agent_config", message),
        }
    }
}

impl From<ProjectError> for Failure {
    fn from(e: ProjectError) -> Self {
        match e {
            ProjectError::Compile(c) => c.into(),
            ProjectError::Store(s) => s.into(),
            ProjectError::Agents(a) => Failure::new(422, "agent_config", a.to_string()),
            ProjectError::Invalid { path, message } => Failure::new(422, "invalid_project", format!("{}: {message}", path.display()))
                .with_details(json!({ "path": path })),
            e @ ProjectError::Io { .. } => Failure::new(500, "io_error", e.to_string()),
        }
    }
}
