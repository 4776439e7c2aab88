#![allow(dead_code)]

pub mod dag;
pub mod scope_corpus;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nc_core::orchestrator::agents::{input_digest, Agent, AgentRequest, ScriptedAgent};
use nc_core::orchestrator::{AgentError, AgentRegistry, RunContext};
use nc_core::project::{Compiled, Project};
use nc_core::reference::{Axis, Cell, Reference};
use nc_core::store::CaseStore;
use serde_json::json;

pub const FIXTURES: [&str; 5] = ["deck", "research", "release_notes", "chain", "diamond"];
pub const MAIN_FIXTURES: [&str; 3] = ["deck", "research", "release_notes"];

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> (Project, Compiled) {
    let project = Project::open(fixture_dir(name)).unwrap();
    let compiled = project.compile().unwrap();
    (project, compiled)
}

/// Deterministic stand-in used to author the scripted fixtures. Answers
/// depend on the inputs so that revised inputs give revised outputs.
pub struct AuthorAgent;

fn reply(r: &Reference) -> String {
    json!({ "reference": r.to_json_value() }).to_string()
}

impl Agent for AuthorAgent {
    fn invoke(&self, req: &AgentRequest<'_>) -> Result<String, AgentError> {
        let first_text = || {
            req.inputs
                .first()
                .and_then(|(_, r)| r.as_scalar())
                .map(|c| c.render())
                .unwrap_or_default()
        };
        if req.instruction.starts_with("Plan up to three tool calls") {
            let question = first_text();
            let cells = vec![
                Cell::Data(json!({"tool": "lookup", "query": "fork"})),
                Cell::Data(json!({"tool": "lookup", "query": "override"})),
                Cell::Data(json!({"tool": "search", "query": question})),
            ];
            return Ok(reply(&Reference::new(vec![Axis::new("actions", 3)], cells).unwrap()));
        }
        if req.instruction.starts_with("Split the changelog") {
            let cells: Vec<Cell> = first_text()
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(Cell::text)
                .collect();
            return Ok(reply(&Reference::list("change", cells).unwrap()));
        }
        if req.instruction.starts_with("Classify each change") {
            let entries = &req.inputs[0].1;
            let cells: Vec<Cell> = entries
                .cells()
                .iter()
                .map(|c| {
                    let t = c.render();
                    Cell::text(if t.starts_with("add") {
                        "feature"
                    } else if t.starts_with("fix") {
                        "fix"
                    } else {
                        "chore"
                    })
                })
                .collect();
            return Ok(reply(&Reference::new(entries.axes().to_vec(), cells).unwrap()));
        }
        let words: Vec<&str> = req.instruction.split_whitespace().take(4).collect();
        Ok(format!(
            "{}: {} <{}>",
            req.concept,
            words.join(" "),
            &input_digest(req.inputs)[..12]
        ))
    }
}

pub fn author_registry() -> AgentRegistry {
    AgentRegistry::single("author", Arc::new(AuthorAgent))
}

pub fn scripted_registry(name: &str) -> AgentRegistry {
    let script = fixture_dir(name).join("script.json");
    AgentRegistry::single("scripted", Arc::new(ScriptedAgent::from_file(&script).unwrap()))
}

/// In-memory store, project resolver, temporary output directory.
pub fn memory_ctx(project: &Project, agents: AgentRegistry, out: &Path) -> RunContext {
    let mut ctx = RunContext::new(
        Arc::new(CaseStore::in_memory()),
        Arc::new(agents),
        Arc::new(project.resolver()),
    );
    ctx.output_dir = Some(out.to_path_buf());
    ctx
}

pub fn inputs(project: &Project) -> BTreeMap<String, Reference> {
    project.default_inputs().unwrap()
}

pub fn outline(n: usize) -> Reference {
    let all = ["Why checkpoints matter", "Forking a past run", "Overriding a value"];
    Reference::list("outline", all[..n].iter().map(|s| Cell::text(*s)).collect()).unwrap()
}
