//! Compilation of a parsed plan into a scope-verified, flow-indexed
//! inference graph.
//!
//! The pipeline is `parse -> resolve_scopes -> assign_flow_indices`, after
//! which the plan can be rendered as a narrative ([`generate_narrative`]) or
//! activated into an orchestrator-ready [`PlanBundle`] ([`activate`]).

pub mod bundle;
mod narrative;
mod scope;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowIndex;
use crate::parser::{self, Literal, Loc, SyntaxError};

pub use bundle::{
    activate, ConceptEntry, ConceptRepo, ExecutionConfig, GroundEntry, InferenceRepo,
    NcdDocument, PlanBundle, Provision, BUNDLE_SCHEMA, PROMPT_TEMPLATE_PROVISION,
};
pub use narrative::{generate_narrative, NarrativeTemplates};
pub use scope::{resolve_scopes, ScopeError, ScopeErrorKind, ScopedPlan};

/// The deterministic built-in operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// Select one branch by a selector value.
    Route,
    /// Partition elements by key.
    Group,
    /// Gather loop outputs along the loop axis.
    Collect,
    /// Pull a field out of structured cells.
    Extract,
    /// Materialize a sign's metadata without fetching content.
    Load,
    /// Write a Reference to a path in the run's output directory.
    Save,
    /// Ordering barrier with no data effect.
    Wait,
}

impl Builtin {
    pub const ALL: [Builtin; 7] = [
        Builtin::Route,
        Builtin::Group,
        Builtin::Collect,
        Builtin::Extract,
        Builtin::Load,
        Builtin::Save,
        Builtin::Wait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Route => "route",
            Builtin::Group => "group",
            Builtin::Collect => "collect",
            Builtin::Extract => "extract",
            Builtin::Load => "load",
            Builtin::Save => "save",
            Builtin::Wait => "wait",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpSpec {
    Builtin(Builtin),
    Instruction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Semantic,
    Syntactic,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Semantic => "semantic",
            NodeKind::Syntactic => "syntactic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Node(FlowIndex),
    /// Current element of the collection iterated by `loop_node`.
    LoopElement { loop_node: FlowIndex },
}

/// Reserved input name of the loop-current element.
pub const LOOP_ELEMENT: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBinding {
    pub name: String,
    pub source: InputSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    /// Leaf input. Without a literal the value must be supplied at run start.
    Ground { literal: Option<Literal> },
    /// Explicit import of a value declared in an enclosing block.
    Value { source: InputSource },
    Functional {
        op: OpSpec,
        inputs: Vec<InputBinding>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpec {
    /// The child concept holding the iterated collection.
    pub collection: FlowIndex,
    pub axis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledNode {
    pub flow_index: FlowIndex,
    pub concept_name: String,
    pub derivation: Derivation,
    pub kind: NodeKind,
    /// Set when the enclosing block carries `<*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_axis: Option<String>,
    /// Set when this node's own block carries `<*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterates: Option<LoopSpec>,
    /// Loop nodes whose body contains this node, outermost first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enclosing_loops: Vec<FlowIndex>,
}

impl CompiledNode {
    pub fn inputs(&self) -> &[InputBinding] {
        match &self.derivation {
            Derivation::Functional { inputs, .. } => inputs,
            _ => &[],
        }
    }

    /// Every binding the node reads, including a value import's source.
    pub fn sources(&self) -> Vec<&InputSource> {
        match &self.derivation {
            Derivation::Ground { .. } => Vec::new(),
            Derivation::Value { source } => vec![source],
            Derivation::Functional { inputs, .. } => inputs.iter().map(|b| &b.source).collect(),
        }
    }

    pub fn loop_depth(&self) -> usize {
        self.enclosing_loops.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub semantic_count: usize,
    pub syntactic_count: usize,
}

impl PlanStats {
    pub fn total(&self) -> usize {
        self.semantic_count + self.syntactic_count
    }

    pub fn syntactic_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.syntactic_count as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: FlowIndex,
    pub to: FlowIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPlan {
    pub name: String,
    pub source_digest: crate::reference::Digest,
    pub nodes: BTreeMap<FlowIndex, CompiledNode>,
    /// Input -> consumer.
    pub dep_graph: BTreeSet<Edge>,
    /// Inside-out execution order; ties broken by ascending flow index.
    pub topo_order: Vec<FlowIndex>,
    pub stats: PlanStats,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_map: BTreeMap<FlowIndex, Loc>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{} scope error(s); first: {}", .0.len(), .0[0])]
    Scope(Vec<ScopeError>),
    #[error("dependency cycle through {}", join_flows(.0))]
    Cycle(Vec<FlowIndex>),
    #[error("unknown flow index {0}")]
    UnknownFlowIndex(FlowIndex),
    #[error("missing provision `{0}`")]
    MissingProvision(String),
}

fn join_flows(flows: &[FlowIndex]) -> String {
    flows.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
}

/// Semantic iff the operator is a quoted instruction.
pub fn classify(node: &CompiledNode) -> NodeKind {
    match &node.derivation {
        Derivation::Functional {
            op: OpSpec::Instruction(_),
            ..
        } => NodeKind::Semantic,
        _ => NodeKind::Syntactic,
    }
}

/// Parses and compiles `.ncds` text.
pub fn compile(text: &str) -> Result<CompiledPlan, CompileError> {
    let plan = parser::parse(text)?;
    let scoped = resolve_scopes(&plan).map_err(CompileError::Scope)?;
    assign_flow_indices(&scoped)
}

/// Numbers the scoped tree (`1`, then `f.k` for the k-th child of `f`),
/// builds the dependency graph and orders it inside-out.
pub fn assign_flow_indices(scoped: &ScopedPlan) -> Result<CompiledPlan, CompileError> {
    let mut nodes = BTreeMap::new();
    let mut source_map = BTreeMap::new();
    for node in scoped.flatten() {
        let flow = node.flow_index.clone();
        source_map.insert(flow.clone(), node.loc);
        let mut compiled = node.compiled;
        compiled.kind = classify(&compiled);
        nodes.insert(flow, compiled);
    }

    let mut dep_graph = BTreeSet::new();
    for node in nodes.values() {
        for source in node.sources() {
            let from = match source {
                InputSource::Node(f) => f.clone(),
                InputSource::LoopElement { loop_node } => collection_of(&nodes, loop_node),
            };
            dep_graph.insert(Edge {
                from,
                to: node.flow_index.clone(),
            });
        }
        if let Some(spec) = &node.iterates {
            dep_graph.insert(Edge {
                from: spec.collection.clone(),
                to: node.flow_index.clone(),
            });
        }
    }

    let topo_order = topological_order(&nodes, &dep_graph)?;
    let semantic_count = nodes.values().filter(|n| n.kind == NodeKind::Semantic).count();
    let stats = PlanStats {
        semantic_count,
        syntactic_count: nodes.len() - semantic_count,
    };
    Ok(CompiledPlan {
        name: scoped.root_name().to_string(),
        source_digest: scoped.source_digest.clone(),
        nodes,
        dep_graph,
        topo_order,
        stats,
        source_map,
    })
}

fn collection_of(nodes: &BTreeMap<FlowIndex, CompiledNode>, loop_node: &FlowIndex) -> FlowIndex {
    nodes[loop_node]
        .iterates
        .as_ref()
        .expect("loop element bound to a looping node")
        .collection
        .clone()
}

fn topological_order(
    nodes: &BTreeMap<FlowIndex, CompiledNode>,
    edges: &BTreeSet<Edge>,
) -> Result<Vec<FlowIndex>, CompileError> {
    let mut indegree: BTreeMap<&FlowIndex, usize> = nodes.keys().map(|k| (k, 0)).collect();
    let mut consumers: BTreeMap<&FlowIndex, Vec<&FlowIndex>> = BTreeMap::new();
    for e in edges {
        *indegree.get_mut(&e.to).expect("edge endpoints are nodes") += 1;
        consumers.entry(&e.from).or_default().push(&e.to);
    }
    let mut ready: BinaryHeap<Reverse<&FlowIndex>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(f, _)| Reverse(*f))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse(f)) = ready.pop() {
        order.push(f.clone());
        for c in consumers.get(f).into_iter().flatten() {
            let d = indegree.get_mut(*c).expect("consumer is a node");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*c));
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(f, _)| f.clone())
            .collect();
        return Err(CompileError::Cycle(stuck));
    }
    Ok(order)
}

impl CompiledPlan {
    pub fn node(&self, f: &FlowIndex) -> Option<&CompiledNode> {
        self.nodes.get(f)
    }

    pub fn consumers(&self) -> BTreeMap<&FlowIndex, Vec<&FlowIndex>> {
        let mut out: BTreeMap<&FlowIndex, Vec<&FlowIndex>> = BTreeMap::new();
        for e in &self.dep_graph {
            out.entry(&e.from).or_default().push(&e.to);
        }
        out
    }

    /// Checks that every input is a child of the consumer, an explicit
    /// import, or a loop element of the enclosing loop block.
    pub fn check_scope_soundness(&self) -> Result<(), String> {
        for node in self.nodes.values() {
            for binding in node.inputs() {
                let ok = match &binding.source {
                    InputSource::Node(f) => f.parent().as_ref() == Some(&node.flow_index),
                    InputSource::LoopElement { loop_node } => {
                        node.flow_index.parent().as_ref() == Some(loop_node)
                    }
                };
                if !ok {
                    return Err(format!(
                        "{} reads `{}` from outside its block",
                        node.flow_index, binding.name
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Every node transitively downstream of `f`, excluding `f`.
pub fn dependency_closure(
    plan: &CompiledPlan,
    f: &FlowIndex,
) -> Result<BTreeSet<FlowIndex>, CompileError> {
    if !plan.nodes.contains_key(f) {
        return Err(CompileError::UnknownFlowIndex(f.clone()));
    }
    let consumers = plan.consumers();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([f]);
    while let Some(cur) = queue.pop_front() {
        for c in consumers.get(cur).into_iter().flatten() {
            if seen.insert((*c).clone()) {
                queue.push_back(*c);
            }
        }
    }
    seen.remove(f);
    Ok(seen)
}
