use std::collections::BTreeMap;

use crate::compiler::{CompiledNode, CompiledPlan, Derivation, InputSource, PlanBundle};
use crate::flow::{FlowIndex, NodeAddr};
use crate::parser::Literal;
use crate::reference::{Cell, Digest, Reference, Sign};

/// A compiled plan plus the lookup tables the runtime needs.
#[derive(Debug, Clone)]
pub struct RuntimePlan {
    pub bundle: PlanBundle,
    pub digest: Digest,
    pub plan: CompiledPlan,
    /// Loop node for each collection child.
    collection_owner: BTreeMap<FlowIndex, FlowIndex>,
    /// Nodes whose innermost enclosing loop is the key.
    body_of: BTreeMap<FlowIndex, Vec<FlowIndex>>,
}

/// Iteration counts of expanded loop instances.
pub type Expansions = BTreeMap<NodeAddr, usize>;

impl RuntimePlan {
    pub fn new(bundle: PlanBundle) -> Self {
        let plan = bundle.compiled_plan();
        let digest = bundle.digest();
        let mut collection_owner = BTreeMap::new();
        let mut body_of: BTreeMap<FlowIndex, Vec<FlowIndex>> = BTreeMap::new();
        for node in plan.nodes.values() {
            if let Some(spec) = &node.iterates {
                collection_owner.insert(spec.collection.clone(), node.flow_index.clone());
                body_of.entry(node.flow_index.clone()).or_default();
            }
            if let Some(inner) = node.enclosing_loops.last() {
                body_of.entry(inner.clone()).or_default().push(node.flow_index.clone());
            }
        }
        RuntimePlan {
            bundle,
            digest,
            plan,
            collection_owner,
            body_of,
        }
    }

    pub fn node(&self, flow: &FlowIndex) -> Option<&CompiledNode> {
        self.plan.nodes.get(flow)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CompiledNode> {
        self.plan.nodes.values()
    }

    /// The loop a collection child feeds, if any.
    pub fn loop_of_collection(&self, flow: &FlowIndex) -> Option<&FlowIndex> {
        self.collection_owner.get(flow)
    }

    pub fn body(&self, loop_node: &FlowIndex) -> &[FlowIndex] {
        self.body_of.get(loop_node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Axis a loop iterates over: the one named after the collection when
    /// present, otherwise the leading axis.
    pub fn iteration_axis(&self, loop_node: &FlowIndex, collection: &Reference) -> Option<String> {
        let spec = self.node(loop_node)?.iterates.as_ref()?;
        if collection.axis_len(&spec.axis).is_some() {
            return Some(spec.axis.clone());
        }
        collection.axes().first().map(|a| a.name.clone())
    }

    /// Instances that must complete before `addr` may run. `None` while a
    /// loop instance still waits for its expansion.
    pub fn instance_deps(&self, addr: &NodeAddr, expansions: &Expansions) -> Option<Vec<NodeAddr>> {
        let node = self.node(&addr.flow)?;
        let v = &addr.iters;
        let mut deps = Vec::new();
        for source in node.sources() {
            match source {
                InputSource::Node(y) => {
                    let dy = self.node(y)?.loop_depth();
                    if dy <= v.len() {
                        deps.push(NodeAddr::new(y.clone(), v[..dy].to_vec()));
                    } else {
                        let n = *expansions.get(addr)?;
                        for i in 0..n as u32 {
                            let mut w = v.clone();
                            w.push(i);
                            deps.push(NodeAddr::new(y.clone(), w));
                        }
                    }
                }
                InputSource::LoopElement { loop_node } => {
                    let l = self.node(loop_node)?;
                    let c = &l.iterates.as_ref()?.collection;
                    deps.push(NodeAddr::new(c.clone(), v[..l.loop_depth()].to_vec()));
                }
            }
        }
        if let Some(spec) = &node.iterates {
            expansions.get(addr)?;
            let c = NodeAddr::new(spec.collection.clone(), v.clone());
            if !deps.contains(&c) {
                deps.push(c);
            }
        }
        deps.sort();
        deps.dedup();
        Some(deps)
    }

    /// Static instances of the top level, before any loop expands.
    pub fn top_level(&self) -> impl Iterator<Item = NodeAddr> + '_ {
        self.nodes()
            .filter(|n| n.enclosing_loops.is_empty())
            .map(|n| NodeAddr::plain(n.flow_index.clone()))
    }
}

/// Value of a ground literal; `None` for run inputs.
pub fn ground_value(node: &CompiledNode) -> Option<Reference> {
    match &node.derivation {
        Derivation::Ground { literal: Some(lit) } => Some(Reference::scalar(match lit {
            Literal::Text(s) => Cell::Text(s.clone()),
            Literal::Number(n) => Cell::Number(*n),
            Literal::Sign(uri) => Cell::Sign(Sign::for_uri(uri)),
        })),
        _ => None,
    }
}

pub fn is_ground(node: &CompiledNode) -> bool {
    matches!(node.derivation, Derivation::Ground { .. })
}
