//! Scope resolution: every functional argument must name a concept declared
//! in the consumer's own block (or that block's loop-current element), and
//! every `<- {name}` import must find a declaration in an enclosing block.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Builtin, CompiledNode, Derivation, InputBinding, InputSource, LoopSpec, NodeKind, OpSpec, LOOP_ELEMENT};
use crate::flow::FlowIndex;
use crate::parser::{ConceptNode, ConceptRef, Loc, Operator, SourcePlan, ValuePayload};
use crate::reference::Digest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScopeErrorKind {
    /// Reference to a concept not declared in the immediately enclosing block.
    OutOfScope,
    /// Import whose name matches no enclosing declaration.
    UnresolvedImport,
    DuplicateDeclaration,
    ReservedName,
    /// `{*}` used where no enclosing block iterates.
    LoopElementOutsideLoop,
    LoopWithoutFunctional,
    /// A concept with a block of children but no derivation.
    MissingDerivation,
    UnknownOperator(String),
}

impl fmt::Display for ScopeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopeErrorKind::OutOfScope => f.write_str("not declared in the enclosing block"),
            ScopeErrorKind::UnresolvedImport => f.write_str("import matches no enclosing declaration"),
            ScopeErrorKind::DuplicateDeclaration => f.write_str("declared twice in one block"),
            ScopeErrorKind::ReservedName => f.write_str("reserved name"),
            ScopeErrorKind::LoopElementOutsideLoop => f.write_str("loop element used outside a loop body"),
            ScopeErrorKind::LoopWithoutFunctional => f.write_str("`<*` block needs a `<=` line"),
            ScopeErrorKind::MissingDerivation => f.write_str("block has children but no `<-` or `<=`"),
            ScopeErrorKind::UnknownOperator(op) => write!(f, "unknown operator `{op}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{loc}: `{concept}` {kind} (block of `{block}`)")]
pub struct ScopeError {
    pub kind: ScopeErrorKind,
    /// The offending concept reference.
    pub concept: String,
    pub loc: Loc,
    /// Concept whose block contains the offending line.
    pub block: String,
}

#[derive(Debug, Clone)]
pub(super) struct ScopedNode {
    pub flow_index: FlowIndex,
    pub loc: Loc,
    pub compiled: CompiledNode,
}

/// A plan whose every reference is bound. Nodes are kept in pre-order.
#[derive(Debug, Clone)]
pub struct ScopedPlan {
    pub source_digest: Digest,
    nodes: Vec<ScopedNode>,
}

impl ScopedPlan {
    pub(super) fn flatten(&self) -> Vec<ScopedNode> {
        self.nodes.clone()
    }

    pub(super) fn root_name(&self) -> &str {
        &self.nodes[0].compiled.concept_name
    }

    /// (flow index, concept name) of every node, in reading order.
    pub fn bindings(&self) -> impl Iterator<Item = (&FlowIndex, &str)> {
        self.nodes
            .iter()
            .map(|n| (&n.flow_index, n.compiled.concept_name.as_str()))
    }
}

struct Frame<'a> {
    node: &'a ConceptNode,
    flow: FlowIndex,
}

struct Resolver<'a> {
    errors: Vec<ScopeError>,
    nodes: Vec<ScopedNode>,
    stack: Vec<Frame<'a>>,
}

/// Binds every reference in `plan`, returning all scope errors found.
pub fn resolve_scopes(plan: &SourcePlan) -> Result<ScopedPlan, Vec<ScopeError>> {
    let mut r = Resolver {
        errors: Vec::new(),
        nodes: Vec::new(),
        stack: Vec::new(),
    };
    r.visit(&plan.root, FlowIndex::root());
    if r.errors.is_empty() {
        Ok(ScopedPlan {
            source_digest: plan.source_digest.clone(),
            nodes: r.nodes,
        })
    } else {
        r.errors.sort_by_key(|e| (e.loc.line, e.loc.column));
        Err(r.errors)
    }
}

fn child_by_name<'n>(node: &'n ConceptNode, name: &str) -> Option<(usize, &'n ConceptNode)> {
    node.children.iter().enumerate().find(|(_, c)| c.name == name)
}

fn collection_position(node: &ConceptNode) -> Option<usize> {
    node.context()
        .and_then(|c| child_by_name(node, &c.name))
        .map(|(i, _)| i)
}

impl<'a> Resolver<'a> {
    fn error(&mut self, kind: ScopeErrorKind, r: &ConceptRef, block: &str) {
        self.errors.push(ScopeError {
            kind,
            concept: r.name.clone(),
            loc: r.loc,
            block: block.to_string(),
        });
    }

    /// Loop nodes on the stack whose body (not collection) contains `flow`.
    fn enclosing_loops(&self, flow: &FlowIndex) -> Vec<FlowIndex> {
        let mut loops = Vec::new();
        for frame in &self.stack {
            let Some(pos) = collection_position(frame.node) else {
                continue;
            };
            let collection = frame.flow.child(pos as u32 + 1);
            if flow != &collection && !flow.is_descendant_of(&collection) {
                loops.push(frame.flow.clone());
            }
        }
        loops
    }

    /// Nearest enclosing declaration of `name` for the node at `flow`,
    /// searching the node's siblings first and then each ancestor's siblings.
    fn resolve_import(&self, flow: &FlowIndex, name: &str) -> Option<FlowIndex> {
        let mut own = flow.clone();
        for frame in self.stack.iter().rev() {
            let hit = frame
                .node
                .children
                .iter()
                .enumerate()
                .map(|(i, c)| (frame.flow.child(i as u32 + 1), c))
                .find(|(f, c)| c.name == name && *f != own);
            if let Some((f, _)) = hit {
                return Some(f);
            }
            own = frame.flow.clone();
        }
        None
    }

    fn visit(&mut self, node: &'a ConceptNode, flow: FlowIndex) {
        let parent_name = self
            .stack
            .last()
            .map(|f| f.node.name.clone())
            .unwrap_or_default();
        let self_ref = ConceptRef {
            name: node.name.clone(),
            loc: node.loc,
        };
        if node.name == LOOP_ELEMENT {
            self.error(ScopeErrorKind::ReservedName, &self_ref, &parent_name);
        }

        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for child in &node.children {
            if seen.insert(child.name.as_str(), ()).is_some() {
                let r = ConceptRef {
                    name: child.name.clone(),
                    loc: child.loc,
                };
                self.error(ScopeErrorKind::DuplicateDeclaration, &r, &node.name);
            }
        }

        let enclosing_loops = self.enclosing_loops(&flow);
        // the parent iterates and this node is part of its body
        let in_parent_body = self.stack.last().is_some_and(|p| {
            collection_position(p.node).is_some() && enclosing_loops.last() == Some(&p.flow)
        });
        let loop_axis = if in_parent_body {
            self.stack
                .last()
                .and_then(|p| p.node.context())
                .map(|c| c.name.clone())
        } else {
            None
        };

        let iterates = match node.context() {
            Some(c) => match child_by_name(node, &c.name) {
                Some((pos, _)) => Some(LoopSpec {
                    collection: flow.child(pos as u32 + 1),
                    axis: c.name.clone(),
                }),
                None => {
                    self.error(ScopeErrorKind::OutOfScope, c, &node.name);
                    None
                }
            },
            None => None,
        };

        let derivation = if let Some(func) = node.functional() {
            let op = match &func.operator {
                Operator::Instruction(text) => Some(OpSpec::Instruction(text.clone())),
                Operator::Builtin(name) => match Builtin::from_name(name) {
                    Some(b) => Some(OpSpec::Builtin(b)),
                    None => {
                        let r = ConceptRef {
                            name: node.name.clone(),
                            loc: node
                                .lines
                                .iter()
                                .find(|l| matches!(l.marker, crate::parser::Marker::Functional(_)))
                                .map(|l| l.loc)
                                .unwrap_or(node.loc),
                        };
                        self.error(ScopeErrorKind::UnknownOperator(name.clone()), &r, &node.name);
                        None
                    }
                },
            };
            let mut inputs = Vec::new();
            for arg in &func.args {
                if arg.name == LOOP_ELEMENT {
                    if in_parent_body {
                        let loop_node = self.stack.last().expect("in body").flow.clone();
                        inputs.push(InputBinding {
                            name: LOOP_ELEMENT.to_string(),
                            source: InputSource::LoopElement { loop_node },
                        });
                    } else {
                        self.error(ScopeErrorKind::LoopElementOutsideLoop, arg, &node.name);
                    }
                    continue;
                }
                match child_by_name(node, &arg.name) {
                    Some((pos, _)) => inputs.push(InputBinding {
                        name: arg.name.clone(),
                        source: InputSource::Node(flow.child(pos as u32 + 1)),
                    }),
                    None => self.error(ScopeErrorKind::OutOfScope, arg, &node.name),
                }
            }
            op.map(|op| Derivation::Functional { op, inputs })
        } else {
            if iterates.is_some() || node.context().is_some() {
                self.error(ScopeErrorKind::LoopWithoutFunctional, &self_ref, &parent_name);
            }
            match node.value() {
                Some(ValuePayload::Literal(lit)) => Some(Derivation::Ground {
                    literal: Some(lit.clone()),
                }),
                Some(ValuePayload::Concept(r)) if r.name == LOOP_ELEMENT => {
                    match enclosing_loops.last() {
                        Some(l) => Some(Derivation::Value {
                            source: InputSource::LoopElement {
                                loop_node: l.clone(),
                            },
                        }),
                        None => {
                            self.error(ScopeErrorKind::LoopElementOutsideLoop, r, &parent_name);
                            None
                        }
                    }
                }
                Some(ValuePayload::Concept(r)) => match self.resolve_import(&flow, &r.name) {
                    Some(source) => Some(Derivation::Value {
                        source: InputSource::Node(source),
                    }),
                    None => {
                        self.error(ScopeErrorKind::UnresolvedImport, r, &parent_name);
                        None
                    }
                },
                None if !node.children.is_empty() => {
                    self.error(ScopeErrorKind::MissingDerivation, &self_ref, &parent_name);
                    None
                }
                None => Some(Derivation::Ground { literal: None }),
            }
        };

        if let Some(derivation) = derivation {
            self.nodes.push(ScopedNode {
                flow_index: flow.clone(),
                loc: node.loc,
                compiled: CompiledNode {
                    flow_index: flow.clone(),
                    concept_name: node.name.clone(),
                    derivation,
                    kind: NodeKind::Syntactic,
                    loop_axis,
                    iterates,
                    enclosing_loops,
                },
            });
        }

        self.stack.push(Frame {
            node,
            flow: flow.clone(),
        });
        for (i, child) in node.children.iter().enumerate() {
            self.visit(child, flow.child(i as u32 + 1));
        }
        self.stack.pop();
    }
}
