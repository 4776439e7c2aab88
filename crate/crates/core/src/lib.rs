//! Compiler and runtime for scoped `.ncds` workflow plans.
//!
//! A plan is parsed ([`parser`]), compiled into a scope-verified,
//! flow-indexed inference graph ([`compiler`]), and executed by the
//! [`orchestrator`] against a [`store::CaseStore`] that retains a
//! self-contained checkpoint after every completed node. Checkpoints can be
//! inspected, forked into new runs, or revised with a value override that
//! re-executes exactly the downstream nodes.

pub mod compiler;
pub mod events;
pub mod flow;
pub mod orchestrator;
pub mod parser;
pub mod project;
pub mod reference;
pub mod store;

pub use compiler::{
    activate, compile, dependency_closure, generate_narrative, CompileError, CompiledNode,
    CompiledPlan, Derivation, NodeKind, PlanBundle,
};
pub use flow::{FlowIndex, NodeAddr};
pub use parser::{parse, pretty_print, SourcePlan, SyntaxError};
pub use reference::{Cell, Digest, Reference, ReferenceError, Sign};
