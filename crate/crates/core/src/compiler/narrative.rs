//! Plain-prose rendering of a compiled plan for review before any run.
//!
//! One paragraph per node in reading order (root first), each headed by the
//! node's flow index in brackets. Paragraph text comes from fixed templates
//! keyed by derivation kind with concept names interpolated verbatim, so the
//! output is a pure function of the plan.

use serde::{Deserialize, Serialize};

use super::{CompiledNode, CompiledPlan, Derivation, InputSource, OpSpec, LOOP_ELEMENT};
use crate::parser::Literal;

/// Paragraph templates. Placeholders: `{flow}`, `{concept}`, `{value}`,
/// `{uri}`, `{source}`, `{instruction}`, `{operator}`, `{inputs}`,
/// `{collection}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeTemplates {
    pub ground_literal: String,
    pub ground_sign: String,
    pub ground_input: String,
    pub import: String,
    pub import_loop_element: String,
    pub semantic: String,
    pub syntactic: String,
    pub body_suffix: String,
    pub loop_suffix: String,
    pub no_inputs: String,
    pub loop_element: String,
    pub list_separator: String,
    pub list_last_separator: String,
}

impl Default for NarrativeTemplates {
    fn default() -> Self {
        NarrativeTemplates {
            ground_literal: "[{flow}] {{concept}} is the fixed value {value}.".into(),
            ground_sign: "[{flow}] {{concept}} points to the resource {uri}; its content is read only when an agent needs it.".into(),
            ground_input: "[{flow}] {{concept}} is supplied as an input when the run starts.".into(),
            import: "[{flow}] {{concept}} takes its value from {{source}}, declared in an enclosing block.".into(),
            import_loop_element: "[{flow}] {{concept}} takes the current element of {{collection}}.".into(),
            semantic: "[{flow}] {{concept}} is produced by an agent following the instruction \"{instruction}\", given exactly {inputs}.".into(),
            syntactic: "[{flow}] {{concept}} is produced by the deterministic operation `{operator}`, given exactly {inputs}.".into(),
            body_suffix: " This step repeats once for each element of {{collection}}.".into(),
            loop_suffix: " It iterates over {{collection}} and gathers the per-element results.".into(),
            no_inputs: "no inputs".into(),
            loop_element: "the current element of {{collection}}".into(),
            list_separator: ", ".into(),
            list_last_separator: " and ".into(),
        }
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let key = &after[..key_len];
        match pairs.iter().find(|(k, _)| *k == key) {
            Some((_, value)) if after[key_len..].starts_with('}') => {
                out.push_str(value);
                rest = &after[key_len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn join(items: &[String], t: &NarrativeTemplates) -> String {
    match items.len() {
        0 => t.no_inputs.clone(),
        1 => items[0].clone(),
        n => format!(
            "{}{}{}",
            items[..n - 1].join(&t.list_separator),
            t.list_last_separator,
            items[n - 1]
        ),
    }
}

/// Renders the narrative with the default English templates.
pub fn generate_narrative(plan: &CompiledPlan) -> String {
    generate_narrative_with(plan, &NarrativeTemplates::default())
}

pub fn generate_narrative_with(plan: &CompiledPlan, t: &NarrativeTemplates) -> String {
    let mut paragraphs = Vec::with_capacity(plan.nodes.len() + 1);
    paragraphs.push(format!(
        "Plan \"{}\": {} steps, {} performed by agents and {} deterministic.",
        plan.name,
        plan.stats.total(),
        plan.stats.semantic_count,
        plan.stats.syntactic_count
    ));
    // BTreeMap order over flow indices is the top-to-bottom reading order
    for node in plan.nodes.values() {
        paragraphs.push(paragraph(plan, node, t));
    }
    let mut out = paragraphs.join("\n\n");
    out.push('\n');
    out
}

fn collection_name(plan: &CompiledPlan, loop_node: &super::FlowIndex) -> String {
    plan.nodes[loop_node]
        .iterates
        .as_ref()
        .map(|s| s.axis.clone())
        .unwrap_or_default()
}

fn paragraph(plan: &CompiledPlan, node: &CompiledNode, t: &NarrativeTemplates) -> String {
    let flow = node.flow_index.to_string();
    let concept = node.concept_name.as_str();
    let mut text = match &node.derivation {
        Derivation::Ground { literal: None } => {
            fill(&t.ground_input, &[("flow", &flow), ("concept", concept)])
        }
        Derivation::Ground {
            literal: Some(Literal::Sign(uri)),
        } => fill(&t.ground_sign, &[("flow", &flow), ("concept", concept), ("uri", uri)]),
        Derivation::Ground {
            literal: Some(lit),
        } => fill(
            &t.ground_literal,
            &[("flow", &flow), ("concept", concept), ("value", &lit.to_string())],
        ),
        Derivation::Value {
            source: InputSource::Node(src),
        } => fill(
            &t.import,
            &[("flow", &flow), ("concept", concept), ("source", &plan.nodes[src].concept_name)],
        ),
        Derivation::Value {
            source: InputSource::LoopElement { loop_node },
        } => fill(
            &t.import_loop_element,
            &[("flow", &flow), ("concept", concept), ("collection", &collection_name(plan, loop_node))],
        ),
        Derivation::Functional { op, inputs } => {
            let names: Vec<String> = inputs
                .iter()
                .map(|b| match &b.source {
                    InputSource::Node(_) => format!("{{{}}}", b.name),
                    InputSource::LoopElement { loop_node } => fill(
                        &t.loop_element,
                        &[("collection", &collection_name(plan, loop_node))],
                    ),
                })
                .collect();
            debug_assert!(inputs.iter().all(|b| b.name != LOOP_ELEMENT
                || matches!(b.source, InputSource::LoopElement { .. })));
            let inputs = join(&names, t);
            match op {
                OpSpec::Instruction(instruction) => fill(
                    &t.semantic,
                    &[("flow", &flow), ("concept", concept), ("instruction", instruction), ("inputs", &inputs)],
                ),
                OpSpec::Builtin(b) => fill(
                    &t.syntactic,
                    &[("flow", &flow), ("concept", concept), ("operator", b.name()), ("inputs", &inputs)],
                ),
            }
        }
    };
    if let Some(axis) = &node.loop_axis {
        text.push_str(&fill(&t.body_suffix, &[("collection", axis)]));
    }
    if let Some(spec) = &node.iterates {
        text.push_str(&fill(&t.loop_suffix, &[("collection", &spec.axis)]));
    }
    text
}
