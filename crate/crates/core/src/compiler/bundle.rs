//! Activation: the compiled plan serialized as an inference repository,
//! a concept repository and the provision set it was bound against.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompileError, CompiledNode, CompiledPlan, Derivation, Edge, PlanStats};
use crate::flow::FlowIndex;
use crate::parser::Literal;
use crate::reference::{Digest, Sign};

pub const BUNDLE_SCHEMA: &str = "nc/1";

/// Provision used as the prompt template of every semantic node when present.
pub const PROMPT_TEMPLATE_PROVISION: &str = "prompt_template";

pub const INFERENCE_REPO_FILE: &str = "inference_repo.json";
pub const CONCEPT_REPO_FILE: &str = "concept_repo.json";
pub const PROVISIONS_FILE: &str = "provisions.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provision {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    /// Provision holding the prompt template, if one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRepo {
    pub schema: String,
    pub plan_name: String,
    pub source_digest: Digest,
    pub execution: ExecutionConfig,
    pub inferences: Vec<CompiledNode>,
    pub edges: Vec<Edge>,
    pub topo_order: Vec<FlowIndex>,
    pub stats: PlanStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroundEntry {
    /// Value supplied when a run starts.
    Input,
    Literal { value: Literal },
    Sign { sign: Sign },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub flow_index: FlowIndex,
    pub name: String,
    /// Axes known before execution: the iterated axes this concept is
    /// stacked over, outermost first.
    pub axes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRepo {
    pub schema: String,
    pub concepts: Vec<ConceptEntry>,
}

/// Orchestrator-ready plan: inference graph, concept definitions, provisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBundle {
    pub inference_repo: InferenceRepo,
    pub concept_repo: ConceptRepo,
    pub provisions: BTreeMap<String, Provision>,
}

/// The compiled `.ncd` form: the activation pre-image plus a source map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdDocument {
    pub schema: String,
    pub plan: CompiledPlan,
}

impl NcdDocument {
    pub fn new(plan: &CompiledPlan) -> Self {
        NcdDocument {
            schema: BUNDLE_SCHEMA.to_string(),
            plan: plan.clone(),
        }
    }
}

/// Binds provisions and serializes the plan into its two repositories.
pub fn activate(
    plan: &CompiledPlan,
    provisions: &BTreeMap<String, Provision>,
) -> Result<PlanBundle, CompileError> {
    let mut concepts = Vec::with_capacity(plan.nodes.len());
    for node in plan.nodes.values() {
        let ground = match &node.derivation {
            Derivation::Ground { literal: None } => Some(GroundEntry::Input),
            Derivation::Ground {
                literal: Some(Literal::Sign(uri)),
            } => {
                if let Some(name) = uri.strip_prefix("prov://") {
                    if !provisions.contains_key(name) {
                        return Err(CompileError::MissingProvision(name.to_string()));
                    }
                }
                Some(GroundEntry::Sign {
                    sign: Sign::for_uri(uri),
                })
            }
            Derivation::Ground {
                literal: Some(lit),
            } => Some(GroundEntry::Literal { value: lit.clone() }),
            _ => None,
        };
        let mut axes: Vec<String> = node
            .enclosing_loops
            .iter()
            .map(|l| plan.nodes[l].iterates.as_ref().expect("loop node").axis.clone())
            .collect();
        if let Some(spec) = &node.iterates {
            axes.push(spec.axis.clone());
        }
        concepts.push(ConceptEntry {
            flow_index: node.flow_index.clone(),
            name: node.concept_name.clone(),
            axes,
            ground,
        });
    }
    let execution = ExecutionConfig {
        prompt_template: provisions
            .contains_key(PROMPT_TEMPLATE_PROVISION)
            .then(|| PROMPT_TEMPLATE_PROVISION.to_string()),
    };
    Ok(PlanBundle {
        inference_repo: InferenceRepo {
            schema: BUNDLE_SCHEMA.to_string(),
            plan_name: plan.name.clone(),
            source_digest: plan.source_digest.clone(),
            execution,
            inferences: plan.nodes.values().cloned().collect(),
            edges: plan.dep_graph.iter().cloned().collect(),
            topo_order: plan.topo_order.clone(),
            stats: plan.stats,
        },
        concept_repo: ConceptRepo {
            schema: BUNDLE_SCHEMA.to_string(),
            concepts,
        },
        provisions: provisions.clone(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

impl PlanBundle {
    /// Writes `inference_repo.json`, `concept_repo.json` and `provisions.json`.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(INFERENCE_REPO_FILE), &self.inference_repo)?;
        write_json(&dir.join(CONCEPT_REPO_FILE), &self.concept_repo)?;
        write_json(&dir.join(PROVISIONS_FILE), &self.provisions)
    }

    pub fn load(dir: &Path) -> io::Result<PlanBundle> {
        let provisions_path = dir.join(PROVISIONS_FILE);
        let provisions = if provisions_path.exists() {
            read_json(&provisions_path)?
        } else {
            BTreeMap::new()
        };
        Ok(PlanBundle {
            inference_repo: read_json(&dir.join(INFERENCE_REPO_FILE))?,
            concept_repo: read_json(&dir.join(CONCEPT_REPO_FILE))?,
            provisions,
        })
    }

    /// Digest of the bundle's canonical JSON; identifies the plan in a store.
    pub fn digest(&self) -> Digest {
        Digest::of_bytes(&serde_json::to_vec(self).expect("bundle serializes"))
    }

    pub fn compiled_plan(&self) -> CompiledPlan {
        let ir = &self.inference_repo;
        CompiledPlan {
            name: ir.plan_name.clone(),
            source_digest: ir.source_digest.clone(),
            nodes: ir
                .inferences
                .iter()
                .map(|n| (n.flow_index.clone(), n.clone()))
                .collect(),
            dep_graph: ir.edges.iter().cloned().collect(),
            topo_order: ir.topo_order.clone(),
            stats: ir.stats,
            source_map: BTreeMap::new(),
        }
    }

    pub fn provision_texts(&self) -> BTreeMap<String, String> {
        self.provisions
            .iter()
            .map(|(k, v)| (k.clone(), v.content.clone()))
            .collect()
    }

    pub fn concept(&self, flow: &FlowIndex) -> Option<&ConceptEntry> {
        self.concept_repo.concepts.iter().find(|c| &c.flow_index == flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile;

    const PLAN: &str = "{report}\n    <= \"write the report\"({notes}, {style})\n    {notes}\n    {style}\n        <- sign(\"prov://style_guide\")\n";

    #[test]
    fn missing_provision() {
        let plan = compile(PLAN).unwrap();
        let err = activate(&plan, &BTreeMap::new()).unwrap_err();
        assert_eq!(err, CompileError::MissingProvision("style_guide".into()));
    }

    #[test]
    fn save_load_round_trip() {
        let plan = compile(PLAN).unwrap();
        let provisions = BTreeMap::from([(
            "style_guide".to_string(),
            Provision {
                content: "Short sentences.".into(),
            },
        )]);
        let bundle = activate(&plan, &provisions).unwrap();
        assert_eq!(bundle.inference_repo.inferences.len(), plan.nodes.len());
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let loaded = PlanBundle::load(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
        assert_eq!(loaded.digest(), bundle.digest());
        let mut round = loaded.compiled_plan();
        round.source_map = plan.source_map.clone();
        assert_eq!(round, plan);
        assert!(matches!(
            bundle.concept(&"1.2".parse().unwrap()).unwrap().ground,
            Some(GroundEntry::Sign { .. })
        ));
    }
}
