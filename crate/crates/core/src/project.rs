//! Project directories: a plan source with everything needed to compile,
//! run and revisit it.
//!
//! ```text
//! plan.ncds            source
//! provisions/<name>.*  provision files, addressed as prov://<name>
//! agents.json          agent kinds and pattern rules
//! inputs.json          default run inputs (optional)
//! build/               plan.ncd, plan.ncn, inference_repo.json, concept_repo.json
//! store/               case store
//! output/              files written by `save`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use crate::compiler::bundle::{NcdDocument, Provision, CONCEPT_REPO_FILE, INFERENCE_REPO_FILE};
use crate::compiler::{activate, compile, generate_narrative, CompileError, CompiledPlan, PlanBundle};
use crate::orchestrator::agents::AgentConfig;
use crate::orchestrator::{AgentError, AgentRegistry, RunContext};
use crate::reference::{DefaultResolver, Digest, Reference};
use crate::store::{CaseStore, StoreError};

pub const PLAN_FILE: &str = "plan.ncds";
pub const AGENTS_FILE: &str = "agents.json";
pub const INPUTS_FILE: &str = "inputs.json";
pub const NCD_FILE: &str = "plan.ncd";
pub const NCN_FILE: &str = "plan.ncn";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Agents(#[from] AgentError),
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Output of compiling a project in memory.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub plan: CompiledPlan,
    pub bundle: PlanBundle,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    root: PathBuf,
    plan_file: String,
}

impl Project {
    pub fn open(root: impl AsRef<Path>) -> Result<Project, ProjectError> {
        let root = root.as_ref().to_path_buf();
        let plan = root.join(PLAN_FILE);
        if !plan.is_file() {
            return Err(ProjectError::Invalid {
                path: plan,
                message: "no plan source".into(),
            });
        }
        Ok(Project {
            root,
            plan_file: PLAN_FILE.to_string(),
        })
    }

    /// Opens the project around a plan file of any name; the file's
    /// directory is the project root.
    pub fn from_plan_path(path: impl AsRef<Path>) -> Result<Project, ProjectError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(ProjectError::Invalid {
                path: path.to_path_buf(),
                message: "no plan source".into(),
            });
        }
        let (Some(dir), Some(name)) = (path.parent(), path.file_name()) else {
            return Err(ProjectError::Invalid {
                path: path.to_path_buf(),
                message: "not a file path".into(),
            });
        };
        let root = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        Ok(Project {
            root: root.to_path_buf(),
            plan_file: name.to_string_lossy().into_owned(),
        })
    }

    /// Writes a new project directory.
    pub fn create(
        root: impl AsRef<Path>,
        source: &str,
        provisions: &BTreeMap<String, String>,
        agents: Option<&AgentConfig>,
    ) -> Result<Project, ProjectError> {
        let root = root.as_ref().to_path_buf();
        let pdir = root.join("provisions");
        fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
        let plan = root.join(PLAN_FILE);
        fs::write(&plan, source).map_err(io_err(&plan))?;
        for (name, text) in provisions {
            if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
                return Err(ProjectError::Invalid {
                    path: pdir.clone(),
                    message: format!("bad provision name `{name}`"),
                });
            }
            let path = pdir.join(format!("{name}.txt"));
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        if let Some(cfg) = agents {
            let path = root.join(AGENTS_FILE);
            let text = serde_json::to_string_pretty(cfg).expect("config serializes");
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(Project {
            root,
            plan_file: PLAN_FILE.to_string(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "project".into())
    }

    pub fn plan_path(&self) -> PathBuf {
        self.root.join(&self.plan_file)
    }

    pub fn build_dir(&self) -> PathBuf {
        self.root.join("build")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.root.join("output")
    }

    pub fn source(&self) -> Result<String, ProjectError> {
        let path = self.plan_path();
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    /// Provision files keyed by file stem.
    pub fn provisions(&self) -> Result<BTreeMap<String, Provision>, ProjectError> {
        let dir = self.root.join("provisions");
        let mut out = BTreeMap::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        for entry in entries {
            let path = entry.map_err(io_err(&dir))?.path();
            if !path.is_file() {
                continue;
            }
            let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
                continue;
            };
            let content = fs::read_to_string(&path).map_err(io_err(&path))?;
            out.insert(stem, Provision { content });
        }
        Ok(out)
    }

    pub fn compile(&self) -> Result<Compiled, ProjectError> {
        let plan = compile(&self.source()?)?;
        let bundle = activate(&plan, &self.provisions()?)?;
        let narrative = generate_narrative(&plan);
        Ok(Compiled { plan, bundle, narrative })
    }

    /// Writes the four build artifacts and returns their paths.
    pub fn write_artifacts(&self, compiled: &Compiled) -> Result<Vec<PathBuf>, ProjectError> {
        let dir = self.build_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let files = [
            (NCD_FILE, pretty(&NcdDocument::new(&compiled.plan))),
            (NCN_FILE, compiled.narrative.clone()),
            (INFERENCE_REPO_FILE, pretty(&compiled.bundle.inference_repo)),
            (CONCEPT_REPO_FILE, pretty(&compiled.bundle.concept_repo)),
        ];
        let mut written = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Whether the build artifacts exist and were compiled from the current
    /// source.
    pub fn artifacts_fresh(&self) -> Result<bool, ProjectError> {
        let path = self.build_dir().join(NCD_FILE);
        let Ok(text) = fs::read_to_string(&path) else {
            return Ok(false);
        };
        let Ok(doc) = serde_json::from_str::<NcdDocument>(&text) else {
            return Ok(false);
        };
        Ok(doc.plan.source_digest == Digest::of_bytes(self.source()?.as_bytes()))
    }

    pub fn agent_config(&self) -> Result<AgentConfig, ProjectError> {
        let path = self.root.join(AGENTS_FILE);
        if !path.is_file() {
            return Ok(AgentConfig::default());
        }
        Ok(AgentConfig::load(&path)?)
    }

    pub fn agents(&self) -> Result<AgentRegistry, ProjectError> {
        Ok(AgentRegistry::from_config(&self.agent_config()?, &self.root)?)
    }

    /// Default inputs from `inputs.json`; empty when the file is absent.
    pub fn default_inputs(&self) -> Result<BTreeMap<String, Reference>, ProjectError> {
        let path = self.root.join(INPUTS_FILE);
        if !path.is_file() {
            return Ok(BTreeMap::new());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let raw: BTreeMap<String, Value> = serde_json::from_str(&text).map_err(|e| ProjectError::Invalid {
            path: path.clone(),
            message: e.to_string(),
        })?;
        parse_inputs(&raw).map_err(|message| ProjectError::Invalid { path, message })
    }

    pub fn store(&self) -> Result<CaseStore, ProjectError> {
        Ok(CaseStore::open(self.store_dir())?)
    }

    pub fn resolver(&self) -> DefaultResolver {
        DefaultResolver::new().with_base_dir(&self.root)
    }

    /// Run context over this project's store, agents and resolver.
    pub fn context(&self, agents: AgentRegistry) -> Result<RunContext, ProjectError> {
        let mut ctx = RunContext::new(Arc::new(self.store()?), Arc::new(agents), Arc::new(self.resolver()));
        ctx.output_dir = Some(self.output_dir());
        Ok(ctx)
    }
}

/// Parses an input map of lenient JSON values.
pub fn parse_inputs(raw: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Reference>, String> {
    raw.iter()
        .map(|(k, v)| {
            Reference::from_input_value(v)
                .map(|r| (k.clone(), r))
                .map_err(|e| format!("input `{k}`: {e}"))
        })
        .collect()
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_compile_and_detect_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("p");
        let provisions = BTreeMap::from([("style".to_string(), "terse".to_string())]);
        let project = Project::create(
            &root,
            "{a}\n    <= \"use the style\"({s})\n    {s}\n        <- sign(\"prov://style\")\n",
            &provisions,
            None,
        )
        .unwrap();
        assert!(!project.artifacts_fresh().unwrap());
        let compiled = project.compile().unwrap();
        let written = project.write_artifacts(&compiled).unwrap();
        assert_eq!(written.len(), 4);
        assert!(project.artifacts_fresh().unwrap());
        fs::write(project.plan_path(), "{a}\n    <- \"changed\"\n").unwrap();
        assert!(!project.artifacts_fresh().unwrap());
        assert_eq!(
            fs::read_to_string(project.build_dir().join(NCN_FILE)).unwrap(),
            compiled.narrative
        );
    }

    #[test]
    fn lenient_inputs() {
        let raw: BTreeMap<String, Value> = serde_json::from_str(
            r#"{"a": "text", "b": 3, "c": {"schema": "nc-ref/1", "axes": [{"name": "x", "length": 1}], "cells": [{"bool": true}]}}"#,
        )
        .unwrap();
        let inputs = parse_inputs(&raw).unwrap();
        assert_eq!(inputs["a"], Reference::text("text"));
        assert_eq!(inputs["c"].axis_len("x"), Some(1));
        let bad: BTreeMap<String, Value> = serde_json::from_str(r#"{"a": null}"#).unwrap();
        assert!(parse_inputs(&bad).is_err());
    }
}
