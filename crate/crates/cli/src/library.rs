//! Plan library: a directory of projects listed in `library.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nc_core::orchestrator::agents::AgentConfig;
use nc_core::project::Project;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Failure;

pub const MANIFEST_FILE: &str = "library.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub root: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    projects: BTreeMap<String, Entry>,
}

/// Body of a project creation request: either an existing directory, or a
/// source to write into a new one under the library.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct NewProject {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub provisions: BTreeMap<String, String>,
    #[serde(default)]
    pub agents: Option<AgentConfig>,
    #[serde(default)]
    pub inputs: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug)]
pub struct Library {
    dir: PathBuf,
    manifest: Manifest,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(500, "io_error", format!("{}: {e}", path.display()))
}

pub fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()[..12].to_string()
}

impl Library {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, Failure> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| {
                Failure::new(500, "corrupt_library", format!("{}: {e}", path.display()))
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(io_failure(&path, e)),
        };
        Ok(Library { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save(&self) -> Result<(), Failure> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| io_failure(&path, e))
    }

    pub fn entries(&self) -> &BTreeMap<String, Entry> {
        &self.manifest.projects
    }

    pub fn get(&self, id: &str) -> Result<(&Entry, Project), Failure> {
        let entry = self.manifest.projects.get(id).ok_or_else(|| Failure::not_found("project", id))?;
        Ok((entry, Project::open(&entry.root)?))
    }

    /// Registers an existing project directory under a new id.
    pub fn register(&mut self, name: Option<String>, root: &Path) -> Result<(String, Entry), Failure> {
        let root = root.canonicalize().map_err(|e| {
            Failure::new(422, "invalid_project", format!("{}: {e}", root.display())).with_details(json!({ "path": root }))
        })?;
        if let Some((id, e)) = self.manifest.projects.iter().find(|(_, e)| e.root == root) {
            return Ok((id.clone(), e.clone()));
        }
        let project = Project::open(&root)?;
        let entry = Entry {
            name: name.unwrap_or_else(|| project.name()),
            root,
        };
        let id = new_id();
        self.manifest.projects.insert(id.clone(), entry.clone());
        self.save()?;
        Ok((id, entry))
    }

    pub fn create(&mut self, req: NewProject) -> Result<(String, Entry), Failure> {
        let Some(source) = req.source else {
            let root = req
                .root
                .ok_or_else(|| Failure::bad_request("a new project needs `root` or `source`"))?;
            return self.register(req.name, &root);
        };
        let id = new_id();
        let root = req.root.unwrap_or_else(|| self.dir.join(&id));
        if root.join(nc_core::project::PLAN_FILE).exists() {
            return Err(Failure::conflict(format!("{} already holds a plan", root.display())).with_details(json!({ "root": root })));
        }
        let project = Project::create(&root, &source, &req.provisions, req.agents.as_ref())?;
        if let Some(inputs) = &req.inputs {
            let path = root.join(nc_core::project::INPUTS_FILE);
            let text = serde_json::to_string_pretty(inputs).expect("inputs serialize");
            fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        }
        let entry = Entry {
            name: req.name.unwrap_or_else(|| project.name()),
            root: root.canonicalize().map_err(|e| io_failure(&root, e))?,
        };
        self.manifest.projects.insert(id.clone(), entry.clone());
        self.save()?;
        Ok((id, entry))
    }
}
