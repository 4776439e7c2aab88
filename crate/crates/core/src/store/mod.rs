//! Case store: plans, runs, content-addressed References, per-node
//! checkpoints, event logs and traces.
//!
//! Layout under the store root:
//!
//! ```text
//! runs.json                       run records keyed by run id
//! plans/<digest>.json             activated plan bundles
//! objects/<digest>                canonical Reference JSON, write-once
//! checkpoints/<run>/<seq>.json    one per completed node instance
//! events/<run>.jsonl              run event log
//! traces/<run>/trace.<kind>.jsonl agent, data and orchestration traces
//! ```
//!
//! The same layout is kept in memory by [`CaseStore::in_memory`].

mod revise;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use revise::{fork, override_value, OverrideOutcome};

use crate::compiler::PlanBundle;
use crate::events::{RunEvent, RunPhase, TraceKind};
use crate::flow::{FlowIndex, NodeAddr};
use crate::orchestrator::{Blackboard, Status};
use crate::reference::{Digest, Reference, ReferenceError};

pub const CHECKPOINT_SCHEMA: &str = "nc-ckpt/1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(String);

impl RunId {
    pub fn generate() -> Self {
        let id = uuid::Uuid::new_v4().simple().to_string();
        RunId(format!("run-{}", &id[..12]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Run ids become file names, so only a safe alphabet is accepted.
    pub fn parse(s: &str) -> Option<Self> {
        let ok = !s.is_empty()
            && s.len() <= 64
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        ok.then(|| RunId(s.to_string()))
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        RunId(s.to_string())
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store entry `{key}`: {reason}")]
    Corrupt { key: String, reason: String },
    #[error("unknown run `{0}`")]
    UnknownRun(RunId),
    #[error("unknown plan `{0}`")]
    UnknownPlan(Digest),
    #[error("missing object `{0}`")]
    MissingObject(Digest),
    #[error("run `{run}` has no checkpoint for {address}")]
    NoCheckpoint { run: RunId, address: NodeAddr },
    #[error("run `{0}` already exists")]
    DuplicateRun(RunId),
    #[error("node {0} has no completed value to override")]
    NotCompleted(NodeAddr),
    #[error("unknown node {0}")]
    UnknownNode(NodeAddr),
    #[error("override shape mismatch at {address}: expected axes {expected:?}, got {got:?}")]
    ShapeMismatch {
        address: NodeAddr,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

/// A sign whose content an agent has seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvEntry {
    pub uri: String,
    pub content_digest: Digest,
}

/// Sign environment keyed by sign id.
pub type EnvMap = BTreeMap<String, EnvEntry>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunOrigin {
    Fresh,
    Fork { run: RunId, address: NodeAddr },
    Override { run: RunId, address: NodeAddr },
}

/// State a run starts from before its own checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunBase {
    pub blackboard: Blackboard,
    pub concepts: BTreeMap<NodeAddr, Digest>,
    pub env: EnvMap,
}

/// Blackboard saved when a session stops, valid while no later checkpoint
/// exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub after_checkpoint: Option<u64>,
    pub blackboard: Blackboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    pub plan_digest: Digest,
    pub plan_name: String,
    pub origin: RunOrigin,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub phase: RunPhase,
    /// Run inputs by concept name or flow index.
    #[serde(default)]
    pub inputs: BTreeMap<String, Digest>,
    #[serde(default)]
    pub breakpoints: BTreeSet<FlowIndex>,
    /// Instances already released from a breakpoint.
    #[serde(default)]
    pub released: BTreeSet<NodeAddr>,
    #[serde(default)]
    pub base: RunBase,
    #[serde(default)]
    pub session: Option<SessionState>,
}

/// Snapshot retained when a node instance completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub run_id: RunId,
    pub seq: u64,
    pub address: NodeAddr,
    pub created_at: DateTime<Utc>,
    /// Full blackboard at retention time.
    pub blackboard: Blackboard,
    pub concepts_delta: BTreeMap<NodeAddr, Digest>,
    #[serde(default)]
    pub env_delta: EnvMap,
}

/// A checkpoint with its concept values and sign environment resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Materialized {
    pub checkpoint: Checkpoint,
    pub concepts: BTreeMap<NodeAddr, Reference>,
    pub env: EnvMap,
}

/// Digest-level run state after some prefix of its checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub blackboard: Blackboard,
    pub concepts: BTreeMap<NodeAddr, Digest>,
    pub env: EnvMap,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseFilter {
    pub run: Option<RunId>,
    /// Matches the checkpoint address exactly, or any instance of a flow
    /// index when the filter has no iteration suffix.
    pub address: Option<NodeAddr>,
    /// Keeps checkpoints whose blackboard holds at least one instance in
    /// this status.
    pub status: Option<Status>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub run_id: RunId,
    pub seq: u64,
    pub address: NodeAddr,
    pub created_at: DateTime<Utc>,
    pub status_counts: BTreeMap<Status, usize>,
}

trait Backend: Send + Sync {
    fn read(&self, key: &str) -> io::Result<Option<Vec<u8>>>;
    fn write(&self, key: &str, bytes: &[u8]) -> io::Result<()>;
    fn append(&self, key: &str, bytes: &[u8]) -> io::Result<()>;
    /// Entry names directly under `dir`.
    fn list(&self, dir: &str) -> io::Result<Vec<String>>;
}

struct FsBackend {
    root: PathBuf,
}

impl Backend for FsBackend {
    fn read(&self, key: &str) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.root.join(key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn write(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.root.join(key);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)
    }

    fn append(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.root.join(key);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(bytes)
    }

    fn list(&self, dir: &str) -> io::Result<Vec<String>> {
        match fs::read_dir(self.root.join(dir)) {
            Ok(rd) => rd
                .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                .collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}

#[derive(Default)]
struct MemBackend {
    entries: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl Backend for MemBackend {
    fn read(&self, key: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.entries.lock().get(key).cloned())
    }

    fn write(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        self.entries.lock().insert(key.to_string(), bytes.to_vec());
        Ok(())
    }

    fn append(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        self.entries
            .lock()
            .entry(key.to_string())
            .or_default()
            .extend_from_slice(bytes);
        Ok(())
    }

    fn list(&self, dir: &str) -> io::Result<Vec<String>> {
        let prefix = format!("{}/", dir.trim_end_matches('/'));
        let entries = self.entries.lock();
        let names: BTreeSet<String> = entries
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .map(|(k, _)| k[prefix.len()..].split('/').next().unwrap_or("").to_string())
            .collect();
        Ok(names.into_iter().collect())
    }
}

const RUNS_KEY: &str = "runs.json";

pub struct CaseStore {
    backend: Box<dyn Backend>,
    root: Option<PathBuf>,
    runs_lock: Mutex<()>,
}

impl fmt::Debug for CaseStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaseStore").field("root", &self.root).finish()
    }
}

fn corrupt(key: &str, reason: impl fmt::Display) -> StoreError {
    StoreError::Corrupt {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

impl CaseStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(CaseStore {
            backend: Box::new(FsBackend { root: root.clone() }),
            root: Some(root),
            runs_lock: Mutex::new(()),
        })
    }

    pub fn in_memory() -> Self {
        CaseStore {
            backend: Box::<MemBackend>::default(),
            root: None,
            runs_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, StoreError> {
        match self.backend.read(key)? {
            None => Ok(None),
            Some(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(key, e)),
        }
    }

    fn read_lines<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Vec<T>, StoreError> {
        let Some(bytes) = self.backend.read(key)? else {
            return Ok(Vec::new());
        };
        let text = String::from_utf8(bytes).map_err(|e| corrupt(key, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| corrupt(key, e)))
            .collect()
    }

    fn append_line<T: Serialize>(&self, key: &str, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(value).map_err(|e| corrupt(key, e))?;
        line.push(b'\n');
        Ok(self.backend.append(key, &line)?)
    }

    /// Content-addressed and idempotent.
    pub fn put_object(&self, r: &Reference) -> Result<Digest, StoreError> {
        let digest = r.digest();
        let key = format!("objects/{digest}");
        if self.backend.read(&key)?.is_none() {
            self.backend.write(&key, r.to_canonical_json().as_bytes())?;
        }
        Ok(digest)
    }

    pub fn get_object(&self, digest: &Digest) -> Result<Reference, StoreError> {
        let key = format!("objects/{digest}");
        let bytes = self
            .backend
            .read(&key)?
            .ok_or_else(|| StoreError::MissingObject(digest.clone()))?;
        let text = String::from_utf8(bytes).map_err(|e| corrupt(&key, e))?;
        Ok(Reference::from_canonical_json(&text)?)
    }

    pub fn object_count(&self) -> Result<usize, StoreError> {
        Ok(self.backend.list("objects")?.len())
    }

    pub fn put_plan(&self, bundle: &PlanBundle) -> Result<Digest, StoreError> {
        let digest = bundle.digest();
        let key = format!("plans/{digest}.json");
        if self.backend.read(&key)?.is_none() {
            let bytes = serde_json::to_vec(bundle).map_err(|e| corrupt(&key, e))?;
            self.backend.write(&key, &bytes)?;
        }
        Ok(digest)
    }

    pub fn get_plan(&self, digest: &Digest) -> Result<PlanBundle, StoreError> {
        self.read_json(&format!("plans/{digest}.json"))?
            .ok_or_else(|| StoreError::UnknownPlan(digest.clone()))
    }

    fn load_runs(&self) -> Result<BTreeMap<RunId, RunRecord>, StoreError> {
        Ok(self.read_json(RUNS_KEY)?.unwrap_or_default())
    }

    fn save_runs(&self, runs: &BTreeMap<RunId, RunRecord>) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(runs).map_err(|e| corrupt(RUNS_KEY, e))?;
        Ok(self.backend.write(RUNS_KEY, &bytes)?)
    }

    pub fn insert_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let _g = self.runs_lock.lock();
        let mut runs = self.load_runs()?;
        if runs.contains_key(&record.run_id) {
            return Err(StoreError::DuplicateRun(record.run_id.clone()));
        }
        runs.insert(record.run_id.clone(), record.clone());
        self.save_runs(&runs)
    }

    pub fn update_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let _g = self.runs_lock.lock();
        let mut runs = self.load_runs()?;
        if !runs.contains_key(&record.run_id) {
            return Err(StoreError::UnknownRun(record.run_id.clone()));
        }
        runs.insert(record.run_id.clone(), record.clone());
        self.save_runs(&runs)
    }

    pub fn get_run(&self, run: &RunId) -> Result<RunRecord, StoreError> {
        self.load_runs()?
            .remove(run)
            .ok_or_else(|| StoreError::UnknownRun(run.clone()))
    }

    /// All runs, oldest first.
    pub fn runs(&self) -> Result<Vec<RunRecord>, StoreError> {
        let mut runs: Vec<RunRecord> = self.load_runs()?.into_values().collect();
        runs.sort_by(|a, b| (a.created_at, &a.run_id).cmp(&(b.created_at, &b.run_id)));
        Ok(runs)
    }

    pub fn append_checkpoint(&self, cp: &Checkpoint) -> Result<(), StoreError> {
        let key = format!("checkpoints/{}/{}.json", cp.run_id, cp.seq);
        if self.backend.read(&key)?.is_some() {
            return Err(corrupt(&key, "checkpoint already written"));
        }
        let bytes = serde_json::to_vec(cp).map_err(|e| corrupt(&key, e))?;
        Ok(self.backend.write(&key, &bytes)?)
    }

    /// Checkpoints of a run in sequence order.
    pub fn checkpoints(&self, run: &RunId) -> Result<Vec<Checkpoint>, StoreError> {
        let mut seqs: Vec<u64> = self
            .backend
            .list(&format!("checkpoints/{run}"))?
            .iter()
            .filter_map(|n| n.strip_suffix(".json")?.parse().ok())
            .collect();
        seqs.sort_unstable();
        seqs.iter()
            .map(|seq| {
                let key = format!("checkpoints/{run}/{seq}.json");
                self.read_json(&key)?.ok_or_else(|| corrupt(&key, "vanished"))
            })
            .collect()
    }

    pub fn append_event(&self, event: &RunEvent) -> Result<(), StoreError> {
        self.append_line(&format!("events/{}.jsonl", event.run_id), event)
    }

    /// Events with `seq >= since`.
    pub fn events(&self, run: &RunId, since: u64) -> Result<Vec<RunEvent>, StoreError> {
        let all: Vec<RunEvent> = self.read_lines(&format!("events/{run}.jsonl"))?;
        Ok(all.into_iter().filter(|e| e.seq >= since).collect())
    }

    pub fn append_trace(&self, run: &RunId, kind: TraceKind, entry: &Value) -> Result<(), StoreError> {
        self.append_line(&format!("traces/{run}/trace.{}.jsonl", kind.as_str()), entry)
    }

    pub fn traces(&self, run: &RunId, kind: TraceKind) -> Result<Vec<Value>, StoreError> {
        self.read_lines(&format!("traces/{run}/trace.{}.jsonl", kind.as_str()))
    }

    /// Run state after checkpoints `..=upto` (all when `None`), starting from
    /// the run's base.
    pub fn state_at(&self, record: &RunRecord, upto: Option<u64>) -> Result<StateSnapshot, StoreError> {
        let mut snap = StateSnapshot {
            blackboard: record.base.blackboard.clone(),
            concepts: record.base.concepts.clone(),
            env: record.base.env.clone(),
            last_seq: None,
        };
        for cp in self.checkpoints(&record.run_id)? {
            if upto.is_some_and(|u| cp.seq > u) {
                break;
            }
            snap.blackboard = cp.blackboard;
            snap.concepts.extend(cp.concepts_delta);
            snap.env.extend(cp.env_delta);
            snap.last_seq = Some(cp.seq);
        }
        snap.concepts.retain(|a, _| snap.blackboard.is_completed(a));
        Ok(snap)
    }

    /// Latest state including the blackboard saved at the end of the last
    /// session.
    pub fn latest_state(&self, record: &RunRecord) -> Result<StateSnapshot, StoreError> {
        let mut snap = self.state_at(record, None)?;
        if let Some(session) = &record.session {
            if session.after_checkpoint == snap.last_seq {
                snap.blackboard = session.blackboard.clone();
                snap.concepts.retain(|a, _| snap.blackboard.is_completed(a));
            }
        }
        Ok(snap)
    }

    fn materialize(&self, record: &RunRecord, cp: Checkpoint) -> Result<Materialized, StoreError> {
        let snap = self.state_at(record, Some(cp.seq))?;
        let concepts = snap
            .concepts
            .iter()
            .map(|(a, d)| Ok((a.clone(), self.get_object(d)?)))
            .collect::<Result<_, StoreError>>()?;
        Ok(Materialized {
            checkpoint: cp,
            concepts,
            env: snap.env,
        })
    }

    /// Latest checkpoint of `address` in `run`, with its full context.
    pub fn retrieve(&self, run: &RunId, address: &NodeAddr) -> Result<Materialized, StoreError> {
        let record = self.get_run(run)?;
        let cp = self
            .checkpoints(run)?
            .into_iter()
            .rev()
            .find(|c| &c.address == address)
            .ok_or_else(|| StoreError::NoCheckpoint {
                run: run.clone(),
                address: address.clone(),
            })?;
        self.materialize(&record, cp)
    }

    pub fn retrieve_seq(&self, run: &RunId, seq: u64) -> Result<Materialized, StoreError> {
        let record = self.get_run(run)?;
        let cp = self
            .checkpoints(run)?
            .into_iter()
            .find(|c| c.seq == seq)
            .ok_or_else(|| corrupt(&format!("checkpoints/{run}/{seq}.json"), "no such checkpoint"))?;
        self.materialize(&record, cp)
    }

    pub fn list_cases(&self, filter: &CaseFilter) -> Result<Vec<CaseSummary>, StoreError> {
        let mut out = Vec::new();
        for record in self.runs()? {
            if filter.run.as_ref().is_some_and(|r| r != &record.run_id) {
                continue;
            }
            for cp in self.checkpoints(&record.run_id)? {
                let addr_ok = match &filter.address {
                    None => true,
                    Some(a) if a.iters.is_empty() => a.flow == cp.address.flow,
                    Some(a) => a == &cp.address,
                };
                let status_ok = filter
                    .status
                    .is_none_or(|s| cp.blackboard.with_status(s).next().is_some());
                let time_ok = filter.since.is_none_or(|t| cp.created_at >= t)
                    && filter.until.is_none_or(|t| cp.created_at <= t);
                if addr_ok && status_ok && time_ok {
                    out.push(CaseSummary {
                        run_id: cp.run_id.clone(),
                        seq: cp.seq,
                        address: cp.address.clone(),
                        created_at: cp.created_at,
                        status_counts: cp.blackboard.counts(),
                    });
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> RunRecord {
        let now = Utc::now();
        RunRecord {
            run_id: RunId::from(id),
            plan_digest: Digest::of_bytes(b"plan"),
            plan_name: "p".into(),
            origin: RunOrigin::Fresh,
            created_at: now,
            updated_at: now,
            phase: RunPhase::Created,
            inputs: BTreeMap::new(),
            breakpoints: BTreeSet::new(),
            released: BTreeSet::new(),
            base: RunBase::default(),
            session: None,
        }
    }

    fn exercise(store: &CaseStore) {
        let r = Reference::text("value");
        let d1 = store.put_object(&r).unwrap();
        let d2 = store.put_object(&r).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(store.object_count().unwrap(), 1);
        assert_eq!(store.get_object(&d1).unwrap(), r);

        let rec = record("run-a");
        store.insert_run(&rec).unwrap();
        assert!(matches!(store.insert_run(&rec), Err(StoreError::DuplicateRun(_))));
        let a: NodeAddr = "1.2".parse().unwrap();
        let board: Blackboard = [(a.clone(), Status::Completed)].into_iter().collect();
        for seq in 0..12 {
            store
                .append_checkpoint(&Checkpoint {
                    schema: CHECKPOINT_SCHEMA.into(),
                    run_id: rec.run_id.clone(),
                    seq,
                    address: a.clone(),
                    created_at: Utc::now(),
                    blackboard: board.clone(),
                    concepts_delta: BTreeMap::from([(a.clone(), d1.clone())]),
                    env_delta: EnvMap::new(),
                })
                .unwrap();
        }
        let cps = store.checkpoints(&rec.run_id).unwrap();
        assert_eq!(cps.iter().map(|c| c.seq).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
        let m = store.retrieve(&rec.run_id, &a).unwrap();
        assert_eq!(m.checkpoint.seq, 11);
        assert_eq!(m.concepts[&a], r);
        store.append_trace(&rec.run_id, TraceKind::Data, &serde_json::json!({"x": 1})).unwrap();
        assert_eq!(store.traces(&rec.run_id, TraceKind::Data).unwrap().len(), 1);
        assert!(store.traces(&rec.run_id, TraceKind::Agent).unwrap().is_empty());
        assert_eq!(store.list_cases(&CaseFilter::default()).unwrap().len(), 12);
    }

    #[test]
    fn memory_backend() {
        exercise(&CaseStore::in_memory());
    }

    #[test]
    fn filesystem_backend() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&CaseStore::open(dir.path()).unwrap());
        assert!(dir.path().join("runs.json").exists());
        assert!(dir.path().join("checkpoints/run-a/11.json").exists());
        let reopened = CaseStore::open(dir.path()).unwrap();
        assert_eq!(reopened.runs().unwrap().len(), 1);
    }

    #[test]
    fn run_ids_are_path_safe() {
        assert!(RunId::parse("run-abc_1").is_some());
        assert!(RunId::parse("../etc").is_none());
        assert!(RunId::parse("").is_none());
        assert!(RunId::generate().as_str().starts_with("run-"));
    }
}
