//! Run event stream. Every status change, retained checkpoint and trace
//! entry is an event; folding a run's events reproduces its blackboard.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::flow::NodeAddr;
use crate::orchestrator::{Blackboard, Status};
use crate::store::RunId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Agent,
    Data,
    #[serde(rename = "orch")]
    Orchestration,
}

impl TraceKind {
    pub const ALL: [TraceKind; 3] = [TraceKind::Agent, TraceKind::Data, TraceKind::Orchestration];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Agent => "agent",
            TraceKind::Data => "data",
            TraceKind::Orchestration => "orch",
        }
    }

    pub fn parse(s: &str) -> Option<TraceKind> {
        match s {
            "agent" => Some(TraceKind::Agent),
            "data" => Some(TraceKind::Data),
            "orch" | "orchestration" => Some(TraceKind::Orchestration),
            _ => None,
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lifecycle of a run as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RunPhase {
    /// Recorded but never executed (fresh, forked or overridden).
    Created,
    Running,
    /// Stopped with instances held at breakpoints.
    Paused,
    Completed,
    /// Stopped with failed instances and nothing left to run.
    Failed,
}

impl RunPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunPhase::Completed | RunPhase::Failed)
    }
}

impl fmt::Display for RunPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    /// `status: null` removes the instance from the blackboard.
    StatusChanged {
        address: NodeAddr,
        status: Option<Status>,
    },
    CheckpointRetained {
        address: NodeAddr,
        checkpoint: u64,
    },
    TraceAppended {
        trace: TraceKind,
        entry: Value,
    },
    RunFinished {
        phase: RunPhase,
        counts: BTreeMap<Status, usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub run_id: RunId,
    /// Dense per-run sequence number starting at 0.
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Replays status changes in order.
pub fn fold<'a>(events: impl IntoIterator<Item = &'a RunEvent>) -> Blackboard {
    let mut board = Blackboard::new();
    for e in events {
        if let EventBody::StatusChanged { address, status } = &e.body {
            match status {
                Some(s) => {
                    board.set(address.clone(), *s);
                }
                None => {
                    board.remove(address);
                }
            }
        }
    }
    board
}
