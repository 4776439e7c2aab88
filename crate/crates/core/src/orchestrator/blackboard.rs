use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flow::NodeAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Pending,
    Ready,
    Running,
    Completed,
    Failed,
    Stale,
    PausedAtBreakpoint,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Status of every node instance known to a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Blackboard(BTreeMap<NodeAddr, Status>);

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, addr: &NodeAddr) -> Option<Status> {
        self.0.get(addr).copied()
    }

    pub fn set(&mut self, addr: NodeAddr, status: Status) -> Option<Status> {
        self.0.insert(addr, status)
    }

    pub fn remove(&mut self, addr: &NodeAddr) -> Option<Status> {
        self.0.remove(addr)
    }

    pub fn contains(&self, addr: &NodeAddr) -> bool {
        self.0.contains_key(addr)
    }

    pub fn is_completed(&self, addr: &NodeAddr) -> bool {
        self.get(addr) == Some(Status::Completed)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeAddr, Status)> {
        self.0.iter().map(|(a, s)| (a, *s))
    }

    pub fn with_status(&self, status: Status) -> impl Iterator<Item = &NodeAddr> {
        self.0.iter().filter(move |(_, s)| **s == status).map(|(a, _)| a)
    }

    pub fn counts(&self) -> BTreeMap<Status, usize> {
        let mut out = BTreeMap::new();
        for s in self.0.values() {
            *out.entry(*s).or_insert(0) += 1;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<NodeAddr, Status> {
        &self.0
    }
}

impl FromIterator<(NodeAddr, Status)> for Blackboard {
    fn from_iter<T: IntoIterator<Item = (NodeAddr, Status)>>(iter: T) -> Self {
        Blackboard(iter.into_iter().collect())
    }
}

/// Ready instances not yet dispatched, popped lowest address first.
#[derive(Debug, Clone, Default)]
pub struct Waitlist(BTreeSet<NodeAddr>);

impl Waitlist {
    pub fn push(&mut self, addr: NodeAddr) {
        self.0.insert(addr);
    }

    pub fn pop(&mut self) -> Option<NodeAddr> {
        self.0.pop_first()
    }

    pub fn remove(&mut self, addr: &NodeAddr) -> bool {
        self.0.remove(addr)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeAddr> {
        self.0.iter()
    }
}
