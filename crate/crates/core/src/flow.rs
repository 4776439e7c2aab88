//! Flow indices and runtime node addresses.
//!
//! A [`FlowIndex`] is the dot-separated static address of a compiled node
//! (`1`, `1.3`, `1.3.2`). A [`NodeAddr`] adds the loop-iteration ordinals
//! of every enclosing loop (`1.3.2[i=4]`), giving each executed instance a
//! stable checkpoint address.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid address `{input}`: {reason}")]
pub struct AddrParseError {
    pub input: String,
    pub reason: &'static str,
}

/// Static address of a compiled node. Ordered lexicographically by segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowIndex(Vec<u32>);

impl FlowIndex {
    pub fn root() -> Self {
        FlowIndex(vec![1])
    }

    pub fn from_segments(segments: Vec<u32>) -> Option<Self> {
        if segments.is_empty() || segments.contains(&0) {
            None
        } else {
            Some(FlowIndex(segments))
        }
    }

    pub fn segments(&self) -> &[u32] {
        &self.0
    }

    /// Index of the `k`-th (1-based) child.
    pub fn child(&self, k: u32) -> Self {
        let mut segments = self.0.clone();
        segments.push(k);
        FlowIndex(segments)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.len() <= 1 {
            None
        } else {
            Some(FlowIndex(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    /// True when `self` lies strictly below `ancestor` in the concept tree.
    pub fn is_descendant_of(&self, ancestor: &FlowIndex) -> bool {
        self.0.len() > ancestor.0.len() && self.0.starts_with(&ancestor.0)
    }
}

impl fmt::Display for FlowIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{seg}")?;
        }
        Ok(())
    }
}

impl FromStr for FlowIndex {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| AddrParseError {
            input: s.to_string(),
            reason,
        };
        if s.is_empty() {
            return Err(err("empty flow index"));
        }
        let segments = s
            .split('.')
            .map(|seg| {
                if seg.is_empty() || !seg.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(err("segments must be positive integers"));
                }
                seg.parse::<u32>()
                    .map_err(|_| err("segment out of range"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        FlowIndex::from_segments(segments).ok_or_else(|| err("segments must be positive integers"))
    }
}

impl Serialize for FlowIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FlowIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Address of one executed instance: a flow index plus the iteration
/// ordinal of every enclosing loop, outermost first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeAddr {
    pub flow: FlowIndex,
    pub iters: Vec<u32>,
}

impl NodeAddr {
    pub fn new(flow: FlowIndex, iters: Vec<u32>) -> Self {
        NodeAddr { flow, iters }
    }

    pub fn plain(flow: FlowIndex) -> Self {
        NodeAddr {
            flow,
            iters: Vec::new(),
        }
    }
}

impl From<FlowIndex> for NodeAddr {
    fn from(flow: FlowIndex) -> Self {
        NodeAddr::plain(flow)
    }
}

impl Ord for NodeAddr {
    fn cmp(&self, other: &Self) -> Ordering {
        self.flow
            .cmp(&other.flow)
            .then_with(|| self.iters.cmp(&other.iters))
    }
}

impl PartialOrd for NodeAddr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.flow)?;
        for i in &self.iters {
            write!(f, "[i={i}]")?;
        }
        Ok(())
    }
}

impl FromStr for NodeAddr {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (flow_part, mut rest) = match s.find('[') {
            Some(pos) => (&s[..pos], &s[pos..]),
            None => (s, ""),
        };
        let flow = flow_part.parse()?;
        let mut iters = Vec::new();
        while !rest.is_empty() {
            let body = rest
                .strip_prefix("[i=")
                .and_then(|r| r.find(']').map(|end| (&r[..end], &r[end + 1..])));
            let Some((num, tail)) = body else {
                return Err(AddrParseError {
                    input: s.to_string(),
                    reason: "iteration suffix must look like [i=N]",
                });
            };
            let n = num.parse::<u32>().map_err(|_| AddrParseError {
                input: s.to_string(),
                reason: "iteration ordinal must be a non-negative integer",
            })?;
            iters.push(n);
            rest = tail;
        }
        Ok(NodeAddr { flow, iters })
    }
}

impl Serialize for NodeAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
