//! Random DAG workflows rendered as plans, with a model of their dataflow
//! that does not go through the compiler.
//!
//! Concept `c{i}` is child `i+1` of the root `{r}`. A concept with
//! dependencies reads each one through an import child named after it;
//! a concept without dependencies is a literal seed. The root reads every
//! sink.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use nc_core::orchestrator::agents::{Agent, AgentRequest};
use nc_core::orchestrator::AgentError;
use proptest::prelude::*;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Dag {
    /// deps[i] lists concepts with a smaller index.
    pub deps: Vec<Vec<usize>>,
}

impl Dag {
    pub fn random(rng: &mut impl Rng, n: usize, max_deps: usize) -> Dag {
        let deps = (0..n)
            .map(|i| {
                if i == 0 || rng.gen_bool(0.2) {
                    return Vec::new();
                }
                let k = rng.gen_range(1..=max_deps.min(i));
                let mut d: Vec<usize> = rand::seq::index::sample(rng, i, k).into_vec();
                d.sort_unstable();
                d
            })
            .collect();
        Dag { deps }
    }

    pub fn len(&self) -> usize {
        self.deps.len()
    }

    pub fn name(i: usize) -> String {
        format!("c{i}")
    }

    pub fn sinks(&self) -> Vec<usize> {
        let used: BTreeSet<usize> = self.deps.iter().flatten().copied().collect();
        (0..self.len()).filter(|i| !used.contains(i)).collect()
    }

    pub fn to_ncds(&self) -> String {
        let mut s = String::from("{r}\n");
        let sinks: Vec<String> = self.sinks().iter().map(|i| format!("{{{}}}", Dag::name(*i))).collect();
        writeln!(s, "    <= \"assemble\"({})", sinks.join(", ")).unwrap();
        for (i, deps) in self.deps.iter().enumerate() {
            writeln!(s, "    {{{}}}", Dag::name(i)).unwrap();
            if deps.is_empty() {
                writeln!(s, "        <- \"seed {i}\"").unwrap();
                continue;
            }
            let args: Vec<String> = deps.iter().map(|d| format!("{{{}}}", Dag::name(*d))).collect();
            writeln!(s, "        <= \"derive {i}\"({})", args.join(", ")).unwrap();
            for d in deps {
                writeln!(s, "        {{{}}}", Dag::name(*d)).unwrap();
                writeln!(s, "            <- {{{}}}", Dag::name(*d)).unwrap();
            }
        }
        s
    }

    pub fn root_flow() -> String {
        "1".into()
    }

    pub fn concept_flow(i: usize) -> String {
        format!("1.{}", i + 1)
    }

    pub fn import_flow(&self, i: usize, d: usize) -> String {
        let pos = self.deps[i].iter().position(|x| *x == d).expect("is a dependency");
        format!("1.{}.{}", i + 1, pos + 1)
    }

    /// Every flow string in the plan.
    pub fn flows(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::from([Dag::root_flow()]);
        for (i, deps) in self.deps.iter().enumerate() {
            out.insert(Dag::concept_flow(i));
            for d in deps {
                out.insert(self.import_flow(i, *d));
            }
        }
        out
    }

    /// Flows strictly downstream of `flow`, by depth-first search over the
    /// model.
    pub fn downstream(&self, flow: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![flow.to_string()];
        while let Some(f) = stack.pop() {
            for next in self.readers(&f) {
                if out.insert(next.clone()) {
                    stack.push(next);
                }
            }
        }
        out.remove(flow);
        out
    }

    fn readers(&self, flow: &str) -> Vec<String> {
        if flow == Dag::root_flow() {
            return Vec::new();
        }
        let segs: Vec<usize> = flow.split('.').map(|s| s.parse().unwrap()).collect();
        match segs.len() {
            2 => {
                let c = segs[1] - 1;
                let mut out: Vec<String> = (0..self.len())
                    .filter(|i| self.deps[*i].contains(&c))
                    .map(|i| self.import_flow(i, c))
                    .collect();
                if self.sinks().contains(&c) {
                    out.push(Dag::root_flow());
                }
                out
            }
            3 => vec![Dag::concept_flow(segs[1] - 1)],
            _ => unreachable!("flow {flow}"),
        }
    }

    /// Value of every concept under [`MixAgent`], with some concept values
    /// replaced.
    pub fn evaluate(&self, replaced: &BTreeMap<usize, String>) -> BTreeMap<usize, String> {
        let mut out: BTreeMap<usize, String> = BTreeMap::new();
        for i in 0..self.len() {
            let v = if let Some(v) = replaced.get(&i) {
                v.clone()
            } else if self.deps[i].is_empty() {
                format!("seed {i}")
            } else {
                let parts: Vec<&str> = self.deps[i].iter().map(|d| out[d].as_str()).collect();
                format!("{}({})", Dag::name(i), parts.join(","))
            };
            out.insert(i, v);
        }
        out
    }
}

pub fn arb_dag(max_nodes: usize, max_deps: usize) -> impl Strategy<Value = Dag> {
    (2..=max_nodes, any::<u64>()).prop_map(move |(n, seed)| {
        use rand::SeedableRng;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        Dag::random(&mut rng, n, max_deps)
    })
}

/// `name(input,input,...)` over the scalar renderings of its inputs.
pub struct MixAgent;

impl Agent for MixAgent {
    fn invoke(&self, req: &AgentRequest<'_>) -> Result<String, AgentError> {
        let parts: Vec<String> = req
            .inputs
            .iter()
            .map(|(_, r)| r.as_scalar().map(|c| c.render()).unwrap_or_else(|| "?".into()))
            .collect();
        Ok(format!("{}({})", req.concept, parts.join(",")))
    }
}
