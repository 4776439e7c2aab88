//! Deriving new runs from retained checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::Utc;
use serde::Serialize;

use super::{CaseStore, Checkpoint, RunBase, RunId, RunOrigin, RunRecord, StoreError, CHECKPOINT_SCHEMA};
use crate::events::RunPhase;
use crate::flow::NodeAddr;
use crate::orchestrator::{derive_expansions, instance_closure, PlanResolver, RuntimePlan, Status};
use crate::reference::{Reference, ReferenceError, Resolver};

/// Starts a new run from the context of `address`'s latest checkpoint in
/// `run`. Completed instances keep their values; everything else is
/// re-executed. Every sign seen so far must still resolve.
pub fn fork(
    store: &CaseStore,
    resolver: Arc<dyn Resolver>,
    run: &RunId,
    address: &NodeAddr,
) -> Result<RunId, StoreError> {
    let record = store.get_run(run)?;
    let plan = store.get_plan(&record.plan_digest)?;
    let m = store.retrieve(run, address)?;
    let resolver = PlanResolver::new(&plan, resolver);
    for entry in m.env.values() {
        resolver.fetch(&entry.uri).map_err(|e| match e {
            ReferenceError::UnresolvableSign { .. } => e,
            other => ReferenceError::UnresolvableSign {
                uri: entry.uri.clone(),
                reason: other.to_string(),
            },
        })?;
    }
    let blackboard = m
        .checkpoint
        .blackboard
        .iter()
        .map(|(a, s)| (a.clone(), if s == Status::Completed { s } else { Status::Pending }))
        .collect();
    let concepts = m.concepts.iter().map(|(a, r)| (a.clone(), r.digest())).collect();
    let now = Utc::now();
    let new = RunRecord {
        run_id: RunId::generate(),
        plan_digest: record.plan_digest.clone(),
        plan_name: record.plan_name.clone(),
        origin: RunOrigin::Fork {
            run: run.clone(),
            address: address.clone(),
        },
        created_at: now,
        updated_at: now,
        phase: RunPhase::Created,
        inputs: record.inputs.clone(),
        breakpoints: BTreeSet::new(),
        released: BTreeSet::new(),
        base: RunBase {
            blackboard,
            concepts,
            env: m.env,
        },
        session: None,
    };
    store.insert_run(&new)?;
    Ok(new.run_id)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverrideOutcome {
    pub run_id: RunId,
    /// Previously completed instances downstream of the override.
    pub stale: BTreeSet<NodeAddr>,
    /// Loop body instances dropped because their collection changed; they
    /// are recreated when the collection is available again.
    pub dropped: BTreeSet<NodeAddr>,
}

/// Replaces the value of a completed instance in a new run derived from
/// `run`'s latest state and marks everything downstream Stale.
pub fn override_value(
    store: &CaseStore,
    run: &RunId,
    address: &NodeAddr,
    value: Reference,
) -> Result<OverrideOutcome, StoreError> {
    let record = store.get_run(run)?;
    let plan = RuntimePlan::new(store.get_plan(&record.plan_digest)?);
    if plan.node(&address.flow).is_none() {
        return Err(StoreError::UnknownNode(address.clone()));
    }
    let snap = store.latest_state(&record)?;
    if !snap.blackboard.is_completed(address) {
        return Err(StoreError::NotCompleted(address.clone()));
    }
    let old_digest = snap
        .concepts
        .get(address)
        .ok_or_else(|| StoreError::NotCompleted(address.clone()))?;
    let old = store.get_object(old_digest)?;
    let expected: Vec<String> = old.axis_names().iter().map(|s| s.to_string()).collect();
    let got: Vec<String> = value.axis_names().iter().map(|s| s.to_string()).collect();
    if expected != got {
        return Err(StoreError::ShapeMismatch {
            address: address.clone(),
            expected,
            got,
        });
    }

    let expansions = derive_expansions(&plan, &snap.blackboard, |a| {
        snap.concepts.get(a).and_then(|d| store.get_object(d).ok())
    });
    let closure = instance_closure(&plan, &snap.blackboard, &expansions, address);
    let mut board = snap.blackboard.clone();
    let mut concepts = snap.concepts.clone();
    let mut stale = BTreeSet::new();
    for (a, s) in snap.blackboard.iter() {
        let next = match s {
            Status::Completed if closure.contains(a) => {
                stale.insert(a.clone());
                concepts.remove(a);
                Status::Stale
            }
            Status::Failed if closure.contains(a) => Status::Pending,
            Status::Running | Status::Ready | Status::PausedAtBreakpoint => Status::Pending,
            other => other,
        };
        board.set(a.clone(), next);
    }

    // A changed collection invalidates the iteration structure of its loop.
    let mut dropped = BTreeSet::new();
    let changed_collections: Vec<&NodeAddr> = stale.iter().chain(std::iter::once(address)).collect();
    for c in changed_collections {
        let Some(loop_node) = plan.loop_of_collection(&c.flow) else {
            continue;
        };
        let depth = c.iters.len();
        for (a, _) in snap.blackboard.iter() {
            let inside = plan
                .node(&a.flow)
                .is_some_and(|n| n.enclosing_loops.contains(loop_node));
            if inside && a.iters.len() > depth && a.iters[..depth] == c.iters[..] {
                dropped.insert(a.clone());
            }
        }
    }
    for a in &dropped {
        board.remove(a);
        concepts.remove(a);
        stale.remove(a);
    }

    let digest = store.put_object(&value)?;
    concepts.insert(address.clone(), digest.clone());
    let now = Utc::now();
    let new = RunRecord {
        run_id: RunId::generate(),
        plan_digest: record.plan_digest.clone(),
        plan_name: record.plan_name.clone(),
        origin: RunOrigin::Override {
            run: run.clone(),
            address: address.clone(),
        },
        created_at: now,
        updated_at: now,
        phase: RunPhase::Created,
        inputs: record.inputs.clone(),
        breakpoints: record.breakpoints.clone(),
        released: record.released.clone(),
        base: RunBase {
            blackboard: board.clone(),
            concepts,
            env: snap.env.clone(),
        },
        session: None,
    };
    store.insert_run(&new)?;
    store.append_checkpoint(&Checkpoint {
        schema: CHECKPOINT_SCHEMA.to_string(),
        run_id: new.run_id.clone(),
        seq: 0,
        address: address.clone(),
        created_at: now,
        blackboard: board,
        concepts_delta: BTreeMap::from([(address.clone(), digest)]),
        env_delta: Default::default(),
    })?;
    Ok(OverrideOutcome {
        run_id: new.run_id,
        stale,
        dropped,
    })
}
