use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nc_bench::layered_plan;
use nc_core::compiler::{dependency_closure, generate_narrative};
use nc_core::orchestrator::agents::EchoAgent;
use nc_core::orchestrator::{AgentRegistry, Run, RunContext, RunOptions};
use nc_core::project::Project;
use nc_core::reference::DefaultResolver;
use nc_core::store::CaseStore;
use nc_core::{activate, compile, parse};

fn front_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("front_end");
    for n in [10, 100, 400] {
        let text = layered_plan(n, 3);
        g.bench_with_input(BenchmarkId::new("parse", n), &text, |b, t| b.iter(|| parse(t).unwrap()));
        g.bench_with_input(BenchmarkId::new("compile", n), &text, |b, t| b.iter(|| compile(t).unwrap()));
        let plan = compile(&text).unwrap();
        g.bench_with_input(BenchmarkId::new("narrative", n), &plan, |b, p| b.iter(|| generate_narrative(p)));
        let seed = "1.1".parse().unwrap();
        g.bench_with_input(BenchmarkId::new("closure", n), &plan, |b, p| {
            b.iter(|| dependency_closure(p, &seed).unwrap())
        });
    }
    g.finish();
}

fn echo_ctx() -> RunContext {
    RunContext::new(
        Arc::new(CaseStore::in_memory()),
        Arc::new(AgentRegistry::single("echo", Arc::new(EchoAgent))),
        Arc::new(DefaultResolver::new()),
    )
}

fn runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    g.sample_size(20);
    for n in [10, 50] {
        let bundle = activate(&compile(&layered_plan(n, 3)).unwrap(), &BTreeMap::new()).unwrap();
        g.bench_with_input(BenchmarkId::new("layered", n), &bundle, |b, bundle| {
            b.iter(|| {
                let mut run = Run::start(echo_ctx(), bundle.clone(), RunOptions::default()).unwrap();
                run.run_to_idle().unwrap()
            })
        });
    }
    let deck = Project::open(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/deck")).unwrap();
    let compiled = deck.compile().unwrap();
    let inputs = deck.default_inputs().unwrap();
    let out = std::env::temp_dir().join("nc-bench-deck");
    g.bench_function("deck", |b| {
        b.iter(|| {
            let mut ctx = RunContext::new(
                Arc::new(CaseStore::in_memory()),
                Arc::new(deck.agents().unwrap()),
                Arc::new(deck.resolver()),
            );
            ctx.output_dir = Some(out.clone());
            let opts = RunOptions { inputs: inputs.clone(), ..Default::default() };
            let mut run = Run::start(ctx, compiled.bundle.clone(), opts).unwrap();
            run.run_to_idle().unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, front_end, runs);
criterion_main!(benches);
