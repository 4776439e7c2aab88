mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::dag::{arb_dag, Dag, MixAgent};
use common::*;
use nc_core::compiler::PlanBundle;
use nc_core::events::RunPhase;
use nc_core::orchestrator::agents::{match_agent, Agent, AgentRequest, EchoAgent, PatternRule};
use nc_core::orchestrator::builtins::group;
use nc_core::orchestrator::{AgentError, AgentRegistry, Run, RunContext, RunError, RunOptions, Status};
use nc_core::parser::ConceptNode;
use nc_core::reference::{DefaultResolver, Resolver};
use nc_core::store::CaseStore;
use nc_core::{activate, compile, parse, Cell, Derivation, FlowIndex, NodeAddr, Reference, ReferenceError};
use proptest::prelude::*;
use serde_json::{json, Value};

fn addr(s: &str) -> NodeAddr {
    s.parse().unwrap()
}

fn bundle(text: &str) -> PlanBundle {
    activate(&compile(text).unwrap(), &BTreeMap::new()).unwrap()
}

fn ctx_with(agent: Arc<dyn Agent>, resolver: Arc<dyn Resolver>) -> RunContext {
    RunContext::new(
        Arc::new(CaseStore::in_memory()),
        Arc::new(AgentRegistry::single("test", agent)),
        resolver,
    )
}

// ---- loops -------------------------------------------------------------------

#[test]
fn deck_loop_runs_once_per_outline_entry() {
    let (project, compiled) = fixture("deck");
    for n in [0usize, 1, 3] {
        let out = tempfile::tempdir().unwrap();
        let ctx = memory_ctx(&project, scripted_registry("deck"), out.path());
        let mut inputs = inputs(&project);
        inputs.insert("outline".into(), outline(n));
        let mut run = Run::start(ctx, compiled.bundle.clone(), RunOptions { inputs, ..Default::default() }).unwrap();
        let s = run.run_to_idle().unwrap();
        assert_eq!(s.phase, RunPhase::Completed, "{:?}", s.failures);
        assert_eq!(s.counters.semantic_calls, 3 * n);

        let slides = run.value(&addr("1.2")).unwrap();
        assert_eq!(slides.axes()[0].name, "outline");
        assert_eq!(slides.axes()[0].length, n);
        let bodies: BTreeSet<u32> = run
            .blackboard()
            .iter()
            .filter(|(a, _)| a.flow == "1.2.2".parse().unwrap())
            .map(|(a, _)| a.iters[0])
            .collect();
        assert_eq!(bodies, (0..n as u32).collect());
        for i in 0..n {
            let entry = run.value(&addr(&format!("1.2.2.2.1[i={i}]"))).unwrap();
            assert_eq!(entry, &outline(3).slice("outline", i).unwrap());
        }
        let saved = out.path().join("deck.json");
        assert!(saved.is_file());
    }
}

const GRID: &str = "\
{grid}
    <= collect({row out})
    <* {rows}
    {rows}
    {row out}
        <= collect({cell out})
        <* {cells}
        {cells}
            <= \"Split the row\"({row})
            {row}
                <- {*}
        {cell out}
            <= \"Describe the cell\"({cell})
            {cell}
                <- {*}
";

struct GridAgent;

impl Agent for GridAgent {
    fn invoke(&self, req: &AgentRequest<'_>) -> Result<String, AgentError> {
        let v = req.inputs[0].1.as_scalar().unwrap().render();
        if req.instruction == "Split the row" {
            let cells = (0..3).map(|k| Cell::text(format!("{v}-{k}"))).collect();
            let r = Reference::list("cells", cells).unwrap();
            return Ok(json!({ "reference": r.to_json_value() }).to_string());
        }
        Ok(format!("d({v})"))
    }
}

#[test]
fn nested_loops_expand_per_outer_iteration() {
    let ctx = ctx_with(Arc::new(GridAgent), Arc::new(DefaultResolver::new()));
    let rows = Reference::list("rows", vec![Cell::text("r0"), Cell::text("r1")]).unwrap();
    let inputs = BTreeMap::from([("rows".to_string(), rows)]);
    let mut run = Run::start(ctx, bundle(GRID), RunOptions { inputs, ..Default::default() }).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Completed, "{:?}", s.failures);

    let grid = run.value(&addr("1")).unwrap();
    let shape: Vec<(&str, usize)> = grid.axes().iter().map(|a| (a.name.as_str(), a.length)).collect();
    assert_eq!(shape, vec![("rows", 2), ("cells", 3)]);
    let cells: Vec<String> = grid.cells().iter().map(|c| c.render()).collect();
    let expected: Vec<String> = (0..2)
        .flat_map(|r| (0..3).map(move |k| format!("d(r{r}-{k})")))
        .collect();
    assert_eq!(cells, expected);
    for r in 0..2 {
        for k in 0..3 {
            let a = addr(&format!("1.2.2[i={r}][i={k}]"));
            assert_eq!(run.blackboard().get(&a), Some(Status::Completed));
        }
    }
    // 2 splits + 6 cells
    assert_eq!(s.counters.semantic_calls, 8);
}

#[test]
fn scalar_collection_fails_the_loop() {
    let ctx = ctx_with(Arc::new(GridAgent), Arc::new(DefaultResolver::new()));
    let inputs = BTreeMap::from([("rows".to_string(), Reference::text("just one"))]);
    let mut run = Run::start(ctx, bundle(GRID), RunOptions { inputs, ..Default::default() }).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Failed);
    assert_eq!(s.failures.keys().collect::<Vec<_>>(), vec![&addr("1")]);
    assert!(s.failures[&addr("1")].contains("scalar"));
}

// ---- faults ------------------------------------------------------------------

struct FaultAgent {
    inner: Arc<dyn Agent>,
    target: NodeAddr,
    malformed: bool,
}

impl Agent for FaultAgent {
    fn invoke(&self, req: &AgentRequest<'_>) -> Result<String, AgentError> {
        if req.address == &self.target {
            if self.malformed {
                return Ok("{\"not a reference\": 1}".into());
            }
            return Err(AgentError::Transport("connection reset".into()));
        }
        self.inner.invoke(req)
    }
}

fn ancestors(a: &NodeAddr, loop_flow: &FlowIndex) -> BTreeSet<NodeAddr> {
    let mut out = BTreeSet::new();
    let mut flow = a.flow.clone();
    while let Some(p) = flow.parent() {
        let iters = if p.is_descendant_of(loop_flow) { a.iters.clone() } else { Vec::new() };
        out.insert(NodeAddr::new(p.clone(), iters));
        flow = p;
    }
    out
}

#[test]
fn agent_faults_fail_one_instance_and_block_only_its_readers() {
    let (project, compiled) = fixture("deck");
    let script = fixture_dir("deck").join("script.json");
    let scripted: Arc<dyn Agent> = Arc::new(nc_core::orchestrator::agents::ScriptedAgent::from_file(&script).unwrap());
    let loop_flow: FlowIndex = "1.2".parse().unwrap();
    let semantic: Vec<String> = ["1.2.2.1", "1.2.2.2", "1.2.2.3"]
        .iter()
        .flat_map(|f| (0..3).map(move |i| format!("{f}[i={i}]")))
        .collect();
    for (n, target) in semantic.iter().enumerate() {
        let target = addr(target);
        let out = tempfile::tempdir().unwrap();
        let agent = FaultAgent {
            inner: scripted.clone(),
            target: target.clone(),
            malformed: n % 2 == 1,
        };
        let ctx = memory_ctx(&project, AgentRegistry::single("faulty", Arc::new(agent)), out.path());
        let mut run = Run::start(
            ctx.clone(),
            compiled.bundle.clone(),
            RunOptions { inputs: inputs(&project), ..Default::default() },
        )
        .unwrap();
        let s = run.run_to_idle().unwrap();
        assert_eq!(s.phase, RunPhase::Failed);
        assert_eq!(s.failures.keys().cloned().collect::<Vec<_>>(), vec![target.clone()]);
        let blocked = ancestors(&target, &loop_flow);
        for (a, status) in run.blackboard().iter() {
            let expected = if a == &target {
                Status::Failed
            } else if blocked.contains(a) {
                Status::Pending
            } else {
                Status::Completed
            };
            assert_eq!(status, expected, "{a} with fault at {target}");
        }
        assert!(!out.path().join("deck.json").exists());
        let again = Run::resume(ctx, run.run_id());
        assert!(matches!(again, Err(RunError::Terminal(_))));
    }
}

// ---- scope isolation at run time -------------------------------------------

struct Probe {
    inner: Arc<dyn Agent>,
    calls: Mutex<Vec<(NodeAddr, Vec<String>, String)>>,
}

impl Agent for Probe {
    fn invoke(&self, req: &AgentRequest<'_>) -> Result<String, AgentError> {
        let names = req.inputs.iter().map(|(n, _)| n.clone()).collect();
        self.calls
            .lock()
            .unwrap()
            .push((req.address.clone(), names, req.prompt.to_string()));
        self.inner.invoke(req)
    }
}

/// Declared argument names of every quoted-instruction node, keyed by the
/// flow index obtained by numbering concept lines.
fn declared_args(node: &ConceptNode, flow: String, out: &mut BTreeMap<String, Vec<String>>) {
    if let Some(f) = node.functional() {
        if matches!(f.operator, nc_core::parser::Operator::Instruction(_)) {
            out.insert(flow.clone(), f.args.iter().map(|a| a.name.clone()).collect());
        }
    }
    for (i, c) in node.children.iter().enumerate() {
        declared_args(c, format!("{flow}.{}", i + 1), out);
    }
}

#[test]
fn agents_see_only_their_declared_inputs() {
    for name in MAIN_FIXTURES {
        let (project, compiled) = fixture(name);
        let mut declared = BTreeMap::new();
        declared_args(&parse(&project.source().unwrap()).unwrap().root, "1".into(), &mut declared);

        let probe = Arc::new(Probe {
            inner: Arc::new(AuthorAgent),
            calls: Mutex::new(Vec::new()),
        });
        let out = tempfile::tempdir().unwrap();
        let ctx = memory_ctx(&project, AgentRegistry::single("probe", probe.clone()), out.path());
        let mut run = Run::start(ctx, compiled.bundle, RunOptions { inputs: inputs(&project), ..Default::default() }).unwrap();
        assert_eq!(run.run_to_idle().unwrap().phase, RunPhase::Completed);

        let values: BTreeMap<NodeAddr, String> = run
            .values()
            .iter()
            .filter_map(|(a, r)| Some((a.clone(), r.as_scalar()?.as_text()?.to_string())))
            .filter(|(_, v)| v.len() > 12)
            .collect();
        let calls = probe.calls.lock().unwrap();
        assert!(!calls.is_empty());
        for (a, names, prompt) in calls.iter() {
            assert_eq!(names, &declared[&a.flow.to_string()], "{name} {a}");
            let inputs = run.assemble_inputs(a).unwrap();
            let rendered: Vec<String> = inputs
                .iter()
                .flat_map(|(_, r)| r.cells().iter().map(|c| c.render()))
                .collect();
            for (other, v) in &values {
                let is_input = rendered.iter().any(|r| r.contains(v.as_str()));
                if !is_input && other != a {
                    assert!(!prompt.contains(v.as_str()), "{name}: {a} saw the value of {other}");
                }
            }
        }
    }
}

// ---- signs -------------------------------------------------------------------

struct Counting {
    inner: DefaultResolver,
    fetches: AtomicUsize,
}

impl Resolver for Counting {
    fn fetch(&self, uri: &str) -> Result<Vec<u8>, ReferenceError> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        self.inner.fetch(uri)
    }
}

const SIGN_ONLY: &str = "\
{saved}
    <= save({doc meta}, {path})
    {path}
        <- \"meta.json\"
    {doc meta}
        <= load({doc})
        {doc}
            <- sign(\"file://doc.txt\")
";

const SIGN_SEMANTIC: &str = "\
{summary}
    <= \"Summarize the document\"({doc})
    {doc}
        <- sign(\"file://doc.txt\")
";

#[test]
fn syntactic_runs_never_read_sign_content() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("doc.txt"), "the content").unwrap();
    let counting = Arc::new(Counting {
        inner: DefaultResolver::new().with_base_dir(dir.path()),
        fetches: AtomicUsize::new(0),
    });

    let mut ctx = ctx_with(Arc::new(EchoAgent), counting.clone());
    ctx.output_dir = Some(dir.path().join("out"));
    let mut run = Run::start(ctx.clone(), bundle(SIGN_ONLY), RunOptions::default()).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Completed, "{:?}", s.failures);
    assert_eq!(s.counters.transmutations, 0);
    assert_eq!(counting.fetches.load(Ordering::SeqCst), 0);
    assert!(run.env().is_empty());
    let meta = std::fs::read_to_string(dir.path().join("out/meta.json")).unwrap();
    assert!(meta.contains("file://doc.txt") && !meta.contains("the content"));

    let mut run = Run::start(ctx, bundle(SIGN_SEMANTIC), RunOptions::default()).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.counters.transmutations, 1);
    assert_eq!(counting.fetches.load(Ordering::SeqCst), 1);
    assert!(run.env().values().any(|e| e.uri == "file://doc.txt"));
    let summary = run.value(&addr("1")).unwrap().as_scalar().unwrap().render();
    assert!(summary.contains("the content"));
}

// ---- ordering and parallel batches --------------------------------------------

fn run_dag(dag: &Dag, workers: usize) -> (Run, Vec<NodeAddr>) {
    let mut ctx = ctx_with(Arc::new(MixAgent), Arc::new(DefaultResolver::new()));
    ctx.workers = workers;
    let store = ctx.store.clone();
    let mut run = Run::start(ctx, bundle(&dag.to_ncds()), RunOptions::default()).unwrap();
    assert_eq!(run.run_to_idle().unwrap().phase, RunPhase::Completed);
    let order = store
        .checkpoints(run.run_id())
        .unwrap()
        .into_iter()
        .map(|c| c.address)
        .collect();
    (run, order)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn completion_order_is_topological_and_workers_agree(dag in arb_dag(15, 3)) {
        let plan = compile(&dag.to_ncds()).unwrap();
        let (single, order) = run_dag(&dag, 1);
        let (multi, multi_order) = run_dag(&dag, 4);
        prop_assert_eq!(single.values(), multi.values());
        for order in [&order, &multi_order] {
            let pos = |f: &FlowIndex| order.iter().position(|a| &a.flow == f).unwrap();
            for e in &plan.dep_graph {
                prop_assert!(pos(&e.from) < pos(&e.to));
            }
        }
        // one worker dispatches the lowest ready address each time
        let is_ground = |a: &NodeAddr| matches!(plan.nodes[&a.flow].derivation, Derivation::Ground { .. });
        let dispatched: Vec<&NodeAddr> = order.iter().filter(|a| !is_ground(a)).collect();
        let mut done: BTreeSet<FlowIndex> = order.iter().filter(|a| is_ground(a)).map(|a| a.flow.clone()).collect();
        for a in dispatched {
            let ready: Vec<&FlowIndex> = plan
                .nodes
                .keys()
                .filter(|f| !done.contains(*f))
                .filter(|f| plan.dep_graph.iter().filter(|e| &e.to == *f).all(|e| done.contains(&e.from)))
                .collect();
            prop_assert_eq!(ready.first().copied(), Some(&a.flow));
            done.insert(a.flow.clone());
        }
    }
}

// ---- group -----------------------------------------------------------------------

proptest! {
    #[test]
    fn group_matches_first_occurrence_partition(
        pairs in proptest::collection::vec(("[a-f]{1,3}", 0usize..3), 0..=6)
    ) {
        let keys = ["red", "green", "blue"];
        let items = Reference::list("item", pairs.iter().map(|(t, _)| Cell::text(t.clone())).collect()).unwrap();
        let key_ref = Reference::list("item", pairs.iter().map(|(_, k)| Cell::text(keys[*k])).collect()).unwrap();
        let got = group(&items, &key_ref).unwrap();

        let mut order: Vec<usize> = Vec::new();
        for (_, k) in &pairs {
            if !order.contains(k) {
                order.push(*k);
            }
        }
        prop_assert_eq!(got.axes()[0].name.as_str(), "group");
        prop_assert_eq!(got.axes()[0].length, order.len());
        for (g, k) in order.iter().enumerate() {
            let idx: Vec<usize> = (0..pairs.len()).filter(|i| pairs[*i].1 == *k).collect();
            let members: Vec<Value> = idx.iter().map(|i| Value::String(pairs[*i].0.clone())).collect();
            let expected = json!({ "key": keys[*k], "indices": idx, "members": members });
            prop_assert_eq!(&got.cells()[g], &Cell::Data(expected));
        }
    }
}

// ---- agent rules ---------------------------------------------------------------------

fn glob_regex(pattern: &str) -> regex::Regex {
    let mut re = String::from("^");
    for c in pattern.chars() {
        match c {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
    }
    re.push('$');
    regex::Regex::new(&re).unwrap()
}

fn arb_pattern() -> impl Strategy<Value = String> {
    let part = prop_oneof![Just("1"), Just("2"), Just("3"), Just("12"), Just("*"), Just("?")];
    prop_oneof![
        proptest::collection::vec(part, 1..4).prop_map(|parts| parts.join(".")),
        Just("*".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn match_agent_picks_highest_priority_then_first(
        rules in proptest::collection::vec((arb_pattern(), -2i32..3), 0..6),
        flow in proptest::collection::vec(1u32..13, 1..5),
    ) {
        let rules: Vec<PatternRule> = rules
            .iter()
            .enumerate()
            .map(|(i, (p, prio))| PatternRule::new(p.clone(), format!("agent{i}"), *prio))
            .collect();
        let flow = FlowIndex::from_segments(flow).unwrap();
        let text = flow.to_string();
        let matching: Vec<&PatternRule> = rules.iter().filter(|r| glob_regex(&r.pattern).is_match(&text)).collect();
        let expected = matching
            .iter()
            .map(|r| r.priority)
            .max()
            .and_then(|top| matching.iter().find(|r| r.priority == top).copied());
        prop_assert_eq!(match_agent(&flow, &rules), expected);
    }
}

// ---- breakpoints -------------------------------------------------------------------

#[test]
fn breakpoints_pause_every_instance_until_resumed() {
    let (project, compiled) = fixture("deck");
    let out = tempfile::tempdir().unwrap();
    let ctx = memory_ctx(&project, scripted_registry("deck"), out.path());
    let options = RunOptions {
        inputs: inputs(&project),
        breakpoints: BTreeSet::from(["1.2.2.2".parse().unwrap()]),
        ..Default::default()
    };
    let mut run = Run::start(ctx.clone(), compiled.bundle, options).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Paused);
    let paused: Vec<String> = s.paused.iter().map(|a| a.to_string()).collect();
    assert_eq!(paused, ["1.2.2.2[i=0]", "1.2.2.2[i=1]", "1.2.2.2[i=2]"]);
    assert!(run.value(&addr("1.2.2.2[i=0]")).is_none());

    let mut resumed = Run::resume(ctx.clone(), run.run_id()).unwrap();
    let s = resumed.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Completed, "{:?}", s.failures);
    assert!(s.paused.is_empty());
    let orch = ctx
        .store
        .traces(run.run_id(), nc_core::events::TraceKind::Orchestration)
        .unwrap();
    let kinds = |k: &str| orch.iter().filter(|e| e["event"] == k).count();
    assert_eq!((kinds("pause"), kinds("release")), (3, 3));
    assert!(matches!(Run::resume(ctx, run.run_id()), Err(RunError::Terminal(_))));
}

#[test]
fn unknown_breakpoint_is_rejected() {
    let ctx = ctx_with(Arc::new(MixAgent), Arc::new(DefaultResolver::new()));
    let options = RunOptions {
        breakpoints: BTreeSet::from(["1.9".parse().unwrap()]),
        ..Default::default()
    };
    let err = Run::start(ctx, bundle(SIGN_SEMANTIC), options).unwrap_err();
    assert!(matches!(err, RunError::UnknownBreakpoint(_)));
}

// ---- http agent ----------------------------------------------------------------------

#[test]
fn http_agent_speaks_chat_completions() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use nc_core::orchestrator::agents::HttpAgent;

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut headers = Vec::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            headers.push(line);
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let reply = json!({"choices": [{"message": {"role": "assistant", "content": "a tidy answer"}}]}).to_string();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            reply.len(),
            reply
        )
        .unwrap();
        (headers, serde_json::from_slice::<Value>(&body).unwrap())
    });

    let agent = HttpAgent {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "small".into(),
        api_key: Some("k-123".into()),
        timeout: std::time::Duration::from_secs(5),
    };
    let ctx = ctx_with(Arc::new(agent), Arc::new(DefaultResolver::new()));
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("doc.txt"), "body text").unwrap();
    let mut ctx = ctx;
    ctx.resolver = Arc::new(DefaultResolver::new().with_base_dir(dir.path()));
    let mut run = Run::start(ctx, bundle(SIGN_SEMANTIC), RunOptions::default()).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Completed, "{:?}", s.failures);
    assert_eq!(run.value(&addr("1")).unwrap(), &Reference::text("a tidy answer"));

    let (headers, body) = server.join().unwrap();
    assert!(headers.iter().any(|h| h.trim() == "authorization: Bearer k-123" || h.trim() == "Authorization: Bearer k-123"));
    assert_eq!(body["model"], "small");
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("Summarize the document") && prompt.contains("body text"));
}

#[test]
fn http_agent_transport_failure_fails_the_node() {
    use nc_core::orchestrator::agents::HttpAgent;
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let agent = HttpAgent {
        endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "small".into(),
        api_key: None,
        timeout: std::time::Duration::from_secs(2),
    };
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("doc.txt"), "body text").unwrap();
    let ctx = ctx_with(Arc::new(agent), Arc::new(DefaultResolver::new().with_base_dir(dir.path())));
    let mut run = Run::start(ctx, bundle(SIGN_SEMANTIC), RunOptions::default()).unwrap();
    let s = run.run_to_idle().unwrap();
    assert_eq!(s.phase, RunPhase::Failed);
    assert!(s.failures[&addr("1")].contains("transport"), "{:?}", s.failures);
}
