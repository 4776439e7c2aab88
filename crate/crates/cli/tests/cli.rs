mod support;

#[path = "../../core/tests/common/dag.rs"]
#[allow(dead_code)]
mod dag;

use std::fs;
use std::path::Path;

use dag::Dag;
use nc_core::Reference;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use regex::Regex;
use serde_json::{json, Value};
use support::{copy_fixture, nc, nc_json, nc_ok, stderr, stdout};

const ECHO_AGENTS: &str = r#"{"agents":{"echo":{"kind":"echo"}},"rules":[{"pattern":"*","agent":"echo"}]}"#;

fn run_id_of(summary: &str) -> String {
    let re = Regex::new(r"(?m)^run (\S+) (\w+): executed (\d+)").unwrap();
    re.captures(summary).unwrap_or_else(|| panic!("no summary line in\n{summary}"))[1].to_string()
}

fn executed_of(summary: &str) -> usize {
    let re = Regex::new(r"(?m)^run \S+ Completed: executed (\d+)").unwrap();
    re.captures(summary).unwrap_or_else(|| panic!("not completed:\n{summary}"))[1].parse().unwrap()
}

#[test]
fn compile_writes_the_four_artifacts() {
    let (_tmp, root) = copy_fixture("deck");
    let out = nc_ok(&root, &["compile"]);
    let build = root.join("build");
    for f in ["plan.ncd", "plan.ncn", "inference_repo.json", "concept_repo.json"] {
        assert!(build.join(f).is_file(), "{f} missing");
    }
    assert_eq!(out.lines().filter(|l| l.starts_with("wrote ")).count(), 4);
    let v = nc_json(&root, &["compile", "plan.ncds"]);
    assert_eq!(v["artifacts"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(build.join("plan.ncn")).unwrap(), nc_ok(&root, &["narrate"]));
}

#[test]
fn out_of_scope_plan_is_rejected_with_its_site() {
    let (_tmp, root) = copy_fixture("out_of_scope");
    let text = fs::read_to_string(root.join("plan.ncds")).unwrap();
    let (line, column) = text
        .lines()
        .enumerate()
        .find_map(|(n, l)| l.contains("appendix").then_some(()).and(l.find("({notes})").map(|c| (n + 1, c + 2))))
        .unwrap();

    let o = nc(&root, &["compile", "plan.ncds"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("`notes`"), "{err}");
    assert!(err.contains(&format!("plan.ncds:{line}:{column}")), "{err}");
    assert!(!root.join("build").exists());

    let o = nc(&root, &["--json", "compile"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["error"]["code"], "scope_error");
    let d = &v["error"]["details"][0];
    assert_eq!((d["concept"].as_str(), d["line"].as_u64(), d["column"].as_u64()), (Some("notes"), Some(line as u64), Some(column as u64)));
}

fn dag_project(dir: &Path, dag: &Dag) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("plan.ncds"), dag.to_ncds()).unwrap();
    fs::write(dir.join("agents.json"), ECHO_AGENTS).unwrap();
}

#[test]
fn override_then_resume_reexecutes_the_oracle_stale_count() {
    let mut rng = StdRng::seed_from_u64(99);
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("v.txt"), "replacement").unwrap();
    let value = tmp.path().join("v.txt");
    for k in 0..6 {
        let n = rng.gen_range(3..=10);
        let dag = Dag::random(&mut rng, n, 3);
        let root = tmp.path().join(format!("p{k}"));
        dag_project(&root, &dag);
        let run = run_id_of(&nc_ok(&root, &["run"]));
        let flows: Vec<String> = dag.flows().into_iter().filter(|f| f != "1").collect();
        let target = &flows[rng.gen_range(0..flows.len())];
        let expected = dag.downstream(target).len();

        let o = nc_ok(&root, &["override", &run, target, "--value", value.to_str().unwrap()]);
        let re = Regex::new(r"^run (\S+) overrides \S+ in \S+: (\d+) stale").unwrap();
        let caps = re.captures(o.lines().next().unwrap()).unwrap();
        assert_eq!(caps[2].parse::<usize>().unwrap(), expected, "{target}\n{}", dag.to_ncds());
        let resumed = nc_ok(&root, &["resume", &caps[1]]);
        assert_eq!(executed_of(&resumed), expected, "{resumed}");
    }

    // mid-chain: the two later steps
    let (_t, root) = copy_fixture("chain");
    let echo = root.join("echo.json");
    fs::write(&echo, ECHO_AGENTS).unwrap();
    let run = run_id_of(&nc_ok(&root, &["run"]));
    let o = nc_ok(&root, &["override", &run, "1.1.1", "--value", value.to_str().unwrap()]);
    let new = o.split_whitespace().nth(1).unwrap().to_string();
    assert!(o.contains(": 2 stale"), "{o}");
    assert_eq!(executed_of(&nc_ok(&root, &["resume", &new, "--agents", echo.to_str().unwrap()])), 2);
    let values = nc_json(&root, &["inspect", &new]);
    assert_eq!(values["1.1.1"], Reference::text("replacement").to_json_value());
}

#[test]
fn inspect_renders_three_views_of_one_value() {
    let (_t, root) = copy_fixture("deck");
    let run = run_id_of(&nc_ok(&root, &["run"]));
    let all = nc_json(&root, &["inspect", &run]);
    let slides = Reference::from_json_value(&all["1.2"]).unwrap();
    let n = slides.cells().len();
    assert!(n >= 3);

    let table = nc_ok(&root, &["inspect", &run, "1.2", "--view", "table"]);
    assert_eq!(table.lines().count(), n / slides.axes().last().unwrap().length + 2);
    let list = nc_ok(&root, &["inspect", &run, "1.2", "--view", "list"]);
    assert_eq!(list.lines().count(), n);
    let json_view: Value = serde_json::from_str(&nc_ok(&root, &["inspect", &run, "1.2", "--view", "json"])).unwrap();
    assert_eq!(json_view, all["1.2"]);
    let structured = nc_json(&root, &["inspect", &run, "1.2", "--view", "list"]);
    assert_eq!(structured["rendered"].as_str().unwrap(), list);
}

#[test]
fn traces_filter_by_flow_range() {
    let (_t, root) = copy_fixture("deck");
    let run = run_id_of(&nc_ok(&root, &["run"]));
    let data = nc_json(&root, &["trace", &run, "--view", "data"]);
    let ranged = nc_json(&root, &["trace", &run, "--view", "data", "--from", "1.2.2.1", "--to", "1.2.2.1"]);
    let ranged = ranged.as_array().unwrap();
    assert!(!ranged.is_empty());
    assert!(ranged.len() < data.as_array().unwrap().len());
    for e in ranged {
        assert!(e["address"].as_str().unwrap().starts_with("1.2.2.1"), "{e}");
        for input in e["inputs"].as_array().unwrap() {
            assert!(input["reference"].is_object(), "input values are shown: {input}");
        }
    }
    let agent = nc_json(&root, &["trace", &run, "--view", "agent"]);
    assert_eq!(agent.as_array().unwrap().len(), 9);
    let orch = nc_ok(&root, &["trace", &run, "--view", "orch"]);
    assert!(orch.lines().next().unwrap().contains(" start "));
    assert!(orch.lines().last().unwrap().contains(" finish "));
}

#[test]
fn breakpoint_pauses_until_resumed() {
    let (_t, root) = copy_fixture("deck");
    let o = nc(&root, &["run", "--breakpoint", "1.2.2.2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.matches("PausedAtBreakpoint").count(), 3, "{text}");
    let run = Regex::new(r"(?m)^run (\S+) Paused").unwrap().captures(&text).unwrap()[1].to_string();
    let resumed = nc_ok(&root, &["resume", &run]);
    assert!(resumed.contains("Completed: executed"), "{resumed}");
    let again = nc(&root, &["--json", "resume", &run]);
    assert_eq!(again.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert_eq!(v["error"]["code"], "conflict");
}

#[test]
fn inputs_from_flags_and_files() {
    let (_t, root) = copy_fixture("chain");
    let echo = root.join("echo.json");
    fs::write(&echo, ECHO_AGENTS).unwrap();
    let summary = nc_json(&root, &["run", "--input", "topic=kelp forests", "--agents", echo.to_str().unwrap()]);
    let run = summary["run_id"].as_str().unwrap();
    let values = nc_json(&root, &["inspect", run]);
    assert_eq!(values["1.1.1.1.1"], json!(Reference::text("kelp forests").to_json_value()));

    let (_t, deck) = copy_fixture("deck");
    let file = deck.join("one.json");
    let outline = Reference::list("outline", vec![nc_core::Cell::text("Why checkpoints matter")]).unwrap();
    fs::write(&file, outline.to_canonical_json()).unwrap();
    let s = nc_json(&deck, &["run", "--input", &format!("outline=@{}", file.display())]);
    assert_eq!(s["counters"]["semantic_calls"], 3);

    let bad = nc(&root, &["--json", "run", "--input", "nope=1"]);
    assert_eq!(bad.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_eq!(v["error"]["code"], "invalid_inputs");
}

#[test]
fn project_root_from_the_environment() {
    let (_t, root) = copy_fixture("diamond");
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_nc"))
        .args(["--json", "stats"])
        .env("NC_PROJECT_ROOT", &root)
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["semantic"], 4);
}

#[test]
fn fork_runs_and_case_listing() {
    let (_t, root) = copy_fixture("diamond");
    let run = run_id_of(&nc_ok(&root, &["run"]));
    let fork = nc_ok(&root, &["fork", &run, "1.3"]).trim().to_string();
    let resumed = nc_ok(&root, &["resume", &fork]);
    assert_eq!(executed_of(&resumed), 5);
    assert_eq!(nc_ok(&root, &["inspect", &run]), nc_ok(&root, &["inspect", &fork]));

    let runs = nc_json(&root, &["runs"]);
    assert_eq!(runs.as_array().unwrap().len(), 2);
    let cases = nc_json(&root, &["cases", "--run", &fork]);
    assert_eq!(cases.as_array().unwrap().len(), 5);
    let events = nc_json(&root, &["events", &run]);
    let seqs: Vec<u64> = events.as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    let missing = nc(&root, &["--json", "inspect", "run-000000000000"]);
    assert_eq!(missing.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&missing)).unwrap();
    assert_eq!(v["error"]["code"], "not_found");
}
