use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use graphviz_rust::dot_structures::{Graph, Stmt};
use serde_json::Value;
use tempfile::TempDir;
use toolgraph_rl::trajectory::{write_corpus, ActionRecord, ExecutionOutcome, Step, Trajectory};

fn toolgraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolgraph"))
        .current_dir(dir)
        .args(args)
        .env_remove("TOOLGRAPH__SIM__SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fails(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty(), "errors go to stderr only");
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json_lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write_small_config(dir: &Path, extra: &str) {
    std::fs::write(dir.join("cfg.toml"), format!("[sim]\nbatch_tasks = 2\nrollout_num = 4\n{extra}")).unwrap();
}

#[test]
fn train_smoke_writes_all_outputs() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "[paths]\nmetrics_out = \"out/metrics.jsonl\"\ngraph_store = \"out/graph.json\"\n");
    let stdout = ok(&toolgraph(d.path(), &["-c", "cfg.toml", "train", "--iterations", "2", "--quiet"]));
    assert!(stdout.contains("iterations        2"));
    let metrics = std::fs::read_to_string(d.path().join("out/metrics.jsonl")).unwrap();
    assert_eq!(json_lines(&metrics).len(), 2);
    assert!(d.path().join("out/graph.json").exists());
    assert!(d.path().join("policy.json").exists());
}

#[test]
fn missing_dataset_is_an_actionable_error() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "[paths]\ndataset = \"nope.jsonl\"\n");
    let err = fails(&toolgraph(d.path(), &["-c", "cfg.toml", "train", "--iterations", "1"]));
    assert!(err.contains("nope.jsonl") && err.contains("toolgraph dataset"), "{err}");
}

#[test]
fn invalid_config_names_the_section() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "[graph]\nsimilarity_threshold = 1.5\n");
    assert!(fails(&toolgraph(d.path(), &["-c", "cfg.toml", "config", "show"])).contains("[graph]"));
    std::fs::write(d.path().join("bad.toml"), "[sim]\nbogus = 1\n").unwrap();
    fails(&toolgraph(d.path(), &["-c", "bad.toml", "config", "show"]));
}

#[test]
fn dataset_file_drives_training() {
    let d = TempDir::new().unwrap();
    ok(&toolgraph(d.path(), &["dataset", "--out", "tasks.jsonl", "--num-tasks", "5"]));
    let text = std::fs::read_to_string(d.path().join("tasks.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
    write_small_config(d.path(), "[paths]\ndataset = \"tasks.jsonl\"\n");
    ok(&toolgraph(d.path(), &["-c", "cfg.toml", "train", "--iterations", "1", "--quiet"]));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "");
    let run = |name: &str, workers: &str| {
        let m = format!("{name}.jsonl");
        let out = Command::new(env!("CARGO_BIN_EXE_toolgraph"))
            .current_dir(d.path())
            .args(["-c", "cfg.toml", "train", "--seed", "7", "--iterations", "5", "--quiet", "--workers", workers])
            .env("TOOLGRAPH__PATHS__METRICS_OUT", &m)
            .env("TOOLGRAPH__PATHS__GRAPH_STORE", format!("{name}.graph.json"))
            .output()
            .unwrap();
        ok(&out);
        (std::fs::read(d.path().join(&m)).unwrap(), std::fs::read(d.path().join(format!("{name}.graph.json"))).unwrap())
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "3"));
}

#[test]
fn config_dump_is_behavior_identical() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "[advantage]\nomega = 0.5\n");
    let shown = ok(&toolgraph(d.path(), &["-c", "cfg.toml", "config", "show"]));
    std::fs::write(d.path().join("dumped.toml"), &shown).unwrap();
    assert_eq!(shown, ok(&toolgraph(d.path(), &["-c", "dumped.toml", "config", "show"])));
    for (c, m) in [("cfg.toml", "x.jsonl"), ("dumped.toml", "y.jsonl")] {
        let out = Command::new(env!("CARGO_BIN_EXE_toolgraph"))
            .current_dir(d.path())
            .args(["-c", c, "train", "--iterations", "3", "--quiet"])
            .env("TOOLGRAPH__PATHS__METRICS_OUT", m)
            .output()
            .unwrap();
        ok(&out);
    }
    assert_eq!(std::fs::read(d.path().join("x.jsonl")).unwrap(), std::fs::read(d.path().join("y.jsonl")).unwrap());
}

#[test]
fn template_marks_unsourced_defaults() {
    let d = TempDir::new().unwrap();
    let t = ok(&toolgraph(d.path(), &["config", "template"]));
    assert!(t.contains("learning_rate = 0.5  # non-paper default"));
    assert!(t.lines().any(|l| l == "rollout_num = 8"));
    std::fs::write(d.path().join("t.toml"), &t).unwrap();
    ok(&toolgraph(d.path(), &["-c", "t.toml", "config", "show"]));
}

fn answer_only(task: &str, rollout: usize, outcome: bool) -> Trajectory {
    let mut t = Trajectory::new(task, rollout);
    t.push(Step::action(0, ActionRecord::answer("\\boxed{1}")));
    t.outcome = outcome;
    t
}

fn search_then_answer(task: &str, rollout: usize, outcome: bool) -> Trajectory {
    let mut t = Trajectory::new(task, rollout);
    let args = BTreeMap::from([("query".to_owned(), Value::from("x"))]);
    t.push(Step::action(0, ActionRecord::tool_call("search", args).with_execution(ExecutionOutcome::ok("r", 1))));
    t.push(Step::action(0, ActionRecord::answer("\\boxed{1}")));
    t.outcome = outcome;
    t
}

fn write(dir: &Path, name: &str, ts: &[Trajectory]) {
    let mut buf = Vec::new();
    write_corpus(&mut buf, ts).unwrap();
    std::fs::write(dir.join(name), buf).unwrap();
}

#[test]
fn advantages_pair_normalization() {
    let d = TempDir::new().unwrap();
    write(d.path(), "c.jsonl", &[answer_only("t", 0, true), answer_only("t", 1, false)]);
    let recs = json_lines(&ok(&toolgraph(d.path(), &["advantages", "--corpus", "c.jsonl", "--rescore"])));
    assert_eq!(recs.len(), 2);
    assert!((recs[0]["a_e"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((recs[1]["a_e"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!(recs.iter().all(|r| r["anchor"].is_null() && r["a_s"].is_null()));
}

#[test]
fn advantages_shared_tool_forms_an_anchor_group() {
    let d = TempDir::new().unwrap();
    write(d.path(), "c.jsonl", &[search_then_answer("t", 0, true), search_then_answer("t", 1, false)]);
    let recs = json_lines(&ok(&toolgraph(d.path(), &["advantages", "--corpus", "c.jsonl", "--rescore"])));
    let anchored: Vec<_> = recs.iter().filter(|r| r["anchor"] == "tool:search").collect();
    assert_eq!(anchored.len(), 2);
    let a: Vec<f64> = anchored.iter().map(|r| r["a_s"].as_f64().unwrap()).collect();
    assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] + 1.0).abs() < 1e-12);
}

#[test]
fn advantages_empty_and_malformed_corpora() {
    let d = TempDir::new().unwrap();
    std::fs::write(d.path().join("empty.jsonl"), "").unwrap();
    assert_eq!(ok(&toolgraph(d.path(), &["advantages", "--corpus", "empty.jsonl"])), "");
    write(d.path(), "bad.jsonl", &[answer_only("t", 0, true)]);
    let mut text = std::fs::read_to_string(d.path().join("bad.jsonl")).unwrap();
    text.push_str("{not json\n");
    std::fs::write(d.path().join("bad.jsonl"), text).unwrap();
    assert!(fails(&toolgraph(d.path(), &["advantages", "--corpus", "bad.jsonl"])).contains("line 2"));
}

#[test]
fn replay_rescores_and_writes_corpus() {
    let d = TempDir::new().unwrap();
    write(d.path(), "c.jsonl", &[search_then_answer("t", 0, true), answer_only("t", 1, false)]);
    let recs = json_lines(&ok(&toolgraph(d.path(), &["replay", "--corpus", "c.jsonl", "--out", "scored.jsonl"])));
    assert_eq!(recs.len(), 2);
    assert!(recs[0]["return"].as_f64().unwrap() > recs[1]["return"].as_f64().unwrap());
    assert!(recs.iter().all(|r| r["violations"].is_null()));
    assert_eq!(std::fs::read_to_string(d.path().join("scored.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn graph_commands_on_missing_and_empty_stores() {
    let d = TempDir::new().unwrap();
    assert!(fails(&toolgraph(d.path(), &["graph", "stats"])).contains("graph.json"));
    fails(&toolgraph(d.path(), &["retrieve", "--query", "x"]));
    let empty = toolgraph_rl::memory::ToolGraph::new(0.85);
    empty.store(&d.path().join("graph.json")).unwrap();
    let table = ok(&toolgraph(d.path(), &["graph", "stats"]));
    let values: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(values, ["0", "0", "0", "0"]);
}

#[test]
fn dot_export_parses_with_graphviz_grammar() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "");
    ok(&toolgraph(d.path(), &["-c", "cfg.toml", "train", "--iterations", "12", "--quiet"]));
    let dot = ok(&toolgraph(d.path(), &["graph", "export", "--format", "dot"]));
    let g = graphviz_rust::parse(&dot).expect("valid DOT");
    let Graph::DiGraph { stmts, .. } = g else { panic!("expected a digraph") };
    let nodes = stmts.iter().filter(|s| matches!(s, Stmt::Node(_))).count();
    let edges = stmts.iter().filter(|s| matches!(s, Stmt::Edge(_))).count();
    let stats = toolgraph_rl::memory::ToolGraph::load(&d.path().join("graph.json")).unwrap().stats();
    assert_eq!((nodes, edges), (stats.node_count, stats.edge_count));
    assert!(nodes > 0);
    let json = ok(&toolgraph(d.path(), &["graph", "export", "--format", "json"]));
    assert_eq!(toolgraph_rl::memory::ToolGraph::from_json(&json, "stdout").unwrap().stats(), stats);
}

#[test]
fn retrieve_ranks_the_matching_tool_first() {
    let d = TempDir::new().unwrap();
    write_small_config(d.path(), "");
    ok(&toolgraph(d.path(), &["-c", "cfg.toml", "train", "--iterations", "30", "--quiet"]));
    let out = ok(&toolgraph(d.path(), &["retrieve", "--query", "reverse the order of the decimal digits", "--k", "2"]));
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("reverse_digits"), "{out}");
}

#[test]
fn reward_plot_trends_upward_over_a_full_run() {
    let d = TempDir::new().unwrap();
    ok(&toolgraph(d.path(), &["train", "--iterations", "200", "--quiet"]));
    let out = ok(&toolgraph(d.path(), &["metrics", "--plot", "reward", "--out-dir", "plots"]));
    let slope: f64 = out.lines().next().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(slope > 0.0, "{out}");
    assert!(std::fs::read_to_string(d.path().join("plots/reward.svg")).unwrap().starts_with("<svg"));
    let csv = std::fs::read_to_string(d.path().join("plots/reward.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    for kind in ["entropy", "graph-growth"] {
        ok(&toolgraph(d.path(), &["metrics", "--plot", kind, "--out-dir", "plots"]));
    }
}

#[test]
fn env_override_reaches_the_binary() {
    let d = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_toolgraph"))
        .current_dir(d.path())
        .args(["config", "show"])
        .env("TOOLGRAPH__SIM__ROLLOUT_NUM", "3")
        .output()
        .unwrap();
    assert!(ok(&out).lines().any(|l| l == "rollout_num = 3"));
}
