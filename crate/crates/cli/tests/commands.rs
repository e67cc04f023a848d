use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_transbench");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn gen(dir: &Path, name: &str, count: &str, seed: &str) -> String {
    let out = p(dir, name);
    let o = run(&["gen", "--count", count, "--seed", seed, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty(), "chatter must stay on stderr");
    out
}

#[test]
fn gen_is_byte_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let a = gen(d.path(), "a.jsonl", "10", "1");
    let b = gen(d.path(), "b.jsonl", "10", "1");
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["gen", "--count", "0", "--out", &p(d.path(), "x")]).status.code(), Some(2));
    assert_eq!(run(&["validate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_1() {
    let o = run(&["stats", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_command_has_help() {
    for args in [
        vec!["--help"],
        vec!["gen", "--help"],
        vec!["validate", "--help"],
        vec!["eval", "--help"],
        vec!["bench", "package", "--help"],
        vec!["stats", "--help"],
    ] {
        let o = run(&args);
        assert!(o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
    let help = String::from_utf8_lossy(&run(&["eval", "--help"]).stdout).into_owned();
    for flag in ["--pairs", "--candidates", "--cc", "--jobs", "--serial-timing", "--timeout-run", "--report", "--baseline"] {
        assert!(help.contains(flag), "missing {flag}");
    }
}

fn rewrite_line(path: &str, line: usize, edit: impl FnOnce(&mut Value)) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: Value = serde_json::from_str(&lines[line]).unwrap();
    edit(&mut v);
    lines[line] = serde_json::to_string(&v).unwrap();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn validate_reports_violations_by_pair() {
    let d = tempfile::tempdir().unwrap();
    let c = gen(d.path(), "c.jsonl", "6", "2");
    assert!(run(&["validate", "--corpus", &c]).status.success());

    let edge = p(d.path(), "edge.jsonl");
    std::fs::copy(&c, &edge).unwrap();
    rewrite_line(&edge, 5, |v| {
        let e = &mut v["graph"]["edges"][0];
        e[2] = Value::from(e[2].as_u64().unwrap() + 3);
    });
    let o = run(&["validate", "--corpus", &edge]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pair 5:"));

    let tvm = p(d.path(), "tvm.jsonl");
    std::fs::copy(&c, &tvm).unwrap();
    rewrite_line(&tvm, 1, |v| {
        let s = v["cpu_src"].as_str().unwrap().replace("#include <stdint.h>", "#include <stdint.h>\n// (((TVMValue*)args)[1].v_handle)");
        v["cpu_src"] = Value::from(s);
    });
    let o = run(&["validate", "--corpus", &tvm]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("pair 1:") && err.contains("TVMValue"), "{err}");
}

#[test]
fn validate_single_graph() {
    let d = tempfile::tempdir().unwrap();
    let g = p(d.path(), "g.json");
    std::fs::write(
        &g,
        r#"{"edges":[[0,1,0]],"nodes":[{"attrs":{},"dtype":"f32","id":0,"kind":"input","op":null,"shape":[36,9]},{"attrs":{},"dtype":"f32","id":1,"kind":"op","op":"cos","shape":[36,9]}],"outputs":[1]}"#,
    )
    .unwrap();
    let o = run(&["validate", "--graph", &g]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["ok"], Value::Bool(true));

    std::fs::write(&g, r#"{"edges":[],"nodes":[{"attrs":{},"dtype":"f32","id":0,"kind":"input","op":null,"shape":[36,9]},{"attrs":{},"dtype":"f32","id":1,"kind":"op","op":"cos","shape":[36,9]}],"outputs":[1]}"#).unwrap();
    let o = run(&["validate", "--graph", &g]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_self_candidates_all_execute() {
    let d = tempfile::tempdir().unwrap();
    let c = gen(d.path(), "c.jsonl", "4", "3");
    let cands = d.path().join("cands");
    std::fs::create_dir(&cands).unwrap();
    for line in std::fs::read_to_string(&c).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let id = v["pair_id"].as_u64().unwrap();
        std::fs::write(cands.join(format!("{id}.c")), v["cpu_src"].as_str().unwrap()).unwrap();
    }
    let report = p(d.path(), "r.json");
    let o = run(&[
        "eval", "--pairs", &c, "--candidates", &cands.to_string_lossy(), "--jobs", "2", "--reps", "3", "--warmup",
        "1", "--report", &report,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["aggregate"]["execute_pass"], Value::from(1.0));
    assert_eq!(r["aggregate"]["compile_pass"], Value::from(1.0));
    assert_eq!(r["pairs"].as_array().unwrap().len(), 4);
    assert!(r["aggregate"]["mean_speedup"].as_f64().unwrap() > 0.0);

    // an empty candidate directory scores zero without failing the command
    let empty = d.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&["eval", "--pairs", &c, "--candidates", &empty.to_string_lossy(), "--report", &report]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["aggregate"]["compile_pass"], Value::from(0.0));
    assert_eq!(r["aggregate"]["execute_pass"], Value::from(0.0));
}

#[test]
fn stats_histograms_sum_to_node_totals() {
    let d = tempfile::tempdir().unwrap();
    let c = gen(d.path(), "c.jsonl", "10", "4");
    let o = run(&["stats", "--corpus", &c]);
    assert!(o.status.success());
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    let total = s["operator_nodes"].as_u64().unwrap();
    let sum = |k: &str| s[k].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>();
    assert_eq!(sum("operators"), total);
    assert_eq!(sum("categories"), total);
    assert_eq!(s["pairs"], Value::from(10));

    let o = run(&["stats", "--ops"]);
    let ops: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(ops.as_array().unwrap().len(), 18);
}

#[test]
fn bench_package_writes_suite() {
    let d = tempfile::tempdir().unwrap();
    let c = gen(d.path(), "c.jsonl", "100", "5");
    let out = d.path().join("suite");
    let o = run(&[
        "bench", "package", "--corpus", &c, "--level1", "18", "--level2", "10", "--seed", "3", "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["level1_count"], Value::from(18));
    assert_eq!(m["level2_count"], Value::from(10));
    let suite = std::fs::read_to_string(out.join("suite.jsonl")).unwrap();
    assert_eq!(suite.lines().count(), 28);
    let first = m["level1_pairs"][0].as_u64().unwrap();
    for ext in ["cuda.cu", "cpu.c", "ref.c", "harness.c", "graph.json"] {
        assert!(out.join("sources").join(format!("{first}.{ext}")).is_file());
    }
    let o = run(&["bench", "package", "--corpus", &c, "--level1", "500", "--level2", "0", "--out", &out.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = p(d.path(), "cfg.toml");
    std::fs::write(&cfg, "[gen]\ncount = 3\nseed = 9\nlevel1_every = 0\n").unwrap();
    let a = p(d.path(), "a.jsonl");
    assert!(run(&["--config", &cfg, "gen", "--out", &a]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.contains("\"level\":2")));

    let b = p(d.path(), "b.jsonl");
    assert!(run(&["gen", "--config", &cfg, "--count", "5", "--out", &b]).status.success());
    assert_eq!(std::fs::read_to_string(&b).unwrap().lines().count(), 5);

    std::fs::write(&cfg, "[gen]\nunknown_key = 1\n").unwrap();
    assert_eq!(run(&["--config", &cfg, "gen", "--out", &b]).status.code(), Some(1));
}
