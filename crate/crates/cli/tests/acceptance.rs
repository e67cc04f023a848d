//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use transbench::builder::{build_graph, build_primitive, BuildError, BuilderConfig};
use transbench::codegen::{emit_cuda, scan_clean, SourceKind, Target};
use transbench::dataset::{
    assemble_pair, generate_corpus, graph_level, read_corpus, write_corpus, CodePair, GenConfig, HardwareLabel,
    Manifest,
};
use transbench::eval::{
    compare_outputs, compile_sources, cuda_syntax_check, evaluate_candidate, evaluate_corpus, reference_outputs,
    run_outputs, Baseline, CompareSpec, EvalOptions, FailureStage, ToolchainConfig,
};
use transbench::graph::ComputationGraph;
use transbench::ops::{default_shape_pool, Attrs, Inventory, TensorSpec};

const BIN: &str = env!("CARGO_BIN_EXE_transbench");
const COS_GOLDEN: &str = include_str!("../../core/tests/golden/cos_36x9.cu");

fn inv() -> &'static Inventory {
    Inventory::global()
}

struct Ledger {
    failed: Vec<String>,
}

impl Ledger {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(format!("{id} {name}"));
        }
    }
}

fn corpus(count: usize, seed: u64) -> Vec<CodePair> {
    let cfg = GenConfig {
        count,
        seed,
        ..Default::default()
    };
    generate_corpus(inv(), &cfg, &HardwareLabel::default()).expect("corpus builds")
}

/// Compiles `src` against the pair harness for `target` and compares with the
/// interpreter under `spec`.
fn differential(pair: &CodePair, target: Target, spec: &CompareSpec) -> Result<(), String> {
    let tc = ToolchainConfig::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (src, entry) = match target {
        Target::CpuReference => (&pair.cpu_ref_src, format!("pair{}_cpu_ref", pair.pair_id)),
        _ => (&pair.cpu_src, format!("pair{}_cpu_opt", pair.pair_id)),
    };
    let built = compile_sources(
        &tc,
        dir.path(),
        "k",
        &[("harness.c", &pair.harness_src), ("kernel.c", src)],
        &[format!("ENTRY={entry}")],
    )
    .map_err(|e| e.to_string())?;
    if !built.ok {
        return Err(built.stderr);
    }
    let actual = run_outputs(&tc, &built.binary).map_err(|e| e.to_string())?;
    let expected = reference_outputs(inv(), pair).map_err(|e| e.to_string())?;
    let r = compare_outputs(&pair.graph, &expected, &actual, spec);
    if r.ok {
        Ok(())
    } else {
        Err(format!("{} mismatches, first {:?}", r.mismatches, r.first_mismatch))
    }
}

fn c1_to_c3(l: &mut Ledger) {
    let t = Instant::now();
    let mut valid = 0;
    let mut exhausted = 0;
    let mut graphs = Vec::new();
    for seed in 0..1000u64 {
        let cfg = BuilderConfig { seed, ..Default::default() };
        match build_graph(inv(), &cfg) {
            Ok((g, _)) => {
                if g.validate(inv()).ok {
                    valid += 1;
                }
                graphs.push(g);
            }
            Err(BuildError::BuildExhausted { .. }) => exhausted += 1,
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    l.record(
        1,
        "builder validity",
        valid == 1000 && exhausted == 0 && secs < 60.0,
        format!("{valid}/1000 valid, {exhausted} exhausted, {secs:.2} s single-threaded (limit 60 s)"),
    );

    let mut same = 0;
    for seed in 0..100u64 {
        let cfg = BuilderConfig { seed, ..Default::default() };
        let a = build_graph(inv(), &cfg).unwrap().0.to_canonical_json();
        let b = build_graph(inv(), &cfg).unwrap().0.to_canonical_json();
        same += (a == b) as usize;
    }
    l.record(2, "builder determinism", same == 100, format!("{same}/100 seeds byte-identical"));

    // ceil(0.4 * 18) = ceil(7.2)
    let cap = 8;
    let mut worst = 0;
    for g in &graphs {
        let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
        for n in g.operator_nodes() {
            *uses.entry(n.op.as_deref().unwrap()).or_default() += 1;
        }
        worst = worst.max(uses.values().copied().max().unwrap_or(0));
    }
    l.record(
        3,
        "usage cap",
        worst <= cap && graphs.len() == 1000,
        format!("max per-graph uses of one operator = {worst} (cap {cap}) over {} graphs", graphs.len()),
    );
}

fn c4(l: &mut Ledger) {
    let pool = default_shape_pool();
    let mut bad = Vec::new();
    let ops: Vec<&str> = inv().operators().map(|o| o.name()).collect();
    for (i, name) in ops.iter().enumerate() {
        let g = build_primitive(inv(), name, i as u64, &pool).unwrap();
        let pair = assemble_pair(inv(), g, i as u64, &Default::default(), i as u64, &HardwareLabel::default()).unwrap();
        let spec = match *name {
            "sort_last_axis" | "topk_values" | "argmax" => CompareSpec { abs_tol: 0.0, rel_tol: 0.0 },
            "matmul" | "conv2d" => CompareSpec { abs_tol: 1e-5, rel_tol: 1e-3 },
            _ => CompareSpec { abs_tol: 1e-5, rel_tol: 1e-4 },
        };
        if let Err(e) = differential(&pair, Target::CpuReference, &spec) {
            bad.push(format!("{name}: {e}"));
        }
    }
    l.record(
        4,
        "oracle equivalence (operators)",
        bad.is_empty() && ops.len() == 18,
        if bad.is_empty() {
            format!("{}/18 operators match (sort/topk/argmax exact)", ops.len())
        } else {
            bad.join("; ")
        },
    );
}

fn c5(l: &mut Ledger) {
    let t = Instant::now();
    let mut graphs = Vec::new();
    let mut seed = 50_000u64;
    while graphs.len() < 200 {
        let cfg = BuilderConfig { seed, ..Default::default() };
        let (g, _) = build_graph(inv(), &cfg).unwrap();
        if graph_level(&g) == 2 {
            graphs.push((seed, g));
        }
        seed += 1;
    }
    let failures: Vec<String> = graphs
        .into_par_iter()
        .enumerate()
        .flat_map(|(i, (seed, g))| {
            let pair = assemble_pair(inv(), g, seed, &Default::default(), i as u64, &HardwareLabel::default()).unwrap();
            [Target::CpuReference, Target::CpuOptimized]
                .into_iter()
                .filter_map(|t| differential(&pair, t, &pair.compare).err().map(|e| format!("seed {seed} {t:?}: {e}")))
                .collect::<Vec<_>>()
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    l.record(
        5,
        "oracle equivalence (graphs)",
        failures.is_empty() && secs < 600.0,
        if failures.is_empty() {
            format!(
                "200 level-2 graphs x 2 kernels match, {secs:.1} s on {} thread(s)",
                rayon::current_num_threads()
            )
        } else {
            format!("{} failures; first: {}", failures.len(), failures[0])
        },
    );
}

fn c6_c9_c11(l: &mut Ledger) {
    let pairs = corpus(200, 900);
    let mut hits = 0;
    for p in &pairs {
        for (text, kind) in [
            (&p.cuda_src, SourceKind::Kernel(Target::Cuda)),
            (&p.cpu_src, SourceKind::Kernel(Target::CpuOptimized)),
            (&p.cpu_ref_src, SourceKind::Kernel(Target::CpuReference)),
            (&p.harness_src, SourceKind::Harness),
        ] {
            hits += scan_clean(text, kind).len();
        }
    }
    l.record(6, "clean code", hits == 0, format!("{hits} violations over 200 pairs x 4 sources"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&pairs, &path).unwrap();
    let back = read_corpus(&path).unwrap();
    let mut stale = 0;
    for p in &back {
        let fresh = assemble_pair(inv(), p.graph.clone(), p.seed, &p.options, p.pair_id, &p.labels.hardware).unwrap();
        let same = fresh.cuda_src == p.cuda_src
            && fresh.cpu_src == p.cpu_src
            && fresh.cpu_ref_src == p.cpu_ref_src
            && fresh.harness_src == p.harness_src;
        stale += (!same) as usize;
    }
    l.record(
        9,
        "round-trip and regeneration",
        back == pairs && stale == 0,
        format!("read(write) identical: {}, {stale}/200 pairs fail to regenerate", back == pairs),
    );

    let mut g = ComputationGraph::new();
    let x = g.add_input(TensorSpec::f32(&[36, 9]));
    g.add_operator(inv(), "cos", Attrs::new(), &[x]).unwrap();
    let golden = emit_cuda(inv(), &g, 0).unwrap().source_text == COS_GOLDEN;
    let tc = ToolchainConfig::default();
    let (syntax_ok, notice) = match cuda_syntax_check(&tc, &pairs[0].cuda_src) {
        None => (true, "; NOTICE: nvcc not found, syntax-only compile skipped".to_string()),
        Some(_) => {
            let bad = pairs
                .par_iter()
                .filter(|p| !matches!(cuda_syntax_check(&tc, &p.cuda_src), Some(Ok(()))))
                .count();
            (bad == 0, format!("; nvcc syntax check: {} / 200 pass", 200 - bad))
        }
    };
    l.record(
        11,
        "cuda emission sanity",
        golden && syntax_ok,
        format!("cos (36, 9) golden kernel matches: {golden}{notice}"),
    );
}

/// First `v<id>[<index>] =` store gets `+ 1` appended to its index.
fn mutate_store(src: &str) -> String {
    let at = src.find("    v").expect("a store");
    let line_end = at + src[at..].find('\n').unwrap();
    let line = &src[at..line_end];
    let close = line.find("] =").expect("store form");
    format!("{}{} + 1{}{}", &src[..at], &line[..close], &line[close..], &src[line_end..])
}

fn c7(l: &mut Ledger) {
    let opts = EvalOptions {
        measure_speedup: false,
        jobs: 2,
        ..Default::default()
    };
    let pairs = corpus(4, 77);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("0.c"), &pairs[0].cpu_src).unwrap();
    std::fs::write(dir.path().join("1.c"), &pairs[1].cpu_ref_src.replace("_cpu_ref", "_cpu_opt")).unwrap();
    std::fs::write(dir.path().join("2.c"), pairs[2].cpu_src.replacen('{', "{ not C at all", 1)).unwrap();
    let report = evaluate_corpus(inv(), &pairs, dir.path(), &opts).unwrap();
    let agg = &report.aggregate;
    let fixture_ok = agg.compile_pass == 0.5 && agg.execute_pass == 0.5 && report.pairs.len() == 4;

    let mut g = ComputationGraph::new();
    let x = g.add_input(TensorSpec::f32(&[36, 9]));
    g.add_operator(inv(), "cos", Attrs::new(), &[x]).unwrap();
    let pair = assemble_pair(inv(), g, 0, &Default::default(), 9, &HardwareLabel::default()).unwrap();
    let mutant = mutate_store(&pair.cpu_src);
    let r = evaluate_candidate(inv(), &pair, Some(&mutant), &opts, None);
    let mutant_ok = r.compile_pass && !r.execute_pass && r.failure_stage == Some(FailureStage::Compare);
    l.record(
        7,
        "metrics correctness",
        fixture_ok && mutant_ok,
        format!(
            "fixture compile_pass {:.2}, execute_pass {:.2}; mutant execute_pass {}, stage {:?}",
            agg.compile_pass, agg.execute_pass, r.execute_pass as u8, r.failure_stage
        ),
    );
}

fn physical_cores() -> Option<u32> {
    transbench::dataset::probe_hardware().physical_cores
}

fn c8(l: &mut Ledger) {
    let mut g = ComputationGraph::new();
    let a = g.add_input(TensorSpec::f32(&[512, 512]));
    let b = g.add_input(TensorSpec::f32(&[512, 512]));
    g.add_operator(inv(), "matmul", Attrs::new(), &[a, b]).unwrap();
    let pair = assemble_pair(inv(), g, 0, &Default::default(), 0, &HardwareLabel::default()).unwrap();
    let opts = EvalOptions {
        baseline: Baseline::Naive,
        warmup: 2,
        reps: 10,
        ..Default::default()
    };
    let r = evaluate_candidate(inv(), &pair, Some(&pair.cpu_src), &opts, None);
    let ratio = r.speedup_ratio.unwrap_or(0.0);
    let cores = physical_cores();
    let note = match cores {
        Some(c) if c >= 4 => String::new(),
        Some(c) => format!(" (host has {c} physical core(s); ratio measured anyway)"),
        None => " (core count unknown)".into(),
    };
    l.record(
        8,
        "speedup demonstration",
        r.execute_pass && ratio >= 2.0,
        format!(
            "512^3 matmul optimized vs naive: {ratio:.2}x (naive {:.1} ms, optimized {:.1} ms){note}",
            r.baseline_ns.unwrap_or(0) as f64 / 1e6,
            r.candidate_ns.unwrap_or(0) as f64 / 1e6
        ),
    );
}

fn cli(args: &[&str]) -> bool {
    Command::new(BIN).args(args).output().expect("binary runs").status.success()
}

fn read_manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn c10(l: &mut Ledger) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &str| d.join(p).to_string_lossy().into_owned();
    let mut ok = cli(&["gen", "--count", "200", "--seed", "11", "--out", &s("c.jsonl")]);
    for out in ["a", "b"] {
        ok &= cli(&[
            "bench", "package", "--corpus", &s("c.jsonl"), "--level1", "18", "--level2", "10", "--seed", "5", "--out",
            &s(out),
        ]);
    }
    let (ma, mb) = (read_manifest(&d.join("a")), read_manifest(&d.join("b")));
    let same_suite = std::fs::read(d.join("a/suite.jsonl")).unwrap() == std::fs::read(d.join("b/suite.jsonl")).unwrap();
    let coverage = ma.level1_operators.len() == 18 && ma.level1_operators.values().all(|&c| c == 1);
    let small = ok && ma == mb && same_suite && coverage && ma.level1_count == 18 && ma.level2_count == 10;

    let big = cli(&["gen", "--count", "1000", "--seed", "12", "--out", &s("big.jsonl")])
        && cli(&[
            "bench", "package", "--corpus", &s("big.jsonl"), "--level1", "100", "--level2", "100", "--seed", "1",
            "--out", &s("paper"),
        ]);
    let paper = big.then(|| read_manifest(&d.join("paper")));
    let paper_ok = paper.as_ref().is_some_and(|m| m.level1_count == 100 && m.level2_count == 100);
    l.record(
        10,
        "benchmark packaging",
        small && paper_ok,
        format!(
            "(18, 10): all 18 operators once {coverage}, deterministic {}; (100, 100) from 1000 pairs: {}",
            ma == mb && same_suite,
            paper.map(|m| format!("{}/{}", m.level1_count, m.level2_count)).unwrap_or_else(|| "failed".into())
        ),
    );
}

#[test]
fn acceptance() {
    assert!(ToolchainConfig::default().available(), "a C compiler (`cc`) is required");
    let mut l = Ledger { failed: Vec::new() };
    println!();
    c1_to_c3(&mut l);
    c4(&mut l);
    c5(&mut l);
    c6_c9_c11(&mut l);
    c7(&mut l);
    c8(&mut l);
    c10(&mut l);
    assert!(l.failed.is_empty(), "failed criteria: {:?}", l.failed);
}
