//! Labelled CUDA / CPU code pairs, their JSONL corpus format and the
//! two-level benchmark packaging.

mod hardware;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{build_graph, build_primitive, BuildError, BuilderConfig};
use crate::codegen::{
    emit_cpu, emit_cuda, emit_harness, scan_clean, EmitError, EmitOptions, SourceKind, Target,
};
use crate::eval::CompareSpec;
use crate::graph::ComputationGraph;
use crate::ops::{int_attr, Inventory, OperatorCategory};

pub use hardware::{parse_cache_size, parse_cpuinfo, parse_meminfo, probe_hardware, HardwareLabel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub hardware: HardwareLabel,
    pub categories: Vec<OperatorCategory>,
    pub description: String,
    pub optimization_notes: String,
    /// Descriptions come from templates, not human annotators.
    pub generated: bool,
}

/// One dataset record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodePair {
    pub schema_version: u32,
    pub pair_id: u64,
    /// Builder seed the graph was drawn with.
    pub seed: u64,
    pub level: u8,
    pub graph: ComputationGraph,
    pub cuda_src: String,
    pub cpu_src: String,
    pub cpu_ref_src: String,
    pub harness_src: String,
    pub options: EmitOptions,
    pub labels: Labels,
    pub compare: CompareSpec,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch { line: usize, found: u64, expected: u32 },
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
    #[error("level {level}: requested {requested} pairs, corpus has {available}")]
    InsufficientPairs { level: u8, requested: usize, available: usize },
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// 1 for a single operator node, 2 otherwise.
pub fn graph_level(graph: &ComputationGraph) -> u8 {
    if graph.operator_count() == 1 {
        1
    } else {
        2
    }
}

fn op_phrase(inv: &Inventory, graph: &ComputationGraph, id: crate::graph::NodeId) -> String {
    let node = graph.node(id).expect("node exists");
    let op_name = node.op.as_deref().unwrap_or_default();
    let Some(op) = inv.get(op_name) else {
        return op_name.to_string();
    };
    let mut text = match op.category() {
        OperatorCategory::Elementwise => format!("elementwise {}", op.summary()),
        _ => op.summary().to_string(),
    };
    if node.attrs.contains_key("axis") {
        let _ = write!(text, " along axis {}", int_attr(&node.attrs, "axis"));
    }
    if node.attrs.contains_key("k") {
        let _ = write!(text, " with k = {}", int_attr(&node.attrs, "k"));
    }
    text
}

/// Template description and optimization notes for a graph. Deterministic
/// in the graph and options.
pub fn describe_graph(inv: &Inventory, graph: &ComputationGraph, opts: &EmitOptions) -> (String, String) {
    let n_in = graph.input_ids().len();
    let n_ops = graph.operator_count();
    let mut d = format!(
        "Computes {} output tensor(s) from {n_in} input tensor(s) through {n_ops} operator(s).",
        graph.outputs().len()
    );
    let order = graph.topo_order().unwrap_or_default();
    for id in order {
        let node = graph.node(id).expect("node exists");
        let Some(op) = node.op.as_deref() else { continue };
        let preds: Vec<String> = graph
            .predecessors(inv, id)
            .into_iter()
            .map(|p| p.map(|p| format!("node {p}")).unwrap_or_else(|| "?".into()))
            .collect();
        let over = graph
            .predecessors(inv, id)
            .first()
            .copied()
            .flatten()
            .and_then(|p| graph.node(p))
            .map(|p| p.spec.len())
            .unwrap_or(0);
        let _ = write!(
            d,
            " Node {id} = {op}({}): {} over {over} elements, producing {}.",
            preds.join(", "),
            op_phrase(inv, graph, id),
            node.spec
        );
    }

    let mut notes = Vec::new();
    let has_op = |name: &str| graph.operator_nodes().any(|n| n.op.as_deref() == Some(name));
    for cat in graph.categories(inv) {
        let note = match cat {
            OperatorCategory::Elementwise => match opts.unroll {
                Some(u) => format!(
                    "Pointwise loops: parallelize the outermost non-unit axis and unroll the contiguous inner loop by {u}."
                ),
                None => "Pointwise loops: parallelize the outermost non-unit axis.".to_string(),
            },
            OperatorCategory::Reduction => {
                "Reductions: parallelize the independent outer axes and keep the reduced axis sequential with a double accumulator."
                    .to_string()
            }
            OperatorCategory::LayoutTransform => {
                "Layout transforms are pure copies: walk the output contiguously and parallelize its outer axis.".to_string()
            }
            OperatorCategory::LogicIntensive => {
                "Sort and top-k run per row: parallelize across rows; in-row insertion keeps equal keys in input order."
                    .to_string()
            }
            OperatorCategory::ComputeIntensive => {
                let mut parts = Vec::new();
                if has_op("matmul") {
                    parts.push(match opts.tile {
                        Some(t) => format!(
                            "Matmul: tile output columns into {t}-wide accumulator panels, stream k in order and parallelize the outer row loop."
                        ),
                        None => "Matmul: parallelize the outer row loop.".to_string(),
                    });
                }
                if has_op("conv2d") {
                    parts.push(
                        "Conv2d: parallelize over batch and output channels; the 3x3 window stays innermost.".to_string(),
                    );
                }
                parts.join(" ")
            }
        };
        notes.push(note);
    }
    if !opts.parallel {
        notes.push("Emitted without OpenMP pragmas.".to_string());
    }
    (d, notes.join("\n"))
}

/// Runs every emitter and labels the result.
pub fn assemble_pair(
    inv: &Inventory,
    graph: ComputationGraph,
    seed: u64,
    opts: &EmitOptions,
    pair_id: u64,
    hardware: &HardwareLabel,
) -> Result<CodePair, EmitError> {
    let cpu = emit_cpu(inv, &graph, pair_id, Target::CpuOptimized, opts)?;
    let cpu_ref = emit_cpu(inv, &graph, pair_id, Target::CpuReference, opts)?;
    let cuda = emit_cuda(inv, &graph, pair_id)?;
    let harness = emit_harness(&graph, pair_id, pair_id);
    let (description, optimization_notes) = describe_graph(inv, &graph, opts);
    Ok(CodePair {
        schema_version: SCHEMA_VERSION,
        pair_id,
        seed,
        level: graph_level(&graph),
        cuda_src: cuda.source_text,
        cpu_src: cpu.source_text,
        cpu_ref_src: cpu_ref.source_text,
        harness_src: harness.source_text,
        options: opts.clone(),
        labels: Labels {
            hardware: hardware.clone(),
            categories: graph.categories(inv),
            description,
            optimization_notes,
            generated: true,
        },
        compare: CompareSpec::for_graph(&graph, inv),
        graph,
    })
}

/// Everything wrong with a stored record: graph violations, stale labels,
/// sources that no longer regenerate, and clean-code scan hits.
pub fn audit_pair(inv: &Inventory, pair: &CodePair) -> Vec<String> {
    let mut problems = Vec::new();
    let report = pair.graph.validate(inv);
    if !report.ok {
        for v in &report.violations {
            problems.push(format!("graph: {}", v.message));
        }
        return problems;
    }
    if pair.level != graph_level(&pair.graph) {
        problems.push(format!("level {} does not match the graph", pair.level));
    }
    if pair.labels.categories != pair.graph.categories(inv) {
        problems.push("labels.categories differ from the graph's categories".into());
    }
    match assemble_pair(inv, pair.graph.clone(), pair.seed, &pair.options, pair.pair_id, &pair.labels.hardware) {
        Ok(fresh) => {
            for (name, stored, regen) in [
                ("cuda_src", &pair.cuda_src, &fresh.cuda_src),
                ("cpu_src", &pair.cpu_src, &fresh.cpu_src),
                ("cpu_ref_src", &pair.cpu_ref_src, &fresh.cpu_ref_src),
                ("harness_src", &pair.harness_src, &fresh.harness_src),
            ] {
                if stored != regen {
                    problems.push(format!("{name} does not regenerate byte-identically"));
                }
            }
            if pair.compare != fresh.compare {
                problems.push("compare spec differs from the regenerated one".into());
            }
        }
        Err(e) => problems.push(format!("emission failed: {e}")),
    }
    for (name, text, kind) in [
        ("cuda_src", &pair.cuda_src, SourceKind::Kernel(Target::Cuda)),
        ("cpu_src", &pair.cpu_src, SourceKind::Kernel(Target::CpuOptimized)),
        ("cpu_ref_src", &pair.cpu_ref_src, SourceKind::Kernel(Target::CpuReference)),
        ("harness_src", &pair.harness_src, SourceKind::Harness),
    ] {
        for v in scan_clean(text, kind) {
            problems.push(format!("{name}:{}: {}", v.line, v.message));
        }
    }
    problems
}

pub fn to_jsonl_line(pair: &CodePair) -> String {
    crate::canonical_json(pair)
}

pub fn write_corpus(pairs: &[CodePair], path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}", to_jsonl_line(p))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses one JSONL line (1-based `line` for error reporting).
pub fn parse_record(text: &str, line: usize) -> Result<CodePair, DatasetError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DatasetError::MalformedRecord {
        line,
        message: e.to_string(),
    })?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(found) => {
            return Err(DatasetError::SchemaVersionMismatch {
                line,
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(DatasetError::MalformedRecord {
                line,
                message: "missing schema_version".into(),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("unknown field `").and_then(|r| r.split_once('`')) {
            Some((field, _)) => DatasetError::UnknownField {
                line,
                field: field.to_string(),
            },
            None => DatasetError::MalformedRecord { line, message: msg },
        }
    })
}

pub fn read_corpus(path: &Path) -> Result<Vec<CodePair>, DatasetError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, n + 1)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub seed: u64,
    /// Every n-th pair is a single-operator graph cycling through the
    /// inventory; 0 disables them.
    pub level1_every: usize,
    pub builder: BuilderConfig,
    pub emit: EmitOptions,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 0,
            level1_every: 4,
            builder: BuilderConfig::default(),
            emit: EmitOptions::default(),
        }
    }
}

const MAX_SEED_ATTEMPTS: u64 = 16;

fn pair_graph(inv: &Inventory, cfg: &GenConfig, index: usize) -> Result<(ComputationGraph, u64), BuildError> {
    let base = cfg.seed.wrapping_add(index as u64);
    if cfg.level1_every > 0 && index % cfg.level1_every == 0 {
        let ops: Vec<&str> = inv.operators().map(|o| o.name()).collect();
        let op = ops[(index / cfg.level1_every) % ops.len()];
        return build_primitive(inv, op, base, &cfg.builder.input_shape_pool).map(|g| (g, base));
    }
    let mut last = None;
    for attempt in 0..MAX_SEED_ATTEMPTS {
        let seed = base.wrapping_add(attempt << 32);
        let bc = BuilderConfig {
            seed,
            ..cfg.builder.clone()
        };
        match build_graph(inv, &bc) {
            Ok((g, _)) => return Ok((g, seed)),
            Err(e @ BuildError::BuildExhausted { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Builds and assembles `cfg.count` pairs with ids `0..count`, in parallel.
pub fn generate_corpus(inv: &Inventory, cfg: &GenConfig, hardware: &HardwareLabel) -> Result<Vec<CodePair>, DatasetError> {
    cfg.emit.check()?;
    cfg.builder.check()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let (graph, seed) = pair_graph(inv, cfg, i)?;
            Ok(assemble_pair(inv, graph, seed, &cfg.emit, i as u64, hardware)?)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pairs: usize,
    pub level1: usize,
    pub level2: usize,
    pub operator_nodes: usize,
    pub input_nodes: usize,
    /// Operator node count per operator name.
    pub operators: BTreeMap<String, usize>,
    /// Operator node count per category.
    pub categories: BTreeMap<String, usize>,
    /// Pairs containing each category.
    pub pairs_with_category: BTreeMap<String, usize>,
}

pub fn corpus_stats(inv: &Inventory, pairs: &[CodePair]) -> CorpusStats {
    let mut s = CorpusStats {
        pairs: pairs.len(),
        ..Default::default()
    };
    for p in pairs {
        match p.level {
            1 => s.level1 += 1,
            _ => s.level2 += 1,
        }
        s.input_nodes += p.graph.input_ids().len();
        for n in p.graph.operator_nodes() {
            let name = n.op.clone().unwrap_or_default();
            s.operator_nodes += 1;
            if let Some(op) = inv.get(&name) {
                *s.categories.entry(op.category().to_string()).or_default() += 1;
            }
            *s.operators.entry(name).or_default() += 1;
        }
        for c in p.graph.categories(inv) {
            *s.pairs_with_category.entry(c.to_string()).or_default() += 1;
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub schema_version: u32,
    pub level1_count: usize,
    pub level2_count: usize,
    pub level1_pairs: Vec<u64>,
    pub level2_pairs: Vec<u64>,
    /// Suite members containing each category.
    pub category_histogram: BTreeMap<String, usize>,
    /// Level-1 members per operator.
    pub level1_operators: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSuite {
    pub name: String,
    pub level1: Vec<CodePair>,
    pub level2: Vec<CodePair>,
    pub manifest: Manifest,
}

fn single_op(pair: &CodePair) -> Option<&str> {
    pair.graph.operator_nodes().next().and_then(|n| n.op.as_deref())
}

fn pick_level1<'a>(inv: &Inventory, pool: &[&'a CodePair], count: usize, seed: u64) -> Vec<&'a CodePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_op: Vec<Vec<&CodePair>> = inv
        .operators()
        .map(|op| {
            let mut v: Vec<&CodePair> = pool.iter().copied().filter(|p| single_op(p) == Some(op.name())).collect();
            v.sort_by_key(|p| p.pair_id);
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    // round-robin: every operator once before any repeats
    while out.len() < count {
        let before = out.len();
        for list in by_op.iter_mut() {
            if out.len() == count {
                break;
            }
            if !list.is_empty() {
                out.push(list.remove(0));
            }
        }
        if out.len() == before {
            break;
        }
    }
    out
}

fn pick_level2<'a>(inv: &Inventory, pool: &[&'a CodePair], count: usize) -> Vec<&'a CodePair> {
    let mut rest: Vec<&CodePair> = pool.to_vec();
    rest.sort_by_key(|p| p.pair_id);
    let cats: Vec<Vec<OperatorCategory>> = rest.iter().map(|p| p.graph.categories(inv)).collect();
    let mut taken = vec![false; rest.len()];
    let mut hist: BTreeMap<OperatorCategory, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut best: Option<(usize, f64)> = None;
        for (i, cs) in cats.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let score: f64 = cs.iter().map(|c| 1.0 / (1 + hist.get(c).copied().unwrap_or(0)) as f64).sum();
            // strict comparison keeps the lowest pair_id on ties
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let Some((i, _)) = best else { break };
        taken[i] = true;
        for c in &cats[i] {
            *hist.entry(*c).or_default() += 1;
        }
        out.push(rest[i]);
    }
    out
}

/// Deterministic two-level selection: level 1 covers every operator before
/// repeating any, level 2 greedily balances category histograms.
pub fn package_benchmark(
    inv: &Inventory,
    corpus: &[CodePair],
    level1_count: usize,
    level2_count: usize,
    seed: u64,
) -> Result<BenchmarkSuite, DatasetError> {
    let l1: Vec<&CodePair> = corpus.iter().filter(|p| p.level == 1).collect();
    let l2: Vec<&CodePair> = corpus.iter().filter(|p| p.level == 2).collect();
    for (level, req, avail) in [(1u8, level1_count, l1.len()), (2, level2_count, l2.len())] {
        if req > avail {
            return Err(DatasetError::InsufficientPairs {
                level,
                requested: req,
                available: avail,
            });
        }
    }
    let level1: Vec<CodePair> = pick_level1(inv, &l1, level1_count, seed).into_iter().cloned().collect();
    let level2: Vec<CodePair> = pick_level2(inv, &l2, level2_count).into_iter().cloned().collect();
    let name = format!("bench-l1x{level1_count}-l2x{level2_count}-s{seed}");
    let manifest = build_manifest(inv, &name, seed, &level1, &level2);
    Ok(BenchmarkSuite {
        name,
        level1,
        level2,
        manifest,
    })
}

pub fn build_manifest(inv: &Inventory, name: &str, seed: u64, level1: &[CodePair], level2: &[CodePair]) -> Manifest {
    let mut category_histogram = BTreeMap::new();
    for p in level1.iter().chain(level2) {
        let cats: BTreeSet<OperatorCategory> = p.graph.categories(inv).into_iter().collect();
        for c in cats {
            *category_histogram.entry(c.to_string()).or_default() += 1;
        }
    }
    let mut level1_operators = BTreeMap::new();
    for p in level1 {
        if let Some(op) = single_op(p) {
            *level1_operators.entry(op.to_string()).or_default() += 1;
        }
    }
    Manifest {
        name: name.to_string(),
        seed,
        schema_version: SCHEMA_VERSION,
        level1_count: level1.len(),
        level2_count: level2.len(),
        level1_pairs: level1.iter().map(|p| p.pair_id).collect(),
        level2_pairs: level2.iter().map(|p| p.pair_id).collect(),
        category_histogram,
        level1_operators,
    }
}

/// Writes `manifest.json`, `suite.jsonl` and per-pair sources under
/// `sources/`.
pub fn write_suite(suite: &BenchmarkSuite, dir: &Path) -> Result<(), DatasetError> {
    let src_dir = dir.join("sources");
    std::fs::create_dir_all(&src_dir)?;
    let manifest = serde_json::to_string_pretty(&suite.manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
    let members: Vec<CodePair> = suite.level1.iter().chain(&suite.level2).cloned().collect();
    write_corpus(&members, &dir.join("suite.jsonl"))?;
    for p in &members {
        let id = p.pair_id;
        for (ext, text) in [
            ("cuda.cu", &p.cuda_src),
            ("cpu.c", &p.cpu_src),
            ("ref.c", &p.cpu_ref_src),
            ("harness.c", &p.harness_src),
        ] {
            std::fs::write(src_dir.join(format!("{id}.{ext}")), text)?;
        }
        std::fs::write(src_dir.join(format!("{id}.graph.json")), p.graph.to_canonical_json())?;
    }
    Ok(())
}
