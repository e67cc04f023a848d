//! Compile, run and score candidate CPU translations.
//!
//! A candidate is a C file defining the optimized entry point of its pair
//! (`pair<id>_cpu_opt`). It is linked against the pair's harness, run once to
//! check outputs against the interpreter, then timed against a baseline
//! kernel built the same way.

mod compare;
mod process;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{mangle_entry, Target};
use crate::dataset::CodePair;
use crate::graph::interp::interpret;
use crate::inputs::graph_inputs;
use crate::ops::Inventory;

pub use compare::{compare_outputs, parse_outputs, tensor_outputs, CompareResult, CompareSpec, Outputs};
pub use process::{find_program, run_with_timeout, ExitKind, ProcessOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolchainConfig {
    pub cc: String,
    pub cflags: Vec<String>,
    pub ldflags: Vec<String>,
    pub compile_timeout_secs: f64,
    pub run_timeout_secs: f64,
    pub nvcc: String,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        Self {
            cc: "cc".into(),
            // No FP contraction: keeps C arithmetic bit-compatible with the interpreter.
            cflags: ["-O3", "-fopenmp", "-ffp-contract=off"].map(String::from).to_vec(),
            ldflags: vec!["-lm".into()],
            compile_timeout_secs: 120.0,
            run_timeout_secs: 60.0,
            nvcc: "nvcc".into(),
        }
    }
}

impl ToolchainConfig {
    fn compile_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.compile_timeout_secs)
    }

    fn run_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.run_timeout_secs)
    }

    /// True when the C compiler can be found.
    pub fn available(&self) -> bool {
        find_program(&self.cc).is_some()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("compilation failed:\n{0}")]
    Compile(String),
    #[error("execution failed: {0}")]
    Run(String),
    #[error("reference evaluation failed: {0}")]
    Reference(String),
}

#[derive(Clone, Debug)]
pub struct CompileOutcome {
    pub ok: bool,
    pub exit: ExitKind,
    pub stderr: String,
    pub binary: PathBuf,
}

/// Writes `sources` into `dir` and builds them into one executable `name`.
/// Linking is part of the step, so a missing symbol is a compile failure.
pub fn compile_sources(
    tc: &ToolchainConfig,
    dir: &Path,
    name: &str,
    sources: &[(&str, &str)],
    defines: &[String],
) -> std::io::Result<CompileOutcome> {
    let mut cmd = Command::new(&tc.cc);
    cmd.args(&tc.cflags);
    for d in defines {
        cmd.arg(format!("-D{d}"));
    }
    for (file, text) in sources {
        let path = dir.join(file);
        std::fs::write(&path, text)?;
        cmd.arg(path);
    }
    let binary = dir.join(name);
    cmd.arg("-o").arg(&binary).args(&tc.ldflags);
    let out = run_with_timeout(cmd, tc.compile_timeout())?;
    Ok(CompileOutcome {
        ok: out.exit.success() && binary.is_file(),
        exit: out.exit,
        stderr: out.stderr,
        binary,
    })
}

/// Runs a harness binary once and parses its outputs.
pub fn run_outputs(tc: &ToolchainConfig, binary: &Path) -> Result<Outputs, EvalError> {
    let out = run_with_timeout(Command::new(binary), tc.run_timeout())?;
    if !out.exit.success() {
        return Err(EvalError::Run(format!("{}: {}", out.exit, out.stderr.trim())));
    }
    parse_outputs(&out.stdout).map_err(EvalError::Run)
}

/// Median wall time in nanoseconds reported by `binary --time W R`.
pub fn time_binary(tc: &ToolchainConfig, binary: &Path, warmup: u32, reps: u32) -> Result<u64, EvalError> {
    let mut cmd = Command::new(binary);
    cmd.args(["--time", &warmup.to_string(), &reps.to_string()]);
    let budget = tc.run_timeout() * (warmup + reps + 1);
    let out = run_with_timeout(cmd, budget)?;
    if !out.exit.success() {
        return Err(EvalError::Run(format!("{}: {}", out.exit, out.stderr.trim())));
    }
    out.stdout
        .lines()
        .find_map(|l| l.strip_prefix("TIME_NS "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| EvalError::Run("no TIME_NS line in timing output".into()))
}

/// Expected outputs of a pair, from the interpreter on the harness inputs.
pub fn reference_outputs(inv: &Inventory, pair: &CodePair) -> Result<Outputs, EvalError> {
    let inputs = graph_inputs(&pair.graph, pair.pair_id);
    let values = interpret(inv, &pair.graph, &inputs).map_err(|e| EvalError::Reference(e.to_string()))?;
    Ok(tensor_outputs(&values))
}

/// Kernel the candidate is timed against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The pair's optimized CPU kernel.
    #[default]
    Ref,
    /// The pair's naive sequential kernel.
    Naive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub toolchain: ToolchainConfig,
    pub baseline: Baseline,
    pub warmup: u32,
    pub reps: u32,
    pub measure_speedup: bool,
    /// Time one job at a time even when compiling in parallel.
    pub serial_timing: bool,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            toolchain: ToolchainConfig::default(),
            baseline: Baseline::Ref,
            warmup: 2,
            reps: 10,
            measure_speedup: true,
            serial_timing: false,
            jobs: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Compile,
    Run,
    Compare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_id: u64,
    pub compile_pass: bool,
    pub execute_pass: bool,
    pub speedup_ratio: Option<f64>,
    pub baseline_ns: Option<u64>,
    pub candidate_ns: Option<u64>,
    pub failure_stage: Option<FailureStage>,
    pub failure_detail: Option<String>,
}

impl EvalReport {
    fn new(pair_id: u64) -> Self {
        Self {
            pair_id,
            compile_pass: false,
            execute_pass: false,
            speedup_ratio: None,
            baseline_ns: None,
            candidate_ns: None,
            failure_stage: None,
            failure_detail: None,
        }
    }

    fn fail(mut self, stage: FailureStage, why: impl Into<String>) -> Self {
        self.failure_stage = Some(stage);
        self.failure_detail = Some(why.into());
        self
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Scores one candidate source. `None` means the candidate file is missing.
pub fn evaluate_candidate(
    inv: &Inventory,
    pair: &CodePair,
    candidate: Option<&str>,
    opts: &EvalOptions,
    timing_lock: Option<&Mutex<()>>,
) -> EvalReport {
    let report = EvalReport::new(pair.pair_id);
    let Some(candidate) = candidate else {
        return report.fail(FailureStage::Compile, "candidate source missing");
    };
    try_evaluate(inv, pair, candidate, opts, timing_lock, report.clone())
        .unwrap_or_else(|(stage, e)| report.fail(stage, e.to_string()))
}

fn try_evaluate(
    inv: &Inventory,
    pair: &CodePair,
    candidate: &str,
    opts: &EvalOptions,
    timing_lock: Option<&Mutex<()>>,
    mut report: EvalReport,
) -> Result<EvalReport, (FailureStage, EvalError)> {
    use FailureStage::*;
    let tc = &opts.toolchain;
    let dir = tempfile::tempdir().map_err(|e| (Compile, e.into()))?;
    let harness = ("harness.c", pair.harness_src.as_str());
    let built = compile_sources(tc, dir.path(), "candidate", &[harness, ("candidate.c", candidate)], &[])
        .map_err(|e| (Compile, e.into()))?;
    if !built.ok {
        return Ok(report.fail(Compile, format!(
            "compile: {}\n{}",
            built.exit,
            truncate(built.stderr.trim(), 4000)
        )));
    }
    report.compile_pass = true;

    let actual = match run_outputs(tc, &built.binary) {
        Ok(o) => o,
        Err(e) => return Ok(report.fail(Run, e.to_string())),
    };
    let expected = reference_outputs(inv, pair).map_err(|e| (Compare, e))?;
    let cmp = compare_outputs(&pair.graph, &expected, &actual, &pair.compare);
    if !cmp.ok {
        return Ok(report.fail(Compare, format!(
            "outputs differ in {} element(s); first: {}",
            cmp.mismatches,
            cmp.first_mismatch.unwrap_or_default()
        )));
    }
    report.execute_pass = true;

    if opts.measure_speedup {
        let (src, defines) = match opts.baseline {
            Baseline::Ref => (pair.cpu_src.as_str(), vec![]),
            Baseline::Naive => (
                pair.cpu_ref_src.as_str(),
                vec![format!("ENTRY={}", mangle_entry(pair.pair_id, Target::CpuReference))],
            ),
        };
        let base = compile_sources(tc, dir.path(), "baseline", &[harness, ("baseline.c", src)], &defines)
            .map_err(|e| (Run, e.into()))?;
        if !base.ok {
            return Ok(report.fail(Run, format!("baseline failed to compile: {}", truncate(&base.stderr, 2000))));
        }
        let _guard = timing_lock.map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        let timed = time_binary(tc, &base.binary, opts.warmup, opts.reps)
            .and_then(|b| Ok((b, time_binary(tc, &built.binary, opts.warmup, opts.reps)?)));
        let (b, c) = match timed {
            Ok(t) => t,
            Err(e) => return Ok(report.fail(Run, format!("timing: {e}"))),
        };
        report.baseline_ns = Some(b);
        report.candidate_ns = Some(c);
        report.speedup_ratio = Some(b.max(1) as f64 / c.max(1) as f64);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pairs: usize,
    pub compile_pass: f64,
    pub execute_pass: f64,
    /// Mean over candidates that executed correctly and were timed.
    pub mean_speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pairs: Vec<EvalReport>,
    pub aggregate: Aggregate,
}

pub fn summarize(reports: &[EvalReport]) -> Aggregate {
    let n = reports.len();
    let rate = |f: fn(&EvalReport) -> bool| {
        if n == 0 {
            0.0
        } else {
            reports.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let speedups: Vec<f64> = reports.iter().filter(|r| r.execute_pass).filter_map(|r| r.speedup_ratio).collect();
    Aggregate {
        pairs: n,
        compile_pass: rate(|r| r.compile_pass),
        execute_pass: rate(|r| r.execute_pass),
        mean_speedup: (!speedups.is_empty()).then(|| speedups.iter().sum::<f64>() / speedups.len() as f64),
    }
}

/// Evaluates `<candidates>/<pair_id>.c` for every pair on `opts.jobs` threads.
/// Reports come back in pair order.
pub fn evaluate_corpus(
    inv: &Inventory,
    pairs: &[CodePair],
    candidates: &Path,
    opts: &EvalOptions,
) -> Result<CorpusReport, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| EvalError::Io(std::io::Error::other(e)))?;
    let lock = Mutex::new(());
    let lock = opts.serial_timing.then_some(&lock);
    let reports: Vec<EvalReport> = pool.install(|| {
        pairs
            .par_iter()
            .map(|pair| {
                let path = candidates.join(format!("{}.c", pair.pair_id));
                let src = std::fs::read_to_string(&path).ok();
                evaluate_candidate(inv, pair, src.as_deref(), opts, lock)
            })
            .collect()
    });
    Ok(CorpusReport {
        aggregate: summarize(&reports),
        pairs: reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCheck {
    pub reference: CompareResult,
    pub optimized: CompareResult,
}

/// Builds both CPU kernels of a pair and checks each against the interpreter.
pub fn verify_pair(inv: &Inventory, pair: &CodePair, tc: &ToolchainConfig) -> Result<PairCheck, EvalError> {
    let dir = tempfile::tempdir()?;
    let expected = reference_outputs(inv, pair)?;
    let harness = ("harness.c", pair.harness_src.as_str());
    let check = |name: &str, src: &str, target: Target| -> Result<CompareResult, EvalError> {
        let define = format!("ENTRY={}", mangle_entry(pair.pair_id, target));
        let file = format!("{name}.c");
        let built = compile_sources(tc, dir.path(), name, &[harness, (&file, src)], &[define])?;
        if !built.ok {
            return Err(EvalError::Compile(built.stderr));
        }
        let actual = run_outputs(tc, &built.binary)?;
        Ok(compare_outputs(&pair.graph, &expected, &actual, &pair.compare))
    };
    Ok(PairCheck {
        reference: check("ref", &pair.cpu_ref_src, Target::CpuReference)?,
        optimized: check("opt", &pair.cpu_src, Target::CpuOptimized)?,
    })
}

/// Compiles a CUDA translation unit with nvcc. `None` when nvcc is absent.
pub fn cuda_syntax_check(tc: &ToolchainConfig, source: &str) -> Option<Result<(), String>> {
    let nvcc = find_program(&tc.nvcc)?;
    let run = || -> Result<(), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("kernel.cu");
        std::fs::write(&path, source).map_err(|e| e.to_string())?;
        let mut cmd = Command::new(nvcc);
        cmd.arg("-c").arg(&path).arg("-o").arg(dir.path().join("kernel.o"));
        let out = run_with_timeout(cmd, tc.compile_timeout()).map_err(|e| e.to_string())?;
        if out.exit.success() {
            Ok(())
        } else {
            Err(out.stderr)
        }
    };
    Some(run())
}
