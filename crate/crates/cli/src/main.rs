//! `transbench`: generate, validate, evaluate, package and summarize
//! CUDA / CPU code-pair corpora.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use transbench::dataset::{
    audit_pair, corpus_stats, generate_corpus, package_benchmark, probe_hardware, read_corpus, write_corpus,
    write_suite,
};
use transbench::eval::{evaluate_corpus, Baseline};
use transbench::graph::ComputationGraph;
use transbench::ops::Inventory;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "transbench", version, about = "Random computation graphs to paired CUDA / CPU C kernels")]
struct Cli {
    /// TOML file with `[gen]` and `[eval]` tables; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build graphs, emit sources and write a JSONL corpus.
    Gen(GenArgs),
    /// Re-check graphs, regenerate sources and scan them.
    Validate(ValidateArgs),
    /// Compile, run and time candidate CPU sources.
    Eval(EvalArgs),
    /// Benchmark packaging.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Corpus histograms, or the operator catalog with `--ops`.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Every n-th pair is a single-operator graph (0 disables).
    #[arg(long)]
    level1_every: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    p_op: Option<f64>,
    /// Emit the optimized kernels without OpenMP pragmas.
    #[arg(long)]
    no_parallel: bool,
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    unroll: Option<usize>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ValidateTarget {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// A single canonical graph JSON file.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    target: ValidateTarget,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Ref,
    Naive,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Directory holding `<pair_id>.c` candidates.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    cc: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    serial_timing: bool,
    /// Per-run timeout in seconds.
    #[arg(long)]
    timeout_run: Option<f64>,
    /// Per-compile timeout in seconds.
    #[arg(long)]
    timeout_compile: Option<f64>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long)]
    warmup: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    reps: Option<u32>,
    /// Skip speedup measurement.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Select a two-level suite from a corpus.
    Package(PackageArgs),
}

#[derive(Args)]
struct PackageArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    level1: usize,
    #[arg(long)]
    level2: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, required_unless_present = "ops")]
    corpus: Option<PathBuf>,
    /// Print the operator catalog instead.
    #[arg(long, conflicts_with = "corpus")]
    ops: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let inv = Inventory::global();
    match cli.command {
        Command::Gen(a) => cmd_gen(inv, file, a),
        Command::Validate(a) => cmd_validate(inv, a),
        Command::Eval(a) => cmd_eval(inv, file, a),
        Command::Bench(BenchCommand::Package(a)) => cmd_package(inv, a),
        Command::Stats(a) => cmd_stats(inv, a),
    }
}

fn write_json(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen(inv: &Inventory, file: FileConfig, a: GenArgs) -> Result<ExitCode> {
    let mut cfg = file.gen;
    if let Some(c) = a.count {
        cfg.count = c as usize;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.level1_every {
        cfg.level1_every = n;
    }
    if let Some(n) = a.n_max {
        cfg.builder.n_max = n;
    }
    if let Some(d) = a.d_max {
        cfg.builder.d_max = d;
    }
    if let Some(p) = a.p_op {
        cfg.builder.p_op = p;
    }
    if a.no_parallel {
        cfg.emit.parallel = false;
    }
    if a.tile.is_some() {
        cfg.emit.tile = a.tile;
    }
    if a.unroll.is_some() {
        cfg.emit.unroll = a.unroll;
    }
    if cfg.count == 0 {
        bail!("count must be at least 1");
    }
    let pairs = generate_corpus(inv, &cfg, &probe_hardware())?;
    write_corpus(&pairs, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let stats = corpus_stats(inv, &pairs);
    eprintln!(
        "wrote {} pairs to {} (level 1: {}, level 2: {})",
        stats.pairs,
        a.out.display(),
        stats.level1,
        stats.level2
    );
    for (cat, n) in &stats.pairs_with_category {
        eprintln!("  {cat}: {n} pairs");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(inv: &Inventory, a: ValidateArgs) -> Result<ExitCode> {
    if let Some(path) = a.target.graph {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let graph = ComputationGraph::from_json(&text).context("parsing graph JSON")?;
        let report = graph.validate(inv);
        write_json(None, &report)?;
        if !report.ok {
            for v in &report.violations {
                eprintln!("violation: {}", v.message);
            }
            return Ok(ExitCode::from(1));
        }
        eprintln!("graph is valid");
        return Ok(ExitCode::SUCCESS);
    }
    let path = a.target.corpus.expect("clap enforces one target");
    let pairs = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
    let problems: Vec<(u64, Vec<String>)> = pairs
        .par_iter()
        .map(|p| (p.pair_id, audit_pair(inv, p)))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    for (id, list) in &problems {
        for p in list {
            eprintln!("pair {id}: {p}");
        }
    }
    if problems.is_empty() {
        eprintln!("{} pairs ok", pairs.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} pairs have violations", problems.len(), pairs.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_eval(inv: &Inventory, file: FileConfig, a: EvalArgs) -> Result<ExitCode> {
    let mut opts = file.eval;
    if let Some(cc) = a.cc {
        opts.toolchain.cc = cc;
    }
    opts.jobs = a
        .jobs
        .or(file.eval_jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if a.serial_timing {
        opts.serial_timing = true;
    }
    if let Some(t) = a.timeout_run {
        opts.toolchain.run_timeout_secs = t;
    }
    if let Some(t) = a.timeout_compile {
        opts.toolchain.compile_timeout_secs = t;
    }
    if let Some(b) = a.baseline {
        opts.baseline = match b {
            BaselineArg::Ref => Baseline::Ref,
            BaselineArg::Naive => Baseline::Naive,
        };
    }
    if let Some(w) = a.warmup {
        opts.warmup = w;
    }
    if let Some(r) = a.reps {
        opts.reps = r;
    }
    if a.no_timing {
        opts.measure_speedup = false;
    }
    let pairs = read_corpus(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let report = evaluate_corpus(inv, &pairs, &a.candidates, &opts)?;
    write_json(Some(&a.report), &report)?;
    let agg = &report.aggregate;
    eprintln!(
        "{} pairs: compile pass {:.3}, execute pass {:.3}, mean speedup {}",
        agg.pairs,
        agg.compile_pass,
        agg.execute_pass,
        agg.mean_speedup.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_package(inv: &Inventory, a: PackageArgs) -> Result<ExitCode> {
    let corpus = read_corpus(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let suite = package_benchmark(inv, &corpus, a.level1, a.level2, a.seed)?;
    write_suite(&suite, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "suite {}: {} level-1 and {} level-2 pairs in {}",
        suite.name,
        suite.level1.len(),
        suite.level2.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(inv: &Inventory, a: StatsArgs) -> Result<ExitCode> {
    if a.ops {
        write_json(a.out.as_deref(), &inv.catalog())?;
        return Ok(ExitCode::SUCCESS);
    }
    let path = a.corpus.expect("clap requires --corpus without --ops");
    let pairs = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
    let stats = corpus_stats(inv, &pairs);
    write_json(a.out.as_deref(), &stats)?;
    eprintln!(
        "{} pairs, {} operator nodes, {} input nodes",
        stats.pairs, stats.operator_nodes, stats.input_nodes
    );
    Ok(ExitCode::SUCCESS)
}
