//! Framework-free source emission.
//!
//! Per graph we emit a naive single-threaded CPU kernel, an optimized CPU
//! kernel (OpenMP parallel-for, tiled matmul, unrolled pointwise loops), a CUDA
//! translation unit with one SPMD kernel per node plus a host launcher, and a
//! C test harness that drives either CPU kernel.
//!
//! Operator-specific loop nests live behind [`KernelEmitter`], registered by
//! operator name in an [`EmitterRegistry`].

mod cpu;
mod cuda;
mod emitters;
mod harness;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationGraph, NodeId, NodeKind};
use crate::ops::{Attrs, Inventory, TensorSpec};

pub use cpu::emit_cpu;
pub use cuda::{emit_cuda, block_size};
pub use emitters::EmitterRegistry;
pub use harness::{emit_harness, HarnessSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    CpuReference,
    CpuOptimized,
    Cuda,
}

impl Target {
    pub fn tag(self) -> &'static str {
        match self {
            Target::CpuReference => "cpu_ref",
            Target::CpuOptimized => "cpu_opt",
            Target::Cuda => "cuda",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitOptions {
    pub parallel: bool,
    pub tile: Option<usize>,
    pub unroll: Option<usize>,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            tile: Some(32),
            unroll: Some(4),
        }
    }
}

impl EmitOptions {
    /// Options for the naive reference kernel.
    pub fn naive() -> Self {
        Self {
            parallel: false,
            tile: None,
            unroll: None,
        }
    }

    pub fn check(&self) -> Result<(), EmitError> {
        for (name, v) in [("tile", self.tile), ("unroll", self.unroll)] {
            if let Some(v) = v {
                if !(2..=64).contains(&v) || !v.is_power_of_two() {
                    return Err(EmitError::InvalidOptions(format!(
                        "{name} = {v} must be a power of two in [2, 64]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("no emitter registered for operator `{0}`")]
    UnsupportedOp(String),
    #[error("graph is not valid: {0}")]
    InvalidGraph(String),
    #[error("invalid emit options: {0}")]
    InvalidOptions(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRole {
    Input,
    Intermediate,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSlot {
    pub node: NodeId,
    pub role: BufferRole,
    pub spec: TensorSpec,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelSource {
    pub target: Target,
    pub entry_name: String,
    pub source_text: String,
    /// Entry-point parameters, in order.
    pub buffer_plan: Vec<BufferSlot>,
}

/// `pair<id>_<target tag>`; always a valid C identifier.
pub fn mangle_entry(pair_id: u64, target: Target) -> String {
    format!("pair{pair_id}_{}", target.tag())
}

/// Outputs, then inputs, then intermediates, each in ascending id. Every node
/// gets its own buffer; an input that is also a sink stays an input.
pub fn buffer_plan(graph: &ComputationGraph) -> Vec<BufferSlot> {
    let role_of = |id: NodeId, kind: NodeKind| match kind {
        NodeKind::Input => BufferRole::Input,
        NodeKind::Operator if graph.outputs().contains(&id) => BufferRole::Output,
        NodeKind::Operator => BufferRole::Intermediate,
    };
    let mut plan: Vec<BufferSlot> = graph
        .nodes()
        .iter()
        .map(|n| BufferSlot {
            node: n.id,
            role: role_of(n.id, n.kind),
            spec: n.spec.clone(),
        })
        .collect();
    let rank = |r: BufferRole| match r {
        BufferRole::Output => 0,
        BufferRole::Input => 1,
        BufferRole::Intermediate => 2,
    };
    plan.sort_by_key(|s| (rank(s.role), s.node));
    plan
}

pub fn buffer_name(id: NodeId) -> String {
    format!("v{}", id.0)
}

/// C parameter list for a buffer plan, e.g. `float* v2, const float* v0`.
pub fn c_params(plan: &[BufferSlot]) -> String {
    plan.iter()
        .map(|s| {
            let ty = s.spec.dtype.c_type();
            match s.role {
                BufferRole::Input => format!("const {ty}* {}", buffer_name(s.node)),
                _ => format!("{ty}* {}", buffer_name(s.node)),
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Tokens whose presence marks leaked framework plumbing.
pub const FORBIDDEN_TOKENS: &[&str] = &["TVM", "DLTensor", "TVMValue", "v_handle", "resource_handle"];

pub const KERNEL_INCLUDES: &[&str] = &["math.h", "stdint.h", "stddef.h"];
pub const HARNESS_INCLUDES: &[&str] = &["stdint.h", "stdio.h", "stdlib.h", "string.h", "time.h"];

/// Which include whitelist a scanned source is held to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Kernel(Target),
    Harness,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CleanViolation {
    pub line: usize,
    pub message: String,
}

/// Token scan for framework identifiers and non-whitelisted includes.
pub fn scan_clean(text: &str, kind: SourceKind) -> Vec<CleanViolation> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        for tok in FORBIDDEN_TOKENS {
            if line.contains(tok) {
                out.push(CleanViolation {
                    line: n + 1,
                    message: format!("forbidden token `{tok}`"),
                });
            }
        }
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim_start();
            if let Some(arg) = rest.strip_prefix("include") {
                let header = arg
                    .trim()
                    .trim_start_matches(['<', '"'])
                    .trim_end_matches(['>', '"'])
                    .to_string();
                let allowed = match kind {
                    SourceKind::Kernel(Target::CpuOptimized) => {
                        KERNEL_INCLUDES.contains(&header.as_str()) || header == "omp.h"
                    }
                    SourceKind::Kernel(_) => KERNEL_INCLUDES.contains(&header.as_str()),
                    SourceKind::Harness => HARNESS_INCLUDES.contains(&header.as_str()),
                };
                if !allowed {
                    out.push(CleanViolation {
                        line: n + 1,
                        message: format!("include <{header}> is not whitelisted"),
                    });
                }
            }
        }
    }
    out
}

/// Operand view of one node handed to an emitter.
pub struct NodeCtx<'a> {
    pub id: NodeId,
    pub op: &'a str,
    pub spec: &'a TensorSpec,
    pub attrs: &'a Attrs,
    /// Buffer name written by this node.
    pub out: String,
    /// (buffer name, spec) per input slot.
    pub args: Vec<(String, &'a TensorSpec)>,
}

/// Indented line writer for C-family sources.
#[derive(Default)]
pub struct Code {
    buf: String,
    indent: usize,
}

impl Code {
    pub fn line(&mut self, s: impl AsRef<str>) {
        let s = s.as_ref();
        if s.is_empty() {
            self.buf.push('\n');
        } else {
            let _ = writeln!(self.buf, "{:width$}{s}", "", width = self.indent * 4);
        }
    }

    /// Writes `head {` and indents.
    pub fn open(&mut self, head: impl AsRef<str>) {
        self.line(format!("{} {{", head.as_ref()));
        self.indent += 1;
    }

    pub fn close(&mut self) {
        self.indent -= 1;
        self.line("}");
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// `i0 * 9 + i1` style row-major index over loop variables.
pub fn flat_index(vars: &[String], shape: &[usize]) -> String {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let terms: Vec<String> = vars
        .iter()
        .zip(&strides)
        .map(|(v, &s)| if s == 1 { v.clone() } else { format!("{v} * {s}") })
        .collect();
    terms.join(" + ")
}

pub(crate) fn node_contexts<'a>(
    inv: &Inventory,
    graph: &'a ComputationGraph,
    name: impl Fn(NodeId) -> String,
) -> Result<Vec<NodeCtx<'a>>, EmitError> {
    let order = graph
        .topo_order()
        .map_err(|e| EmitError::InvalidGraph(e.to_string()))?;
    let mut out = Vec::new();
    for id in order {
        let node = graph.node(id).expect("topo ids exist");
        let Some(op) = node.op.as_deref() else { continue };
        let args = graph
            .predecessors(inv, id)
            .into_iter()
            .map(|p| {
                let p = p.ok_or_else(|| EmitError::InvalidGraph(format!("node {id} has an unfilled slot")))?;
                Ok((name(p), &graph.node(p).expect("exists").spec))
            })
            .collect::<Result<Vec<_>, EmitError>>()?;
        out.push(NodeCtx {
            id,
            op,
            spec: &node.spec,
            attrs: &node.attrs,
            out: name(id),
            args,
        });
    }
    Ok(out)
}

pub(crate) fn check_graph(inv: &Inventory, graph: &ComputationGraph) -> Result<(), EmitError> {
    let report = graph.validate(inv);
    if report.ok {
        Ok(())
    } else {
        Err(EmitError::InvalidGraph(
            report
                .violations
                .iter()
                .map(|v| v.message.clone())
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}
