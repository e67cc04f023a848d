use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{ComputationGraph, NodeId};
use crate::ops::{DType, Inventory, OperatorCategory, TensorData};

/// Per-element tolerance `|actual - expected| <= abs_tol + rel_tol * |expected|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-5,
            rel_tol: 1e-4,
        }
    }
}

impl CompareSpec {
    /// Long accumulations (matmul, conv) get a looser bound.
    pub fn for_graph(graph: &ComputationGraph, inv: &Inventory) -> Self {
        if graph.has_category(inv, OperatorCategory::ComputeIntensive) {
            Self {
                abs_tol: 1e-5,
                rel_tol: 1e-3,
            }
        } else {
            Self::default()
        }
    }

    pub fn accepts(&self, actual: f64, expected: f64) -> bool {
        if expected.is_nan() {
            return actual.is_nan();
        }
        if actual.is_nan() {
            return false;
        }
        if actual == expected {
            return true;
        }
        (actual - expected).abs() <= self.abs_tol + self.rel_tol * expected.abs()
    }
}

/// Output values per node, in flat element order.
pub type Outputs = BTreeMap<NodeId, Vec<f64>>;

fn parse_value(s: &str) -> Option<f64> {
    let t = s.trim_start_matches(['+', '-']);
    if t.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    s.parse().ok()
}

/// Parses harness `OUT <node> <index> <value>` lines; other lines are ignored.
pub fn parse_outputs(stdout: &str) -> Result<Outputs, String> {
    let mut out: Outputs = BTreeMap::new();
    for (n, line) in stdout.lines().enumerate() {
        let mut it = line.split_ascii_whitespace();
        if it.next() != Some("OUT") {
            continue;
        }
        let bad = || format!("malformed output line {}: `{line}`", n + 1);
        let node: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let index: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let value = it.next().and_then(parse_value).ok_or_else(bad)?;
        let v = out.entry(NodeId(node)).or_default();
        if index != v.len() {
            return Err(format!("node {node}: element {index} out of order"));
        }
        v.push(value);
    }
    Ok(out)
}

/// Interpreter outputs converted to the harness representation.
pub fn tensor_outputs(values: &BTreeMap<NodeId, crate::ops::TensorValue>) -> Outputs {
    values
        .iter()
        .map(|(&id, t)| {
            let v = match &t.data {
                TensorData::F32(d) => d.iter().map(|&x| x as f64).collect(),
                TensorData::I32(d) => d.iter().map(|&x| x as f64).collect(),
            };
            (id, v)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CompareResult {
    pub ok: bool,
    pub mismatches: usize,
    pub max_abs_err: f64,
    pub first_mismatch: Option<String>,
}

/// Element-wise comparison; `I32` outputs must match exactly.
pub fn compare_outputs(
    graph: &ComputationGraph,
    expected: &Outputs,
    actual: &Outputs,
    spec: &CompareSpec,
) -> CompareResult {
    let mut r = CompareResult::default();
    let note = |r: &mut CompareResult, msg: String| {
        r.mismatches += 1;
        r.first_mismatch.get_or_insert(msg);
    };
    for (id, exp) in expected {
        let exact = graph.node(*id).map(|n| n.spec.dtype == DType::I32).unwrap_or(false);
        let Some(act) = actual.get(id) else {
            note(&mut r, format!("node {id}: no output"));
            continue;
        };
        if act.len() != exp.len() {
            note(&mut r, format!("node {id}: {} elements, expected {}", act.len(), exp.len()));
            continue;
        }
        for (i, (&a, &e)) in act.iter().zip(exp).enumerate() {
            // `%.9g` text round-trips f32 exactly, but only once narrowed back to f32
            let a = if exact { a } else { a as f32 as f64 };
            let pass = if exact { a == e } else { spec.accepts(a, e) };
            if a.is_finite() && e.is_finite() {
                r.max_abs_err = r.max_abs_err.max((a - e).abs());
            }
            if !pass {
                note(&mut r, format!("node {id}[{i}]: got {a}, expected {e}"));
            }
        }
    }
    for id in actual.keys() {
        if !expected.contains_key(id) {
            note(&mut r, format!("node {id}: unexpected output"));
        }
    }
    r.ok = r.mismatches == 0;
    r
}
