//! Generator and evaluator for paired CUDA / CPU C kernels derived from
//! random computation graphs.
//!
//! The pipeline runs: [`builder`] draws a random [`graph::ComputationGraph`]
//! over the [`ops`] inventory, [`codegen`] emits CUDA, naive CPU, optimized
//! CPU and harness sources, [`dataset`] wraps them into labelled records, and
//! [`eval`] compiles and scores candidate CPU translations against the
//! in-process interpreter.

pub mod builder;
pub mod codegen;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod inputs;
pub mod ops;

use serde::Serialize;

/// Serializes through `serde_json::Value`, whose maps are key-sorted, giving a
/// byte-stable rendering.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("value renders")
}
