//! Deterministic input generation shared by the interpreter and the emitted
//! C harness. Both sides must produce bit-identical streams, so the generator
//! only uses integer arithmetic and an exact power-of-two scale.

use std::collections::BTreeMap;

use crate::graph::{ComputationGraph, NodeId};
use crate::ops::{DType, TensorValue};

/// SplitMix64 stream mapped to f32 values in [-1, 1).
#[derive(Clone, Debug)]
pub struct InputStream {
    state: u64,
}

impl InputStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 24 bits scaled by 2^-23, minus one: exact in f32.
    pub fn next_f32(&mut self) -> f32 {
        let bits = (self.next_u64() >> 40) as u32;
        bits as f32 * (1.0 / 8_388_608.0) - 1.0
    }
}

/// Values for every input node, filled in ascending node id order from one
/// stream seeded with `seed`.
pub fn graph_inputs(graph: &ComputationGraph, seed: u64) -> BTreeMap<NodeId, TensorValue> {
    let mut stream = InputStream::new(seed);
    graph
        .input_ids()
        .into_iter()
        .map(|id| {
            let spec = graph.node(id).expect("input exists").spec.clone();
            assert_eq!(spec.dtype, DType::F32, "inputs are f32");
            let data = (0..spec.len()).map(|_| stream.next_f32()).collect();
            (id, TensorValue::f32(spec, data))
        })
        .collect()
}
