use std::collections::BTreeMap;

use thiserror::Error;

use super::{ComputationGraph, GraphError, NodeId, NodeKind};
use crate::ops::{Inventory, TensorData, TensorValue};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("no value supplied for input node {0}")]
    MissingInput(NodeId),
    #[error("value for node {0} does not match its spec")]
    SpecMismatch(NodeId),
    #[error("node {0} is not an input node")]
    NotAnInput(NodeId),
    #[error("graph is not valid: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Evaluates the graph in topological order and returns the value of every
/// output node.
pub fn interpret(
    inv: &Inventory,
    graph: &ComputationGraph,
    inputs: &BTreeMap<NodeId, TensorValue>,
) -> Result<BTreeMap<NodeId, TensorValue>, InterpError> {
    for id in inputs.keys() {
        match graph.node(*id) {
            Some(n) if n.kind == NodeKind::Input => {}
            _ => return Err(InterpError::NotAnInput(*id)),
        }
    }
    let order = graph.topo_order()?;
    let mut values: Vec<Option<TensorValue>> = vec![None; graph.len()];
    for id in order {
        let node = &graph.nodes()[id.0];
        let value = match node.kind {
            NodeKind::Input => {
                let v = inputs.get(&id).ok_or(InterpError::MissingInput(id))?;
                let len_ok = match &v.data {
                    TensorData::F32(d) => d.len() == node.spec.len(),
                    TensorData::I32(d) => d.len() == node.spec.len(),
                };
                if v.spec != node.spec || !len_ok {
                    return Err(InterpError::SpecMismatch(id));
                }
                v.clone()
            }
            NodeKind::Operator => {
                let op_name = node.op.as_deref().unwrap_or_default();
                let op = inv
                    .get(op_name)
                    .ok_or_else(|| InterpError::InvalidGraph(format!("unknown operator `{op_name}`")))?;
                let preds = graph.predecessors(inv, id);
                let args = preds
                    .iter()
                    .map(|p| {
                        p.and_then(|p| values[p.0].as_ref())
                            .ok_or_else(|| InterpError::InvalidGraph(format!("node {id} has an unfilled slot")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let specs: Vec<_> = args.iter().map(|a| a.spec.clone()).collect();
                let inferred = inv
                    .infer_output_spec(op_name, &specs, &node.attrs)
                    .map_err(|e| InterpError::InvalidGraph(e.to_string()))?;
                if inferred != node.spec {
                    return Err(InterpError::SpecMismatch(id));
                }
                op.evaluate(&args, &node.attrs, &node.spec)
            }
        };
        values[id.0] = Some(value);
    }
    Ok(graph
        .outputs()
        .iter()
        .map(|&id| (id, values[id.0].take().expect("evaluated in topo order")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::InputStream;
    use crate::ops::{Attrs, AttrValue, TensorSpec};

    #[test]
    fn cos_of_zeros_is_one() {
        let inv = Inventory::global();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[36, 9]));
        let c = g.add_operator(inv, "cos", Attrs::new(), &[x]).unwrap();
        let inputs = BTreeMap::from([(x, TensorValue::zeros(TensorSpec::f32(&[36, 9])))]);
        let out = interpret(inv, &g, &inputs).unwrap();
        assert!(out[&c].as_f32().iter().all(|&v| v == 1.0));
        assert_eq!(out[&c].as_f32().len(), 324);
    }

    #[test]
    fn sum_axis_one() {
        let inv = Inventory::global();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[2, 3]));
        let attrs = Attrs::from([
            ("axis".to_string(), AttrValue::Int(1)),
            ("keepdims".to_string(), AttrValue::Bool(false)),
        ]);
        let s = g.add_operator(inv, "sum", attrs, &[x]).unwrap();
        let inputs = BTreeMap::from([(
            x,
            TensorValue::f32(TensorSpec::f32(&[2, 3]), vec![1., 2., 3., 4., 5., 6.]),
        )]);
        assert_eq!(interpret(inv, &g, &inputs).unwrap()[&s].as_f32(), &[6.0, 15.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let inv = Inventory::global();
        let mut g = ComputationGraph::new();
        let a = g.add_input(TensorSpec::f32(&[4, 3]));
        let b = g.add_input(TensorSpec::f32(&[3, 5]));
        let m = g.add_operator(inv, "matmul", Attrs::new(), &[a, b]).unwrap();
        let mut stream = InputStream::new(11);
        let av: Vec<f32> = (0..12).map(|_| stream.next_f32()).collect();
        let bv: Vec<f32> = (0..15).map(|_| stream.next_f32()).collect();
        // independent triple loop
        let mut expect = [0.0f32; 20];
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0f64;
                for k in 0..3 {
                    acc += f64::from(av[i * 3 + k]) * f64::from(bv[k * 5 + j]);
                }
                expect[i * 5 + j] = acc as f32;
            }
        }
        let inputs = BTreeMap::from([
            (a, TensorValue::f32(TensorSpec::f32(&[4, 3]), av)),
            (b, TensorValue::f32(TensorSpec::f32(&[3, 5]), bv)),
        ]);
        assert_eq!(interpret(inv, &g, &inputs).unwrap()[&m].as_f32(), &expect);
    }

    #[test]
    fn input_errors() {
        let inv = Inventory::global();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[2, 3]));
        g.add_operator(inv, "relu", Attrs::new(), &[x]).unwrap();
        assert_eq!(
            interpret(inv, &g, &BTreeMap::new()),
            Err(InterpError::MissingInput(x))
        );
        let wrong = BTreeMap::from([(x, TensorValue::zeros(TensorSpec::f32(&[3, 2])))]);
        assert_eq!(interpret(inv, &g, &wrong), Err(InterpError::SpecMismatch(x)));
    }
}
