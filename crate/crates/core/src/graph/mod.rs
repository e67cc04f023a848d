//! Computation-graph IR: append-oriented construction with atomic mutations,
//! flow validation, deterministic topological ordering and canonical JSON.

pub mod interp;

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{Attrs, DType, Inventory, OperatorCategory, ShapeError, TensorSpec};

pub use interp::{interpret, InterpError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Input,
    #[serde(rename = "op")]
    Operator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Operator name; `None` for inputs.
    pub op: Option<String>,
    pub attrs: Attrs,
    pub spec: TensorSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("edge {from} -> {to} would form a cycle")]
    CycleWouldForm { from: NodeId, to: NodeId },
    #[error("slot {slot} of node {to} is already occupied")]
    SlotOccupied { to: NodeId, slot: usize },
    #[error("slot {slot} is out of range for node {to}")]
    SlotOutOfRange { to: NodeId, slot: usize },
    #[error("node {0} is an input and has no slots")]
    NotAnOperator(NodeId),
    #[error("graph contains a cycle")]
    NotADag,
}

/// Stable rule identifiers reported by [`ComputationGraph::validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DenseIds,
    EdgeEndpoint,
    Dag,
    DanglingSlot,
    ExtraEdge,
    UnknownOperator,
    ShapeConsistency,
    OutputSet,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub nodes: Vec<NodeId>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComputationGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<Edge>,
    outputs: Vec<NodeId>,
}

impl ComputationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sink nodes in ascending id order.
    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.get(id.0).filter(|n| n.id == id)
    }

    pub fn input_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Input)
            .map(|n| n.id)
            .collect()
    }

    pub fn operator_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Operator)
    }

    pub fn operator_count(&self) -> usize {
        self.operator_nodes().count()
    }

    /// Producers of `id`'s slots, in slot order; `None` marks an unfilled slot.
    pub fn predecessors(&self, inv: &Inventory, id: NodeId) -> Vec<Option<NodeId>> {
        let arity = self
            .node(id)
            .and_then(|n| n.op.as_deref())
            .and_then(|op| inv.get(op))
            .map_or(0, |o| o.arity());
        let mut slots = vec![None; arity];
        for e in self.edges.iter().filter(|e| e.to == id) {
            if e.slot < arity {
                slots[e.slot] = Some(e.from);
            }
        }
        slots
    }

    pub fn successors(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.from == id).map(|e| e.to).collect()
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|e| e.from == id).count()
    }

    pub fn in_degree(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|e| e.to == id).count()
    }

    pub fn add_input(&mut self, spec: TensorSpec) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(GraphNode {
            id,
            kind: NodeKind::Input,
            op: None,
            attrs: Attrs::new(),
            spec,
        });
        self.refresh_outputs();
        id
    }

    /// Appends an operator node fed by `inputs` (one per slot). On error the
    /// graph is left untouched.
    pub fn add_operator(
        &mut self,
        inv: &Inventory,
        op: &str,
        attrs: Attrs,
        inputs: &[NodeId],
    ) -> Result<NodeId, GraphError> {
        let specs = inputs
            .iter()
            .map(|&i| self.node(i).map(|n| n.spec.clone()).ok_or(GraphError::UnknownNode(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = inv.infer_output_spec(op, &specs, &attrs)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(GraphNode {
            id,
            kind: NodeKind::Operator,
            op: Some(op.to_string()),
            attrs,
            spec,
        });
        for (slot, &from) in inputs.iter().enumerate() {
            self.edges.push(Edge { from, to: id, slot });
        }
        self.refresh_outputs();
        Ok(id)
    }

    /// Fills an empty slot. Rejected if it would create a cycle, the slot is
    /// taken or out of range, or the completed node no longer infers to its
    /// recorded spec. The graph is unchanged on rejection.
    pub fn add_edge(
        &mut self,
        inv: &Inventory,
        from: NodeId,
        to: NodeId,
        slot: usize,
    ) -> Result<(), GraphError> {
        self.node(from).ok_or(GraphError::UnknownNode(from))?;
        let target = self.node(to).ok_or(GraphError::UnknownNode(to))?;
        let op_name = match (&target.kind, &target.op) {
            (NodeKind::Operator, Some(op)) => op.clone(),
            _ => return Err(GraphError::NotAnOperator(to)),
        };
        let mut slots = self.predecessors(inv, to);
        if slot >= slots.len() {
            return Err(GraphError::SlotOutOfRange { to, slot });
        }
        if slots[slot].is_some() {
            return Err(GraphError::SlotOccupied { to, slot });
        }
        if from == to || self.reaches(to, from) {
            return Err(GraphError::CycleWouldForm { from, to });
        }
        slots[slot] = Some(from);
        if slots.iter().all(Option::is_some) {
            let specs: Vec<TensorSpec> = slots
                .iter()
                .map(|s| self.nodes[s.expect("filled").0].spec.clone())
                .collect();
            let inferred = inv.infer_output_spec(&op_name, &specs, &target.attrs)?;
            if inferred != target.spec {
                return Err(ShapeError::ShapeMismatch(format!(
                    "node {to} would infer {inferred}, recorded {}",
                    target.spec
                ))
                .into());
            }
        }
        self.edges.push(Edge { from, to, slot });
        self.refresh_outputs();
        Ok(())
    }

    /// Detaches whatever feeds `slot` of `to`.
    pub fn remove_edge(&mut self, to: NodeId, slot: usize) -> Option<Edge> {
        let pos = self.edges.iter().position(|e| e.to == to && e.slot == slot)?;
        let edge = self.edges.remove(pos);
        self.refresh_outputs();
        Some(edge)
    }

    /// Whether a directed path leads from `from` to `to`.
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.successors(n));
            }
        }
        false
    }

    fn refresh_outputs(&mut self) {
        let mut has_out = vec![false; self.nodes.len()];
        for e in &self.edges {
            if let Some(flag) = has_out.get_mut(e.from.0) {
                *flag = true;
            }
        }
        self.outputs = self
            .nodes
            .iter()
            .filter(|n| !has_out.get(n.id.0).copied().unwrap_or(false))
            .map(|n| n.id)
            .collect();
    }

    /// Kahn's algorithm, ties broken by ascending id.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            if e.from.0 >= n || e.to.0 >= n {
                return Err(GraphError::UnknownNode(if e.from.0 >= n { e.from } else { e.to }));
            }
            indeg[e.to.0] += 1;
            succ[e.from.0].push(e.to.0);
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(NodeId(i));
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(Reverse(j));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(GraphError::NotADag)
        }
    }

    /// Longest path (in edges) ending at each node.
    pub fn node_depths(&self) -> Result<Vec<usize>, GraphError> {
        let order = self.topo_order()?;
        let mut depth = vec![0usize; self.nodes.len()];
        for id in order {
            for e in self.edges.iter().filter(|e| e.from == id) {
                depth[e.to.0] = depth[e.to.0].max(depth[id.0] + 1);
            }
        }
        Ok(depth)
    }

    /// Longest input-to-sink path, counted in edges. Zero for edge-free graphs.
    pub fn depth(&self) -> Result<usize, GraphError> {
        Ok(self.node_depths()?.into_iter().max().unwrap_or(0))
    }

    /// Distinct categories of the operator nodes, in category order.
    pub fn categories(&self, inv: &Inventory) -> Vec<OperatorCategory> {
        let set: BTreeSet<OperatorCategory> = self
            .operator_nodes()
            .filter_map(|n| n.op.as_deref().and_then(|op| inv.get(op)))
            .map(|o| o.category())
            .collect();
        set.into_iter().collect()
    }

    pub fn has_category(&self, inv: &Inventory, cat: OperatorCategory) -> bool {
        self.categories(inv).contains(&cat)
    }

    /// Checks, in order: dense ids and edge endpoints, acyclicity, slot
    /// completeness, per-node shape/type consistency, and the output set.
    /// Every violation is reported.
    pub fn validate(&self, inv: &Inventory) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 != i {
                v.push(Violation {
                    rule: Rule::DenseIds,
                    nodes: vec![node.id],
                    message: format!("node at position {i} carries id {}", node.id),
                });
            }
        }
        let mut endpoints_ok = true;
        for e in &self.edges {
            if e.from.0 >= n || e.to.0 >= n {
                endpoints_ok = false;
                v.push(Violation {
                    rule: Rule::EdgeEndpoint,
                    nodes: vec![e.from, e.to],
                    message: format!("edge {} -> {} references a missing node", e.from, e.to),
                });
            }
        }
        if !endpoints_ok || !v.is_empty() {
            return ValidationReport::from_violations(v);
        }

        let dag = self.topo_order().is_ok();
        if !dag {
            let order_len = {
                // nodes left over after Kahn's algorithm sit on or behind a cycle
                let mut indeg = vec![0usize; n];
                for e in &self.edges {
                    indeg[e.to.0] += 1;
                }
                let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
                let mut done = vec![false; n];
                while let Some(i) = stack.pop() {
                    done[i] = true;
                    for e in self.edges.iter().filter(|e| e.from.0 == i) {
                        indeg[e.to.0] -= 1;
                        if indeg[e.to.0] == 0 {
                            stack.push(e.to.0);
                        }
                    }
                }
                (0..n).filter(|&i| !done[i]).map(NodeId).collect::<Vec<_>>()
            };
            v.push(Violation {
                rule: Rule::Dag,
                nodes: order_len,
                message: "graph contains a directed cycle".into(),
            });
        }

        let mut slot_edges: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        for e in &self.edges {
            *slot_edges.entry((e.to, e.slot)).or_default() += 1;
        }
        let mut complete = vec![true; n];
        for node in &self.nodes {
            match (node.kind, node.op.as_deref()) {
                (NodeKind::Input, op) => {
                    if op.is_some() {
                        v.push(Violation {
                            rule: Rule::UnknownOperator,
                            nodes: vec![node.id],
                            message: format!("input node {} names an operator", node.id),
                        });
                    }
                    if self.in_degree(node.id) > 0 {
                        v.push(Violation {
                            rule: Rule::ExtraEdge,
                            nodes: vec![node.id],
                            message: format!("input node {} has incoming edges", node.id),
                        });
                    }
                    if let Err(e) = TensorSpec::new(node.spec.dtype, node.spec.shape.clone()) {
                        v.push(Violation {
                            rule: Rule::ShapeConsistency,
                            nodes: vec![node.id],
                            message: format!("input node {}: {e}", node.id),
                        });
                    } else if node.spec.numel() > inv.element_cap() {
                        v.push(Violation {
                            rule: Rule::ShapeConsistency,
                            nodes: vec![node.id],
                            message: format!("input node {} exceeds the element cap", node.id),
                        });
                    }
                }
                (NodeKind::Operator, None) => {
                    complete[node.id.0] = false;
                    v.push(Violation {
                        rule: Rule::UnknownOperator,
                        nodes: vec![node.id],
                        message: format!("operator node {} has no operator name", node.id),
                    });
                }
                (NodeKind::Operator, Some(op)) => match inv.get(op) {
                    None => {
                        complete[node.id.0] = false;
                        v.push(Violation {
                            rule: Rule::UnknownOperator,
                            nodes: vec![node.id],
                            message: format!("node {} uses unknown operator `{op}`", node.id),
                        });
                    }
                    Some(o) => {
                        for slot in 0..o.arity() {
                            match slot_edges.get(&(node.id, slot)).copied().unwrap_or(0) {
                                0 => {
                                    complete[node.id.0] = false;
                                    v.push(Violation {
                                        rule: Rule::DanglingSlot,
                                        nodes: vec![node.id],
                                        message: format!(
                                            "dangling input slot {slot} on node {} (`{op}`)",
                                            node.id
                                        ),
                                    });
                                }
                                1 => {}
                                k => {
                                    complete[node.id.0] = false;
                                    v.push(Violation {
                                        rule: Rule::ExtraEdge,
                                        nodes: vec![node.id],
                                        message: format!(
                                            "slot {slot} of node {} is fed by {k} edges",
                                            node.id
                                        ),
                                    });
                                }
                            }
                        }
                        for e in self.edges.iter().filter(|e| e.to == node.id && e.slot >= o.arity()) {
                            complete[node.id.0] = false;
                            v.push(Violation {
                                rule: Rule::ExtraEdge,
                                nodes: vec![node.id, e.from],
                                message: format!(
                                    "edge {} -> {} targets slot {} but `{op}` has arity {}",
                                    e.from,
                                    e.to,
                                    e.slot,
                                    o.arity()
                                ),
                            });
                        }
                    }
                },
            }
        }

        for node in self.operator_nodes() {
            if !complete[node.id.0] {
                continue;
            }
            let op = node.op.as_deref().expect("operator named");
            let specs: Vec<TensorSpec> = self
                .predecessors(inv, node.id)
                .into_iter()
                .map(|p| self.nodes[p.expect("complete").0].spec.clone())
                .collect();
            match inv.infer_output_spec(op, &specs, &node.attrs) {
                Ok(spec) if spec == node.spec => {}
                Ok(spec) => v.push(Violation {
                    rule: Rule::ShapeConsistency,
                    nodes: vec![node.id],
                    message: format!(
                        "node {} records {} but its inputs infer {spec}",
                        node.id, node.spec
                    ),
                }),
                Err(e) => v.push(Violation {
                    rule: Rule::ShapeConsistency,
                    nodes: vec![node.id],
                    message: format!("node {} (`{op}`): {e}", node.id),
                }),
            }
        }

        let sinks: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| self.out_degree(n.id) == 0)
            .map(|n| n.id)
            .collect();
        if sinks != self.outputs {
            v.push(Violation {
                rule: Rule::OutputSet,
                nodes: self.outputs.clone(),
                message: format!(
                    "outputs {:?} differ from sink set {:?}",
                    self.outputs.iter().map(|i| i.0).collect::<Vec<_>>(),
                    sinks.iter().map(|i| i.0).collect::<Vec<_>>()
                ),
            });
        }
        ValidationReport::from_violations(v)
    }

    pub fn to_wire(&self) -> GraphJson {
        GraphJson {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    kind: n.kind,
                    op: n.op.clone(),
                    attrs: n.attrs.clone(),
                    shape: n.spec.shape.clone(),
                    dtype: n.spec.dtype,
                })
                .collect(),
            edges: self.edges.iter().map(|e| [e.from.0, e.to.0, e.slot]).collect(),
            outputs: self.outputs.clone(),
        }
    }

    /// Builds a graph from its wire form without checking it; call
    /// [`validate`](Self::validate) afterwards.
    pub fn from_wire(wire: GraphJson) -> Self {
        Self {
            nodes: wire
                .nodes
                .into_iter()
                .map(|n| GraphNode {
                    id: n.id,
                    kind: n.kind,
                    op: n.op,
                    attrs: n.attrs,
                    spec: TensorSpec {
                        dtype: n.dtype,
                        shape: n.shape,
                    },
                })
                .collect(),
            edges: wire
                .edges
                .into_iter()
                .map(|[from, to, slot]| Edge {
                    from: NodeId(from),
                    to: NodeId(to),
                    slot,
                })
                .collect(),
            outputs: wire.outputs,
        }
    }

    /// Canonical JSON: sorted keys, dense ids, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        crate::canonical_json(&self.to_wire())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str::<GraphJson>(text).map(Self::from_wire)
    }
}

impl Serialize for ComputationGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComputationGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        GraphJson::deserialize(d).map(Self::from_wire)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeJson {
    pub id: NodeId,
    pub kind: NodeKind,
    pub op: Option<String>,
    pub attrs: Attrs,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

/// Wire schema: `{nodes:[{id,kind,op,attrs,shape,dtype}], edges:[[from,to,slot]], outputs:[ids]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<[usize; 3]>,
    pub outputs: Vec<NodeId>,
}
