//! Seeded stochastic graph construction.
//!
//! Each step expands one or two sink-side nodes with freshly picked operators,
//! then applies one topological-diversity action (extra expansion, random
//! connection, branch or merge). Every step is flow-validated; a failing step
//! is rolled back and retried with fresh randomness. Node count and depth are
//! hard caps checked before a step is accepted.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationGraph, GraphError, NodeId, NodeKind};
use crate::ops::{
    default_shape_pool, Attrs, DType, Inventory, Operator, OperatorCategory, ShapeError,
    TensorSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionWeights {
    pub expand: f64,
    pub random_connection: f64,
    pub branch: f64,
    pub merge: f64,
}

impl Default for ActionWeights {
    fn default() -> Self {
        Self {
            expand: 1.0,
            random_connection: 1.0,
            branch: 1.0,
            merge: 1.0,
        }
    }
}

impl ActionWeights {
    fn as_array(&self) -> [(ActionKind, f64); 4] {
        [
            (ActionKind::Expand, self.expand),
            (ActionKind::RandomConnection, self.random_connection),
            (ActionKind::Branch, self.branch),
            (ActionKind::Merge, self.merge),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    pub seed: u64,
    pub n_max: usize,
    pub d_max: usize,
    pub p_op: f64,
    pub action_weights: ActionWeights,
    pub input_shape_pool: Vec<TensorSpec>,
    pub category_weights: BTreeMap<OperatorCategory, f64>,
    /// Attempts per step before the step is skipped.
    pub retry_budget: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_max: 12,
            d_max: 6,
            p_op: 0.4,
            action_weights: ActionWeights::default(),
            input_shape_pool: default_shape_pool(),
            category_weights: OperatorCategory::ALL.iter().map(|&c| (c, 1.0)).collect(),
            retry_budget: 50,
        }
    }
}

impl BuilderConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), BuildError> {
        let bad = |m: &str| Err(BuildError::InvalidConfig(m.to_string()));
        if self.n_max < 2 {
            return bad("n_max must be >= 2");
        }
        if self.d_max < 1 {
            return bad("d_max must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.p_op) {
            return bad("p_op must lie in [0, 1]");
        }
        let actions = self.action_weights.as_array();
        if actions.iter().any(|(_, w)| !(*w >= 0.0)) || actions.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return bad("action weights must be non-negative with a positive sum");
        }
        if self.category_weights.values().any(|w| !(*w >= 0.0))
            || self.category_weights.values().sum::<f64>() <= 0.0
        {
            return bad("category weights must be non-negative with a positive sum");
        }
        if self.input_shape_pool.is_empty() {
            return bad("input shape pool is empty");
        }
        for s in &self.input_shape_pool {
            if s.dtype != DType::F32 || TensorSpec::new(s.dtype, s.shape.clone()).is_err() {
                return bad("input shape pool entries must be valid f32 specs");
            }
        }
        if self.retry_budget == 0 {
            return bad("retry budget must be positive");
        }
        Ok(())
    }

    /// Per-graph usage cap `ceil(p_op * |O|)`.
    pub fn usage_cap(&self, inventory_size: usize) -> usize {
        let raw = self.p_op * inventory_size as f64;
        // guard against 0.1 * 30 = 3.0000000000000004 style drift
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BuildError {
    #[error("invalid builder config: {0}")]
    InvalidConfig(String),
    #[error("no valid graph with at least 2 nodes reachable for seed {seed}")]
    BuildExhausted { seed: u64 },
    #[error("no operator is under its usage cap")]
    NoEligibleOperator,
    #[error("operator `{0}` cannot be instantiated on any pool shape")]
    NoPrimitive(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Init,
    CandidateExpansion,
    Expand,
    RandomConnection,
    Branch,
    Merge,
}

/// A single graph edit; accepted trace entries replay through these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    AddInput { spec: TensorSpec },
    AddOperator { op: String, attrs: Attrs, inputs: Vec<NodeId> },
    Reconnect { to: NodeId, slot: usize, from: NodeId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub action: ActionKind,
    pub detail: String,
    pub accepted: bool,
    pub reason: Option<String>,
    pub mutations: Vec<Mutation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildTrace {
    pub entries: Vec<TraceEntry>,
}

impl BuildTrace {
    /// Rebuilds the graph from the accepted entries alone.
    pub fn replay(&self, inv: &Inventory) -> Result<ComputationGraph, GraphError> {
        let mut g = ComputationGraph::new();
        for entry in self.entries.iter().filter(|e| e.accepted) {
            for m in &entry.mutations {
                apply_mutation(inv, &mut g, m)?;
            }
        }
        Ok(g)
    }
}

fn apply_mutation(inv: &Inventory, g: &mut ComputationGraph, m: &Mutation) -> Result<Option<NodeId>, GraphError> {
    match m {
        Mutation::AddInput { spec } => Ok(Some(g.add_input(spec.clone()))),
        Mutation::AddOperator { op, attrs, inputs } => {
            g.add_operator(inv, op, attrs.clone(), inputs).map(Some)
        }
        Mutation::Reconnect { to, slot, from } => {
            let old = g.remove_edge(*to, *slot);
            if let Err(e) = g.add_edge(inv, *from, *to, *slot) {
                if let Some(old) = old {
                    g.add_edge(inv, old.from, old.to, old.slot)
                        .expect("restoring the detached edge");
                }
                return Err(e);
            }
            Ok(None)
        }
    }
}

/// Why one attempt was abandoned.
#[derive(Debug)]
enum Reject {
    NoEligible,
    Other(String),
}

impl From<GraphError> for Reject {
    fn from(e: GraphError) -> Self {
        Reject::Other(e.to_string())
    }
}

impl From<ShapeError> for Reject {
    fn from(e: ShapeError) -> Self {
        Reject::Other(e.to_string())
    }
}

/// Samples an operator among those under the usage cap. Categories are drawn
/// by `category_weights`, then an eligible operator uniformly within it.
pub fn pick_operator<'a, R: Rng + ?Sized>(
    inv: &'a Inventory,
    usage: &[usize],
    cfg: &BuilderConfig,
    rng: &mut R,
) -> Result<&'a dyn Operator, BuildError> {
    let cap = cfg.usage_cap(inv.len());
    let eligible: Vec<(usize, &dyn Operator)> = inv
        .operators()
        .enumerate()
        .filter(|(i, _)| usage.get(*i).copied().unwrap_or(0) < cap)
        .collect();
    let mut per_cat: BTreeMap<OperatorCategory, usize> = BTreeMap::new();
    for (_, op) in &eligible {
        *per_cat.entry(op.category()).or_default() += 1;
    }
    let weights: Vec<f64> = eligible
        .iter()
        .map(|(_, op)| {
            let w = cfg.category_weights.get(&op.category()).copied().unwrap_or(0.0);
            w / per_cat[&op.category()] as f64
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if eligible.is_empty() || total <= 0.0 {
        return Err(BuildError::NoEligibleOperator);
    }
    let mut t = rng.gen::<f64>() * total;
    for ((_, op), w) in eligible.iter().zip(&weights) {
        if *w > 0.0 {
            if t < *w {
                return Ok(*op);
            }
            t -= w;
        }
    }
    Ok(eligible
        .iter()
        .zip(&weights)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .expect("positive total weight")
        .0
         .1)
}

/// One or two distinct nodes with out-degree at most 1, drawn uniformly.
pub fn select_expansion_nodes<R: Rng + ?Sized>(graph: &ComputationGraph, rng: &mut R) -> Vec<NodeId> {
    let mut candidates: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.spec.dtype == DType::F32 && graph.out_degree(n.id) <= 1)
        .map(|n| n.id)
        .collect();
    if candidates.is_empty() {
        candidates = graph
            .nodes()
            .iter()
            .filter(|n| graph.out_degree(n.id) <= 1)
            .map(|n| n.id)
            .collect();
    }
    if candidates.is_empty() {
        candidates = graph.nodes().iter().map(|n| n.id).collect();
    }
    let size = rng.gen_range(1..=2).min(candidates.len());
    candidates.choose_multiple(rng, size).copied().collect()
}

struct Builder<'a> {
    inv: &'a Inventory,
    cfg: &'a BuilderConfig,
    rng: ChaCha8Rng,
    graph: ComputationGraph,
    usage: Vec<usize>,
    pending: Vec<Mutation>,
    trace: BuildTrace,
}

struct Snapshot {
    graph: ComputationGraph,
    usage: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(inv: &'a Inventory, cfg: &'a BuilderConfig) -> Self {
        Self {
            inv,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            graph: ComputationGraph::new(),
            usage: vec![0; inv.len()],
            pending: Vec::new(),
            trace: BuildTrace::default(),
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            graph: self.graph.clone(),
            usage: self.usage.clone(),
        }
    }

    fn restore(&mut self, s: Snapshot) {
        self.graph = s.graph;
        self.usage = s.usage;
        self.pending.clear();
    }

    fn apply(&mut self, m: Mutation) -> Result<Option<NodeId>, Reject> {
        let id = apply_mutation(self.inv, &mut self.graph, &m)?;
        if let Mutation::AddOperator { op, .. } = &m {
            let idx = self.inv.position(op).expect("registered operator");
            self.usage[idx] += 1;
        }
        self.pending.push(m);
        Ok(id)
    }

    fn record(&mut self, step: usize, action: ActionKind, detail: String, outcome: Result<(), String>) {
        let (accepted, reason, mutations) = match outcome {
            Ok(()) => (true, None, std::mem::take(&mut self.pending)),
            Err(r) => (false, Some(r), Vec::new()),
        };
        self.trace.entries.push(TraceEntry {
            step,
            action,
            detail,
            accepted,
            reason,
            mutations,
        });
    }

    /// Flow validation plus the hard size caps and the no-orphan-input rule.
    fn flow_check(&self) -> Result<(), String> {
        let report = self.graph.validate(self.inv);
        if !report.ok {
            return Err(report
                .violations
                .iter()
                .map(|v| v.message.clone())
                .collect::<Vec<_>>()
                .join("; "));
        }
        if self.graph.len() > self.cfg.n_max {
            return Err(format!("node count {} exceeds n_max", self.graph.len()));
        }
        let depth = self.graph.depth().map_err(|e| e.to_string())?;
        if depth > self.cfg.d_max {
            return Err(format!("depth {depth} exceeds d_max"));
        }
        if self.graph.len() > 1 {
            if let Some(orphan) = self
                .graph
                .nodes()
                .iter()
                .find(|n| n.kind == NodeKind::Input && self.graph.out_degree(n.id) == 0)
            {
                return Err(format!("input node {} has no consumer", orphan.id));
            }
        }
        Ok(())
    }

    /// Attaches a new operator node consuming `node` in slot 0.
    fn expand_from(&mut self, node: NodeId) -> Result<String, Reject> {
        let spec = self.graph.node(node).expect("node exists").spec.clone();
        if spec.dtype != DType::F32 {
            return Err(Reject::Other(format!("node {node} produces {spec}, not consumable")));
        }
        let depth = self.graph.node_depths()?[node.0];
        if depth + 1 > self.cfg.d_max {
            return Err(Reject::Other(format!("node {node} already at depth {depth}")));
        }
        let op = match pick_operator(self.inv, &self.usage, self.cfg, &mut self.rng) {
            Ok(op) => op,
            Err(_) => return Err(Reject::NoEligible),
        };
        let attrs = op.sample_attrs(&spec, &mut self.rng);
        let mut inputs = vec![node];
        let mut fresh = 0;
        if op.arity() == 2 {
            let want = op
                .operand_spec(&spec, &attrs, &self.cfg.input_shape_pool, &mut self.rng)
                .ok_or_else(|| Reject::Other(format!("`{}` cannot take {spec}", op.name())))?;
            let existing: Vec<NodeId> = self
                .graph
                .nodes()
                .iter()
                .filter(|n| n.id != node && n.spec == want)
                .map(|n| n.id)
                .collect();
            let second = match existing.choose(&mut self.rng) {
                Some(&id) => id,
                None => {
                    fresh = 1;
                    if self.graph.len() + 2 > self.cfg.n_max {
                        return Err(Reject::Other("no room for a fresh operand".into()));
                    }
                    self.apply(Mutation::AddInput { spec: want })?
                        .expect("inputs yield ids")
                }
            };
            inputs.push(second);
        }
        if self.graph.len() + 1 > self.cfg.n_max {
            return Err(Reject::Other("node cap reached".into()));
        }
        let name = op.name();
        self.apply(Mutation::AddOperator {
            op: name.to_string(),
            attrs,
            inputs: inputs.clone(),
        })?;
        Ok(format!(
            "{name}({}){}",
            inputs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "),
            if fresh > 0 { " +fresh input" } else { "" }
        ))
    }

    fn init(&mut self) {
        let spec = self
            .cfg
            .input_shape_pool
            .choose(&mut self.rng)
            .expect("non-empty pool")
            .clone();
        let detail = format!("input {spec}");
        self.apply(Mutation::AddInput { spec }).expect("inputs always apply");
        self.record(0, ActionKind::Init, detail, Ok(()));
    }

    /// Returns false when construction should stop.
    fn candidate_expansion(&mut self, step: usize) -> bool {
        if self.graph.len() + 1 > self.cfg.n_max {
            return false;
        }
        for _ in 0..self.cfg.retry_budget {
            let snap = self.snapshot();
            let targets = select_expansion_nodes(&self.graph, &mut self.rng);
            let mut details = Vec::new();
            let mut outcome = Ok(());
            for t in &targets {
                match self.expand_from(*t) {
                    Ok(d) => details.push(d),
                    Err(Reject::NoEligible) => {
                        self.restore(snap);
                        self.record(step, ActionKind::CandidateExpansion, String::new(), Err("no eligible operator".into()));
                        return false;
                    }
                    Err(Reject::Other(r)) => {
                        outcome = Err(r);
                        break;
                    }
                }
            }
            let outcome = outcome.and_then(|_| self.flow_check());
            let detail = format!(
                "expand [{}]: {}",
                targets.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", "),
                details.join("; ")
            );
            match outcome {
                Ok(()) => {
                    self.record(step, ActionKind::CandidateExpansion, detail, Ok(()));
                    return true;
                }
                Err(r) => {
                    self.restore(snap);
                    self.record(step, ActionKind::CandidateExpansion, detail, Err(r));
                }
            }
        }
        false
    }

    fn diversity(&mut self, step: usize) {
        let weights = self.cfg.action_weights.as_array();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut t = self.rng.gen::<f64>() * total;
        let mut action = weights.iter().rev().find(|(_, w)| *w > 0.0).expect("positive").0;
        for (kind, w) in weights {
            if w > 0.0 && t < w {
                action = kind;
                break;
            }
            t -= w;
        }
        self.diversity_action(step, action);
    }

    fn diversity_action(&mut self, step: usize, action: ActionKind) {
        let snap = self.snapshot();
        let result = match action {
            ActionKind::Expand => self.action_expand(),
            ActionKind::RandomConnection => self.action_connect(),
            ActionKind::Branch => self.action_branch(),
            ActionKind::Merge => self.action_merge(),
            _ => unreachable!("only diversity actions are weighted"),
        };
        let (detail, outcome) = match result {
            Ok(d) => {
                let check = self.flow_check();
                (d, check)
            }
            Err(Reject::NoEligible) => (String::new(), Err("no eligible operator".into())),
            Err(Reject::Other(r)) => (String::new(), Err(r)),
        };
        if outcome.is_err() {
            self.restore(snap);
        }
        self.record(step, action, detail, outcome);
    }

    fn action_expand(&mut self) -> Result<String, Reject> {
        let target = self
            .graph
            .nodes()
            .choose(&mut self.rng)
            .map(|n| n.id)
            .expect("non-empty graph");
        self.expand_from(target)
    }

    /// Re-feeds one operator slot from another producer with the same spec.
    /// Consumers are drawn with weight proportional to in-degree (floor 1).
    fn action_connect(&mut self) -> Result<String, Reject> {
        let consumers: Vec<(NodeId, f64)> = self
            .graph
            .operator_nodes()
            .map(|n| (n.id, self.graph.in_degree(n.id).max(1) as f64))
            .collect();
        if consumers.is_empty() {
            return Err(Reject::Other("no consumer nodes".into()));
        }
        let total: f64 = consumers.iter().map(|c| c.1).sum();
        let mut t = self.rng.gen::<f64>() * total;
        let mut consumer = consumers.last().expect("non-empty").0;
        for (id, w) in &consumers {
            if t < *w {
                consumer = *id;
                break;
            }
            t -= w;
        }
        let slots = self.graph.predecessors(self.inv, consumer);
        let slot = self.rng.gen_range(0..slots.len());
        let current = slots[slot].expect("valid graphs have filled slots");
        let want = self.graph.node(current).expect("exists").spec.clone();
        let producers: Vec<NodeId> = self
            .graph
            .nodes()
            .iter()
            .filter(|n| n.id != current && n.id != consumer && n.spec == want)
            .map(|n| n.id)
            .collect();
        let from = *producers
            .choose(&mut self.rng)
            .ok_or_else(|| Reject::Other(format!("no alternative producer for {consumer}:{slot}")))?;
        self.apply(Mutation::Reconnect {
            to: consumer,
            slot,
            from,
        })?;
        Ok(format!("connect {from} -> {consumer}:{slot} (was {current})"))
    }

    fn action_branch(&mut self) -> Result<String, Reject> {
        if self.graph.len() + 2 > self.cfg.n_max {
            return Err(Reject::Other("no room for two branch nodes".into()));
        }
        let depths = self.graph.node_depths()?;
        let roots: Vec<NodeId> = self
            .graph
            .nodes()
            .iter()
            .filter(|n| n.spec.dtype == DType::F32 && depths[n.id.0] < self.cfg.d_max)
            .map(|n| n.id)
            .collect();
        let root = *roots
            .choose(&mut self.rng)
            .ok_or_else(|| Reject::Other("no branchable node".into()))?;
        let a = self.expand_from(root)?;
        let b = self.expand_from(root)?;
        Ok(format!("branch {root} -> {{{a}; {b}}}"))
    }

    fn action_merge(&mut self) -> Result<String, Reject> {
        let sinks: Vec<NodeId> = self
            .graph
            .outputs()
            .iter()
            .copied()
            .filter(|&s| self.graph.node(s).expect("exists").spec.dtype == DType::F32)
            .collect();
        let mut pairs = Vec::new();
        for (i, &a) in sinks.iter().enumerate() {
            for &b in &sinks[i + 1..] {
                if self.graph.node(a).expect("exists").spec == self.graph.node(b).expect("exists").spec {
                    pairs.push((a, b));
                }
            }
        }
        let &(a, b) = pairs
            .choose(&mut self.rng)
            .ok_or_else(|| Reject::Other("no pair of compatible path terminals".into()))?;
        let cap = self.cfg.usage_cap(self.inv.len());
        let joiners: Vec<&str> = ["add", "sub", "mul"]
            .into_iter()
            .filter(|name| {
                self.inv
                    .position(name)
                    .is_some_and(|i| self.usage[i] < cap)
            })
            .collect();
        let op = *joiners.choose(&mut self.rng).ok_or(Reject::NoEligible)?;
        if self.graph.len() + 1 > self.cfg.n_max {
            return Err(Reject::Other("node cap reached".into()));
        }
        self.apply(Mutation::AddOperator {
            op: op.to_string(),
            attrs: Attrs::new(),
            inputs: vec![a, b],
        })?;
        Ok(format!("merge {a}, {b} under {op}"))
    }

    fn run(mut self) -> Result<(ComputationGraph, BuildTrace), BuildError> {
        self.init();
        let mut step = 1;
        loop {
            if !self.candidate_expansion(step) {
                break;
            }
            self.diversity(step);
            step += 1;
        }
        if self.graph.len() < 2 {
            return Err(BuildError::BuildExhausted { seed: self.cfg.seed });
        }
        Ok((self.graph, self.trace))
    }
}

/// Applies one diversity action to an existing valid graph. `action = None`
/// draws it from `cfg.action_weights`. On rollback the graph is unchanged and
/// the returned entry carries the reason.
pub fn apply_diversity_action(
    inv: &Inventory,
    graph: &mut ComputationGraph,
    rng: &mut ChaCha8Rng,
    cfg: &BuilderConfig,
    action: Option<ActionKind>,
) -> TraceEntry {
    let mut b = Builder::new(inv, cfg);
    b.graph = std::mem::take(graph);
    b.rng = rng.clone();
    for n in b.graph.operator_nodes() {
        if let Some(i) = n.op.as_deref().and_then(|op| inv.position(op)) {
            b.usage[i] += 1;
        }
    }
    match action {
        Some(a) => b.diversity_action(0, a),
        None => b.diversity(0),
    }
    *graph = b.graph;
    *rng = b.rng;
    b.trace.entries.pop().expect("one entry recorded")
}

/// Builds one graph. `(seed, config)` fully determines the result.
pub fn build_graph(
    inv: &Inventory,
    cfg: &BuilderConfig,
) -> Result<(ComputationGraph, BuildTrace), BuildError> {
    cfg.check()?;
    Builder::new(inv, cfg).run()
}

/// Builds graphs for `seeds` in parallel; results keep seed order.
pub fn build_many(
    inv: &Inventory,
    base: &BuilderConfig,
    seeds: &[u64],
) -> Vec<Result<(ComputationGraph, BuildTrace), BuildError>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = BuilderConfig {
                seed,
                ..base.clone()
            };
            build_graph(inv, &cfg)
        })
        .collect()
}

/// A single-operator graph for `op`, with inputs drawn from `pool`.
pub fn build_primitive(
    inv: &Inventory,
    op_name: &str,
    seed: u64,
    pool: &[TensorSpec],
) -> Result<ComputationGraph, BuildError> {
    let op = inv
        .get(op_name)
        .ok_or_else(|| BuildError::NoPrimitive(op_name.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&TensorSpec> = pool.iter().collect();
    order.shuffle(&mut rng);
    for first in order {
        for _ in 0..4 {
            let attrs = op.sample_attrs(first, &mut rng);
            let mut g = ComputationGraph::new();
            let a = g.add_input(first.clone());
            let mut inputs = vec![a];
            if op.arity() == 2 {
                let Some(want) = op.operand_spec(first, &attrs, pool, &mut rng) else {
                    break;
                };
                inputs.push(g.add_input(want));
            }
            if g.add_operator(inv, op_name, attrs, &inputs).is_ok() {
                return Ok(g);
            }
        }
    }
    Err(BuildError::NoPrimitive(op_name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;

    fn inv() -> &'static Inventory {
        Inventory::global()
    }

    #[test]
    fn config_checks() {
        assert!(BuilderConfig::default().check().is_ok());
        let bad = BuilderConfig {
            n_max: 1,
            ..Default::default()
        };
        assert!(matches!(bad.check(), Err(BuildError::InvalidConfig(_))));
        let bad = BuilderConfig {
            action_weights: ActionWeights {
                expand: 0.0,
                random_connection: 0.0,
                branch: 0.0,
                merge: 0.0,
            },
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }

    #[test]
    fn usage_cap_uses_ceiling() {
        let cfg = BuilderConfig {
            p_op: 0.2,
            ..Default::default()
        };
        assert_eq!(cfg.usage_cap(18), 4);
        assert_eq!(BuilderConfig::default().usage_cap(18), 8);
        let cfg = BuilderConfig {
            p_op: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.usage_cap(18), 9);
    }

    #[test]
    fn pick_operator_respects_cap() {
        let cfg = BuilderConfig {
            p_op: 0.2,
            ..Default::default()
        };
        let cap = cfg.usage_cap(inv().len());
        let mut usage = vec![cap; inv().len()];
        let cos = inv().position("cos").unwrap();
        usage[cos] = cap - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(pick_operator(inv(), &usage, &cfg, &mut rng).unwrap().name(), "cos");
        }
        usage[cos] = cap;
        assert_eq!(
            pick_operator(inv(), &usage, &cfg, &mut rng).unwrap_err(),
            BuildError::NoEligibleOperator
        );
    }

    #[test]
    fn pick_operator_reaches_every_operator() {
        let cfg = BuilderConfig::default();
        let usage = vec![0; inv().len()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = vec![0usize; inv().len()];
        for _ in 0..5000 {
            let op = pick_operator(inv(), &usage, &cfg, &mut rng).unwrap();
            hits[inv().position(op.name()).unwrap()] += 1;
        }
        assert!(hits.iter().all(|&h| h > 0), "{hits:?}");
    }

    #[test]
    fn expansion_selection() {
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[8]));
        let mut rng = StepRng::new(0, 1);
        assert_eq!(select_expansion_nodes(&g, &mut rng), vec![x]);

        // chain 0 -> 1 -> 2 with a second consumer on 0: only 1 and 2 qualify
        let a = g.add_operator(inv(), "relu", Attrs::new(), &[x]).unwrap();
        let b = g.add_operator(inv(), "cos", Attrs::new(), &[a]).unwrap();
        g.add_operator(inv(), "add", Attrs::new(), &[x, b]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let picked = select_expansion_nodes(&g, &mut rng);
            assert!((1..=2).contains(&picked.len()));
            assert!(picked.iter().all(|p| g.node(*p).is_some()));
            assert!(!picked.contains(&x));
        }
    }

    #[test]
    fn chain_of_three_selects_from_last_two() {
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[8]));
        let a = g.add_operator(inv(), "relu", Attrs::new(), &[x]).unwrap();
        let b = g.add_operator(inv(), "cos", Attrs::new(), &[a]).unwrap();
        // x has out-degree 1 too; add a second consumer so it drops out
        g.add_operator(inv(), "sin", Attrs::new(), &[x]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            seen.extend(select_expansion_nodes(&g, &mut rng));
        }
        assert!(seen.contains(&a) && seen.contains(&b));
        assert!(!seen.contains(&x));
    }

    #[test]
    fn build_is_deterministic_and_bounded() {
        let cfg = BuilderConfig::with_seed(42);
        let (g1, t1) = build_graph(inv(), &cfg).unwrap();
        let (g2, t2) = build_graph(inv(), &cfg).unwrap();
        assert_eq!(g1.to_canonical_json(), g2.to_canonical_json());
        assert_eq!(t1, t2);
        assert!(g1.validate(inv()).ok);
        assert!(g1.len() <= 12);
        assert!(g1.depth().unwrap() <= 6);
    }

    #[test]
    fn trace_replay_reconstructs_graph() {
        for seed in 0..50 {
            let (g, trace) = build_graph(inv(), &BuilderConfig::with_seed(seed)).unwrap();
            let replayed = trace.replay(inv()).unwrap();
            assert_eq!(replayed.to_canonical_json(), g.to_canonical_json(), "seed {seed}");
            assert!(trace.entries.iter().filter(|e| !e.accepted).all(|e| e.mutations.is_empty()));
        }
    }

    #[test]
    fn rolled_back_steps_leave_graph_unchanged() {
        // replay prefix by prefix: a rolled-back entry never changes the graph
        let (_, trace) = build_graph(inv(), &BuilderConfig::with_seed(7)).unwrap();
        let mut g = ComputationGraph::new();
        for entry in &trace.entries {
            let before = g.to_canonical_json();
            if entry.accepted {
                for m in &entry.mutations {
                    apply_mutation(inv(), &mut g, m).unwrap();
                }
            } else {
                assert_eq!(g.to_canonical_json(), before);
            }
        }
    }

    #[test]
    fn tight_cap_is_honoured() {
        let cfg = BuilderConfig {
            p_op: 0.2,
            n_max: 20,
            d_max: 10,
            ..Default::default()
        };
        for seed in 0..100 {
            let (g, _) = build_graph(inv(), &BuilderConfig { seed, ..cfg.clone() }).unwrap();
            let mut counts = BTreeMap::new();
            for n in g.operator_nodes() {
                *counts.entry(n.op.clone().unwrap()).or_insert(0usize) += 1;
            }
            assert!(counts.values().all(|&c| c <= 4), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn zero_usage_cap_exhausts() {
        let cfg = BuilderConfig {
            p_op: 0.0,
            ..Default::default()
        };
        assert_eq!(
            build_graph(inv(), &cfg).unwrap_err(),
            BuildError::BuildExhausted { seed: 0 }
        );
    }

    fn elementwise_only() -> BuilderConfig {
        BuilderConfig {
            category_weights: BTreeMap::from([(OperatorCategory::Elementwise, 1.0)]),
            ..Default::default()
        }
    }

    #[test]
    fn branch_adds_two_consumers() {
        let cfg = elementwise_only();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[36, 9]));
        let y = g.add_input(TensorSpec::f32(&[36, 9]));
        g.add_operator(inv(), "sub", Attrs::new(), &[x, y]).unwrap();
        let before = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let entry = apply_diversity_action(inv(), &mut g, &mut rng, &cfg, Some(ActionKind::Branch));
        assert!(entry.accepted, "{entry:?}");
        assert_eq!(g.len(), before + 2);
        assert!(g.validate(inv()).ok);
        assert_eq!(entry.mutations.len(), 2);
    }

    #[test]
    fn merge_joins_two_sinks() {
        let cfg = BuilderConfig::default();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[64, 64]));
        g.add_operator(inv(), "relu", Attrs::new(), &[x]).unwrap();
        g.add_operator(inv(), "cos", Attrs::new(), &[x]).unwrap();
        assert_eq!(g.outputs().len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let entry = apply_diversity_action(inv(), &mut g, &mut rng, &cfg, Some(ActionKind::Merge));
        assert!(entry.accepted, "{entry:?}");
        assert_eq!(g.outputs(), &[NodeId(3)]);
        assert!(["add", "sub", "mul"].contains(&g.node(NodeId(3)).unwrap().op.as_deref().unwrap()));
    }

    #[test]
    fn cyclic_connection_rolls_back() {
        // relu(x) -> cos -> sin, all (8,); the only alternative producers for
        // relu's slot are its own descendants
        let cfg = BuilderConfig::default();
        let mut g = ComputationGraph::new();
        let x = g.add_input(TensorSpec::f32(&[8]));
        let a = g.add_operator(inv(), "relu", Attrs::new(), &[x]).unwrap();
        let b = g.add_operator(inv(), "cos", Attrs::new(), &[a]).unwrap();
        g.add_operator(inv(), "sin", Attrs::new(), &[b]).unwrap();
        let before = g.to_canonical_json();
        let mut rolled_back = 0;
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut h = g.clone();
            let e = apply_diversity_action(inv(), &mut h, &mut rng, &cfg, Some(ActionKind::RandomConnection));
            if !e.accepted {
                rolled_back += 1;
                assert_eq!(h.to_canonical_json(), before);
            }
            assert!(h.validate(inv()).ok);
        }
        assert!(rolled_back > 0);
    }

    #[test]
    fn primitives_exist_for_every_operator() {
        let pool = default_shape_pool();
        for op in inv().operators() {
            let g = build_primitive(inv(), op.name(), 1, &pool).unwrap();
            assert_eq!(g.operator_count(), 1);
            assert!(g.validate(inv()).ok);
        }
    }
}
