//! Operator inventory: tensor specs, the five computation categories, attribute
//! schemas and the `Operator` trait every variant implements.
//!
//! Operators are registered by name in an [`Inventory`]; everything else in the
//! crate (graph validation, the interpreter, the builder, the emitters) looks
//! operators up through it rather than matching on names.

mod compute;
mod elementwise;
mod layout;
mod logic;
mod reduction;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compute::{Conv2d, MatMul, CONV_KERNEL, CONV_PAD};
pub use elementwise::{BinaryElementwise, BinaryKind, UnaryElementwise, UnaryKind};
pub use layout::{transpose_source_strides, Reshape, Transpose};
pub use logic::{SortLastAxis, TopkValues};
pub use reduction::{split_axis, Reduce, ReduceKind, Softmax};

/// Default cap on the number of elements in a single tensor (2^26).
pub const DEFAULT_ELEMENT_CAP: u64 = 1 << 26;

pub const MAX_RANK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

impl DType {
    pub fn c_type(self) -> &'static str {
        match self {
            DType::F32 => "float",
            DType::I32 => "int32_t",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
        })
    }
}

/// Data type plus row-major shape of a value flowing along a graph edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TensorSpec {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    /// Builds a spec, rejecting ranks outside 1..=4 and zero extents.
    pub fn new(dtype: DType, shape: Vec<usize>) -> Result<Self, ShapeError> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(ShapeError::RankUnsupported {
                rank: shape.len(),
                reason: format!("rank must be between 1 and {MAX_RANK}"),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(ShapeError::ShapeMismatch(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        Ok(Self { dtype, shape })
    }

    pub fn f32(shape: &[usize]) -> Self {
        Self::new(DType::F32, shape.to_vec()).expect("valid f32 shape")
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn len(&self) -> usize {
        self.numel() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.numel() == 0
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }
}

impl fmt::Display for TensorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{}({})", self.dtype, dims.join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorCategory {
    Elementwise,
    Reduction,
    LayoutTransform,
    LogicIntensive,
    ComputeIntensive,
}

impl OperatorCategory {
    pub const ALL: [OperatorCategory; 5] = [
        OperatorCategory::Elementwise,
        OperatorCategory::Reduction,
        OperatorCategory::LayoutTransform,
        OperatorCategory::LogicIntensive,
        OperatorCategory::ComputeIntensive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorCategory::Elementwise => "Elementwise",
            OperatorCategory::Reduction => "Reduction",
            OperatorCategory::LayoutTransform => "LayoutTransform",
            OperatorCategory::LogicIntensive => "LogicIntensive",
            OperatorCategory::ComputeIntensive => "ComputeIntensive",
        }
    }
}

impl fmt::Display for OperatorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape of the loop nest an emitter produces for an operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopClass {
    /// One independent loop per output dimension.
    Pointwise,
    /// Independent outer/inner loops around a sequential reduced axis.
    AxisReduction,
    /// Independent row loop around sequential per-row work.
    RowWise,
    /// Independent output loops around a sequential contraction.
    Contraction,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Ints(Vec<i64>),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttrType {
    /// Integer in the closed range `[min, max]`.
    Int { min: i64, max: i64 },
    Bool,
    /// Non-empty list of positive extents, at most rank-4 long.
    Extents,
    /// Permutation of `0..len`, at most rank-4 long.
    Permutation,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AttrDef {
    pub name: &'static str,
    #[serde(flatten)]
    pub ty: AttrType,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("attribute `{attr}` out of range: {reason}")]
    AttrOutOfRange { attr: String, reason: String },
    #[error("unsupported rank {rank}: {reason}")]
    RankUnsupported { rank: usize, reason: String },
    #[error("dtype mismatch: {0}")]
    DTypeMismatch(String),
    #[error("arity mismatch: expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("tensor of {numel} elements exceeds cap {cap}")]
    TooLarge { numel: u64, cap: u64 },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AttrError {
    #[error("missing attribute `{0}`")]
    Missing(String),
    #[error("unexpected attribute `{0}`")]
    Unexpected(String),
    #[error("attribute `{attr}` has wrong type, expected {expected}")]
    WrongType { attr: String, expected: &'static str },
    #[error("attribute `{attr}` out of range: {reason}")]
    OutOfRange { attr: String, reason: String },
}

impl From<AttrError> for ShapeError {
    fn from(e: AttrError) -> Self {
        match e {
            AttrError::OutOfRange { attr, reason } => ShapeError::AttrOutOfRange { attr, reason },
            other => ShapeError::AttrOutOfRange {
                attr: match &other {
                    AttrError::Missing(a) | AttrError::Unexpected(a) => a.clone(),
                    AttrError::WrongType { attr, .. } => attr.clone(),
                    AttrError::OutOfRange { .. } => unreachable!(),
                },
                reason: other.to_string(),
            },
        }
    }
}

/// Flat element buffer of a tensor value.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorValue {
    pub spec: TensorSpec,
    pub data: TensorData,
}

impl TensorValue {
    pub fn f32(spec: TensorSpec, data: Vec<f32>) -> Self {
        assert_eq!(spec.len(), data.len(), "buffer length must match spec");
        Self {
            spec,
            data: TensorData::F32(data),
        }
    }

    pub fn i32(spec: TensorSpec, data: Vec<i32>) -> Self {
        assert_eq!(spec.len(), data.len(), "buffer length must match spec");
        Self {
            spec,
            data: TensorData::I32(data),
        }
    }

    pub fn zeros(spec: TensorSpec) -> Self {
        match spec.dtype {
            DType::F32 => Self::f32(spec.clone(), vec![0.0; spec.len()]),
            DType::I32 => Self::i32(spec.clone(), vec![0; spec.len()]),
        }
    }

    /// The f32 buffer. Operators only ever consume f32 tensors.
    pub fn as_f32(&self) -> &[f32] {
        match &self.data {
            TensorData::F32(v) => v,
            TensorData::I32(_) => panic!("expected f32 tensor, found i32"),
        }
    }
}

/// One operator variant of the inventory.
///
/// `infer` is only called after arity, dtype and static attribute checks have
/// passed (see [`Inventory::infer_output_spec`]); it must still return a typed
/// rejection rather than panic for any input shapes.
pub trait Operator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn category(&self) -> OperatorCategory;
    fn arity(&self) -> usize;
    fn attr_schema(&self) -> &'static [AttrDef] {
        &[]
    }
    fn loop_class(&self) -> LoopClass;
    /// Short noun phrase used in generated descriptions, e.g. "cosine".
    fn summary(&self) -> &'static str;

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError>;

    /// Reference semantics. Reductions and contractions accumulate in f64.
    fn evaluate(&self, inputs: &[&TensorValue], attrs: &Attrs, out: &TensorSpec) -> TensorValue;

    /// Draws attributes plausible for `input` as first operand.
    fn sample_attrs(&self, _input: &TensorSpec, _rng: &mut dyn RngCore) -> Attrs {
        Attrs::new()
    }

    /// Spec the second operand must have, given the first one. Unary operators
    /// return `None`.
    fn operand_spec(
        &self,
        _first: &TensorSpec,
        _attrs: &Attrs,
        _pool: &[TensorSpec],
        _rng: &mut dyn RngCore,
    ) -> Option<TensorSpec> {
        None
    }
}

/// Checks presence, type and static range of every attribute against `schema`.
pub fn validate_attrs(schema: &[AttrDef], attrs: &Attrs) -> Result<(), AttrError> {
    for key in attrs.keys() {
        if !schema.iter().any(|d| d.name == key) {
            return Err(AttrError::Unexpected(key.clone()));
        }
    }
    for def in schema {
        let value = attrs
            .get(def.name)
            .ok_or_else(|| AttrError::Missing(def.name.to_string()))?;
        let out_of_range = |reason: String| AttrError::OutOfRange {
            attr: def.name.to_string(),
            reason,
        };
        match def.ty {
            AttrType::Int { min, max } => {
                let v = value.as_int().ok_or(AttrError::WrongType {
                    attr: def.name.to_string(),
                    expected: "integer",
                })?;
                if v < min || v > max {
                    return Err(out_of_range(format!("{v} not in [{min}, {max}]")));
                }
            }
            AttrType::Bool => {
                value.as_bool().ok_or(AttrError::WrongType {
                    attr: def.name.to_string(),
                    expected: "boolean",
                })?;
            }
            AttrType::Extents => {
                let v = value.as_ints().ok_or(AttrError::WrongType {
                    attr: def.name.to_string(),
                    expected: "integer list",
                })?;
                if v.is_empty() || v.len() > MAX_RANK {
                    return Err(out_of_range(format!("length {} not in [1, {MAX_RANK}]", v.len())));
                }
                if v.iter().any(|&d| d < 1) {
                    return Err(out_of_range("extents must be >= 1".into()));
                }
            }
            AttrType::Permutation => {
                let v = value.as_ints().ok_or(AttrError::WrongType {
                    attr: def.name.to_string(),
                    expected: "integer list",
                })?;
                if v.is_empty() || v.len() > MAX_RANK {
                    return Err(out_of_range(format!("length {} not in [1, {MAX_RANK}]", v.len())));
                }
                let mut seen = vec![false; v.len()];
                for &p in v {
                    if p < 0 || p as usize >= v.len() || seen[p as usize] {
                        return Err(out_of_range(format!("{v:?} is not a permutation")));
                    }
                    seen[p as usize] = true;
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn int_attr(attrs: &Attrs, name: &str) -> i64 {
    attrs
        .get(name)
        .and_then(AttrValue::as_int)
        .unwrap_or_else(|| panic!("attribute `{name}` validated as integer"))
}

pub(crate) fn bool_attr(attrs: &Attrs, name: &str) -> bool {
    attrs
        .get(name)
        .and_then(AttrValue::as_bool)
        .unwrap_or_else(|| panic!("attribute `{name}` validated as boolean"))
}

pub(crate) fn ints_attr<'a>(attrs: &'a Attrs, name: &str) -> &'a [i64] {
    attrs
        .get(name)
        .and_then(AttrValue::as_ints)
        .unwrap_or_else(|| panic!("attribute `{name}` validated as integer list"))
}

/// Catalog entry as dumped by `stats --ops`.
#[derive(Debug, Serialize)]
pub struct OperatorInfo {
    pub name: &'static str,
    pub category: OperatorCategory,
    pub arity: usize,
    pub attrs: &'static [AttrDef],
}

/// Name-indexed registry of operators, in stable registration order.
#[derive(Debug)]
pub struct Inventory {
    ops: Vec<Box<dyn Operator>>,
    element_cap: u64,
}

static V1: LazyLock<Inventory> = LazyLock::new(Inventory::v1);

impl Inventory {
    pub fn empty() -> Self {
        Self {
            ops: Vec::new(),
            element_cap: DEFAULT_ELEMENT_CAP,
        }
    }

    /// Shared instance of the 18-operator v1 inventory.
    pub fn global() -> &'static Inventory {
        &V1
    }

    pub fn v1() -> Self {
        let mut inv = Self::empty();
        inv.register(BinaryElementwise::new(BinaryKind::Add));
        inv.register(BinaryElementwise::new(BinaryKind::Sub));
        inv.register(BinaryElementwise::new(BinaryKind::Mul));
        inv.register(UnaryElementwise::new(UnaryKind::Relu));
        inv.register(UnaryElementwise::new(UnaryKind::Sin));
        inv.register(UnaryElementwise::new(UnaryKind::Cos));
        inv.register(UnaryElementwise::new(UnaryKind::SqrtAbs));

        inv.register(Reduce::new(ReduceKind::Sum));
        inv.register(Reduce::new(ReduceKind::Mean));
        inv.register(Reduce::new(ReduceKind::Max));
        inv.register(Softmax);
        inv.register(Reduce::new(ReduceKind::Argmax));

        inv.register(Reshape);
        inv.register(Transpose);

        inv.register(SortLastAxis);
        inv.register(TopkValues);

        inv.register(MatMul);
        inv.register(Conv2d);
        inv
    }

    pub fn with_element_cap(mut self, cap: u64) -> Self {
        self.element_cap = cap;
        self
    }

    pub fn element_cap(&self) -> u64 {
        self.element_cap
    }

    /// Adds an operator. Panics on a duplicate name.
    pub fn register(&mut self, op: impl Operator + 'static) {
        assert!(
            self.get(op.name()).is_none(),
            "operator `{}` registered twice",
            op.name()
        );
        self.ops.push(Box::new(op));
    }

    pub fn get(&self, name: &str) -> Option<&dyn Operator> {
        self.ops.iter().find(|o| o.name() == name).map(|b| b.as_ref())
    }

    pub fn operators(&self) -> impl Iterator<Item = &dyn Operator> {
        self.ops.iter().map(|b| b.as_ref())
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| o.name() == name)
    }

    pub fn catalog(&self) -> Vec<OperatorInfo> {
        self.operators()
            .map(|o| OperatorInfo {
                name: o.name(),
                category: o.category(),
                arity: o.arity(),
                attrs: o.attr_schema(),
            })
            .collect()
    }

    /// Full shape/type inference: arity, dtype, attribute schema, the
    /// operator's own rule, and the element cap.
    pub fn infer_output_spec(
        &self,
        op_name: &str,
        inputs: &[TensorSpec],
        attrs: &Attrs,
    ) -> Result<TensorSpec, ShapeError> {
        let op = self
            .get(op_name)
            .ok_or_else(|| ShapeError::UnknownOperator(op_name.to_string()))?;
        infer_with(op, inputs, attrs, self.element_cap)
    }
}

pub fn infer_with(
    op: &dyn Operator,
    inputs: &[TensorSpec],
    attrs: &Attrs,
    element_cap: u64,
) -> Result<TensorSpec, ShapeError> {
    if inputs.len() != op.arity() {
        return Err(ShapeError::Arity {
            expected: op.arity(),
            got: inputs.len(),
        });
    }
    for spec in inputs {
        if spec.dtype != DType::F32 {
            return Err(ShapeError::DTypeMismatch(format!(
                "`{}` consumes f32 tensors, got {spec}",
                op.name()
            )));
        }
        if spec.numel() > element_cap {
            return Err(ShapeError::TooLarge {
                numel: spec.numel(),
                cap: element_cap,
            });
        }
    }
    validate_attrs(op.attr_schema(), attrs)?;
    let out = op.infer(inputs, attrs)?;
    let out = TensorSpec::new(out.dtype, out.shape)?;
    if out.numel() > element_cap {
        return Err(ShapeError::TooLarge {
            numel: out.numel(),
            cap: element_cap,
        });
    }
    Ok(out)
}

pub(crate) fn check_axis(attrs: &Attrs, rank: usize) -> Result<usize, ShapeError> {
    let axis = int_attr(attrs, "axis");
    if axis as usize >= rank {
        return Err(ShapeError::AttrOutOfRange {
            attr: "axis".into(),
            reason: format!("axis {axis} >= rank {rank}"),
        });
    }
    Ok(axis as usize)
}

/// The default pool fresh builder inputs are drawn from.
pub fn default_shape_pool() -> Vec<TensorSpec> {
    vec![
        TensorSpec::f32(&[36, 9]),
        TensorSpec::f32(&[64, 64]),
        TensorSpec::f32(&[4, 3]),
        TensorSpec::f32(&[3, 5]),
        TensorSpec::f32(&[1, 16, 32, 32]),
    ]
}
