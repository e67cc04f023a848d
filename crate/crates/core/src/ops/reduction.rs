use rand::{Rng, RngCore};

use super::{
    bool_attr, check_axis, AttrDef, AttrType, AttrValue, Attrs, DType, LoopClass, Operator,
    OperatorCategory, ShapeError, TensorSpec, TensorValue,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    Argmax,
}

/// Splits `shape` around `axis` into (outer, reduced, inner) element counts.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const AXIS_ATTRS: &[AttrDef] = &[
    AttrDef {
        name: "axis",
        ty: AttrType::Int { min: 0, max: 3 },
    },
    AttrDef {
        name: "keepdims",
        ty: AttrType::Bool,
    },
];

/// Axis reduction: sum, mean, max or argmax (lowest index wins ties).
#[derive(Debug)]
pub struct Reduce {
    kind: ReduceKind,
}

impl Reduce {
    pub fn new(kind: ReduceKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> ReduceKind {
        self.kind
    }
}

impl Operator for Reduce {
    fn name(&self) -> &'static str {
        match self.kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
            ReduceKind::Argmax => "argmax",
        }
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::Reduction
    }

    fn arity(&self) -> usize {
        1
    }

    fn attr_schema(&self) -> &'static [AttrDef] {
        AXIS_ATTRS
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::AxisReduction
    }

    fn summary(&self) -> &'static str {
        match self.kind {
            ReduceKind::Sum => "sum reduction",
            ReduceKind::Mean => "mean reduction",
            ReduceKind::Max => "max reduction",
            ReduceKind::Argmax => "argmax reduction",
        }
    }

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let input = &inputs[0];
        let axis = check_axis(attrs, input.rank())?;
        let keepdims = bool_attr(attrs, "keepdims");
        let mut shape = input.shape.clone();
        if keepdims {
            shape[axis] = 1;
        } else {
            if input.rank() == 1 {
                return Err(ShapeError::RankUnsupported {
                    rank: 1,
                    reason: "reducing a rank-1 tensor without keepdims yields rank 0".into(),
                });
            }
            shape.remove(axis);
        }
        let dtype = if self.kind == ReduceKind::Argmax {
            DType::I32
        } else {
            DType::F32
        };
        TensorSpec::new(dtype, shape)
    }

    fn evaluate(&self, inputs: &[&TensorValue], attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let input = inputs[0];
        let x = input.as_f32();
        let axis = super::int_attr(attrs, "axis") as usize;
        let (outer, red, inner) = split_axis(&input.spec.shape, axis);
        let mut floats = Vec::with_capacity(outer * inner);
        let mut ints = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let at = |r: usize| x[(o * red + r) * inner + j];
                match self.kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut acc = 0.0f64;
                        for r in 0..red {
                            acc += at(r) as f64;
                        }
                        if self.kind == ReduceKind::Mean {
                            acc /= red as f64;
                        }
                        floats.push(acc as f32);
                    }
                    ReduceKind::Max | ReduceKind::Argmax => {
                        let mut best = at(0);
                        let mut best_idx = 0;
                        for r in 1..red {
                            if at(r) > best {
                                best = at(r);
                                best_idx = r;
                            }
                        }
                        floats.push(best);
                        ints.push(best_idx as i32);
                    }
                }
            }
        }
        match self.kind {
            ReduceKind::Argmax => TensorValue::i32(out.clone(), ints),
            _ => TensorValue::f32(out.clone(), floats),
        }
    }

    fn sample_attrs(&self, input: &TensorSpec, rng: &mut dyn RngCore) -> Attrs {
        let axis = rng.gen_range(0..input.rank());
        let keepdims = input.rank() == 1 || rng.gen_bool(0.3);
        Attrs::from([
            ("axis".to_string(), AttrValue::Int(axis as i64)),
            ("keepdims".to_string(), AttrValue::Bool(keepdims)),
        ])
    }
}

/// Numerically stable softmax along one axis; preserves shape.
#[derive(Debug)]
pub struct Softmax;

const SOFTMAX_ATTRS: &[AttrDef] = &[AttrDef {
    name: "axis",
    ty: AttrType::Int { min: 0, max: 3 },
}];

impl Operator for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::Reduction
    }

    fn arity(&self) -> usize {
        1
    }

    fn attr_schema(&self) -> &'static [AttrDef] {
        SOFTMAX_ATTRS
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::AxisReduction
    }

    fn summary(&self) -> &'static str {
        "softmax normalization"
    }

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        check_axis(attrs, inputs[0].rank())?;
        Ok(inputs[0].clone())
    }

    fn evaluate(&self, inputs: &[&TensorValue], attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let input = inputs[0];
        let x = input.as_f32();
        let axis = super::int_attr(attrs, "axis") as usize;
        let (outer, red, inner) = split_axis(&input.spec.shape, axis);
        let mut data = vec![0.0f32; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |r: usize| (o * red + r) * inner + j;
                let mut max = x[idx(0)] as f64;
                for r in 1..red {
                    if (x[idx(r)] as f64) > max {
                        max = x[idx(r)] as f64;
                    }
                }
                let mut sum = 0.0f64;
                for r in 0..red {
                    sum += (x[idx(r)] as f64 - max).exp();
                }
                for r in 0..red {
                    data[idx(r)] = ((x[idx(r)] as f64 - max).exp() / sum) as f32;
                }
            }
        }
        TensorValue::f32(out.clone(), data)
    }

    fn sample_attrs(&self, input: &TensorSpec, rng: &mut dyn RngCore) -> Attrs {
        let axis = rng.gen_range(0..input.rank());
        Attrs::from([("axis".to_string(), AttrValue::Int(axis as i64))])
    }
}
