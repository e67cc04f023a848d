use rand::RngCore;

use super::{Attrs, LoopClass, Operator, OperatorCategory, ShapeError, TensorSpec, TensorValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sin,
    Cos,
    /// `sqrt(|x|)`, total over the reals.
    SqrtAbs,
}

#[derive(Debug)]
pub struct UnaryElementwise {
    kind: UnaryKind,
}

impl UnaryElementwise {
    pub fn new(kind: UnaryKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> UnaryKind {
        self.kind
    }

    pub fn apply(kind: UnaryKind, x: f32) -> f32 {
        match kind {
            UnaryKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            UnaryKind::Sin => (x as f64).sin() as f32,
            UnaryKind::Cos => (x as f64).cos() as f32,
            UnaryKind::SqrtAbs => (x.abs() as f64).sqrt() as f32,
        }
    }
}

impl Operator for UnaryElementwise {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Relu => "relu",
            UnaryKind::Sin => "sin",
            UnaryKind::Cos => "cos",
            UnaryKind::SqrtAbs => "sqrt_abs",
        }
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::Elementwise
    }

    fn arity(&self) -> usize {
        1
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Pointwise
    }

    fn summary(&self) -> &'static str {
        match self.kind {
            UnaryKind::Relu => "rectified linear unit",
            UnaryKind::Sin => "sine",
            UnaryKind::Cos => "cosine",
            UnaryKind::SqrtAbs => "square root of absolute value",
        }
    }

    fn infer(&self, inputs: &[TensorSpec], _attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        Ok(inputs[0].clone())
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let data = inputs[0]
            .as_f32()
            .iter()
            .map(|&x| Self::apply(self.kind, x))
            .collect();
        TensorValue::f32(out.clone(), data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl BinaryKind {
    pub fn c_operator(self) -> &'static str {
        match self {
            BinaryKind::Add => "+",
            BinaryKind::Sub => "-",
            BinaryKind::Mul => "*",
        }
    }
}

/// Binary elementwise operator. No broadcasting: both operands share one spec.
#[derive(Debug)]
pub struct BinaryElementwise {
    kind: BinaryKind,
}

impl BinaryElementwise {
    pub fn new(kind: BinaryKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> BinaryKind {
        self.kind
    }
}

impl Operator for BinaryElementwise {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::Elementwise
    }

    fn arity(&self) -> usize {
        2
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Pointwise
    }

    fn summary(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "addition",
            BinaryKind::Sub => "subtraction",
            BinaryKind::Mul => "multiplication",
        }
    }

    fn infer(&self, inputs: &[TensorSpec], _attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        if inputs[0] != inputs[1] {
            return Err(ShapeError::ShapeMismatch(format!(
                "`{}` needs identical operands, got {} and {}",
                self.name(),
                inputs[0],
                inputs[1]
            )));
        }
        Ok(inputs[0].clone())
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let (a, b) = (inputs[0].as_f32(), inputs[1].as_f32());
        let data = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| match self.kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
            })
            .collect();
        TensorValue::f32(out.clone(), data)
    }

    fn operand_spec(
        &self,
        first: &TensorSpec,
        _attrs: &Attrs,
        _pool: &[TensorSpec],
        _rng: &mut dyn RngCore,
    ) -> Option<TensorSpec> {
        Some(first.clone())
    }
}
