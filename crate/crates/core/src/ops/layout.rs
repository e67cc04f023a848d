use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::{
    ints_attr, AttrDef, AttrType, AttrValue, Attrs, LoopClass, Operator, OperatorCategory,
    ShapeError, TensorSpec, TensorValue,
};

#[derive(Debug)]
pub struct Reshape;

const RESHAPE_ATTRS: &[AttrDef] = &[AttrDef {
    name: "target",
    ty: AttrType::Extents,
}];

impl Operator for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::LayoutTransform
    }

    fn arity(&self) -> usize {
        1
    }

    fn attr_schema(&self) -> &'static [AttrDef] {
        RESHAPE_ATTRS
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Pointwise
    }

    fn summary(&self) -> &'static str {
        "reshape"
    }

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let target: Vec<usize> = ints_attr(attrs, "target").iter().map(|&d| d as usize).collect();
        let numel: u64 = target.iter().map(|&d| d as u64).product();
        if numel != inputs[0].numel() {
            return Err(ShapeError::ShapeMismatch(format!(
                "cannot reshape {} ({} elements) to {:?} ({} elements)",
                inputs[0],
                inputs[0].numel(),
                target,
                numel
            )));
        }
        TensorSpec::new(inputs[0].dtype, target)
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        TensorValue::f32(out.clone(), inputs[0].as_f32().to_vec())
    }

    fn sample_attrs(&self, input: &TensorSpec, rng: &mut dyn RngCore) -> Attrs {
        let n = input.len();
        let divisors: Vec<usize> = (2..n).filter(|d| n % d == 0).collect();
        let target: Vec<usize> = match rng.gen_range(0..3) {
            0 if input.rank() > 1 => vec![n],
            1 if !divisors.is_empty() => {
                let a = *divisors.choose(rng).expect("non-empty");
                vec![a, n / a]
            }
            _ if input.rank() < 4 => {
                let mut s = vec![1];
                s.extend(&input.shape);
                s
            }
            _ => vec![n],
        };
        Attrs::from([(
            "target".to_string(),
            AttrValue::Ints(target.into_iter().map(|d| d as i64).collect()),
        )])
    }
}

#[derive(Debug)]
pub struct Transpose;

const TRANSPOSE_ATTRS: &[AttrDef] = &[AttrDef {
    name: "perm",
    ty: AttrType::Permutation,
}];

/// Input strides visited by each output dimension.
pub fn transpose_source_strides(input: &TensorSpec, perm: &[usize]) -> Vec<usize> {
    let strides = input.strides();
    perm.iter().map(|&p| strides[p]).collect()
}

impl Operator for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::LayoutTransform
    }

    fn arity(&self) -> usize {
        1
    }

    fn attr_schema(&self) -> &'static [AttrDef] {
        TRANSPOSE_ATTRS
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Pointwise
    }

    fn summary(&self) -> &'static str {
        "axis permutation"
    }

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let perm = ints_attr(attrs, "perm");
        if perm.len() != inputs[0].rank() {
            return Err(ShapeError::AttrOutOfRange {
                attr: "perm".into(),
                reason: format!("permutation of length {} on rank {}", perm.len(), inputs[0].rank()),
            });
        }
        let shape = perm.iter().map(|&p| inputs[0].shape[p as usize]).collect();
        TensorSpec::new(inputs[0].dtype, shape)
    }

    fn evaluate(&self, inputs: &[&TensorValue], attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let perm: Vec<usize> = ints_attr(attrs, "perm").iter().map(|&p| p as usize).collect();
        let src = transpose_source_strides(&inputs[0].spec, &perm);
        let x = inputs[0].as_f32();
        let out_strides = out.strides();
        let data = (0..out.len())
            .map(|flat| {
                let offset: usize = out_strides
                    .iter()
                    .zip(&out.shape)
                    .zip(&src)
                    .map(|((&os, &d), &ss)| (flat / os % d) * ss)
                    .sum();
                x[offset]
            })
            .collect();
        TensorValue::f32(out.clone(), data)
    }

    fn sample_attrs(&self, input: &TensorSpec, rng: &mut dyn RngCore) -> Attrs {
        let mut perm: Vec<i64> = (0..input.rank() as i64).collect();
        if perm.len() > 1 {
            while perm.iter().enumerate().all(|(i, &p)| i as i64 == p) {
                perm.shuffle(rng);
            }
        }
        Attrs::from([("perm".to_string(), AttrValue::Ints(perm))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_2d() {
        let spec = TensorSpec::f32(&[2, 3]);
        let v = TensorValue::f32(spec.clone(), vec![1., 2., 3., 4., 5., 6.]);
        let attrs = Attrs::from([("perm".to_string(), AttrValue::Ints(vec![1, 0]))]);
        let out = Transpose.infer(&[spec], &attrs).unwrap();
        assert_eq!(out.shape, vec![3, 2]);
        assert_eq!(Transpose.evaluate(&[&v], &attrs, &out).as_f32(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn transpose_rank_mismatch() {
        let attrs = Attrs::from([("perm".to_string(), AttrValue::Ints(vec![1, 0]))]);
        assert!(Transpose.infer(&[TensorSpec::f32(&[2, 3, 4])], &attrs).is_err());
    }

    #[test]
    fn reshape_rejects_count_change() {
        let attrs = Attrs::from([("target".to_string(), AttrValue::Ints(vec![10]))]);
        assert!(matches!(
            Reshape.infer(&[TensorSpec::f32(&[3, 3])], &attrs),
            Err(ShapeError::ShapeMismatch(_))
        ));
    }
}
