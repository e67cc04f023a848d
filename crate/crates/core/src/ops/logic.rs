use std::cmp::Ordering;

use rand::{Rng, RngCore};

use super::{
    int_attr, AttrDef, AttrType, AttrValue, Attrs, LoopClass, Operator, OperatorCategory,
    ShapeError, TensorSpec, TensorValue,
};

/// Stable descending order: equal values keep their original relative order.
fn sorted_desc(row: &[f32]) -> Vec<f32> {
    let mut v = row.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    v
}

/// Sorts every row of the last axis in descending order.
#[derive(Debug)]
pub struct SortLastAxis;

impl Operator for SortLastAxis {
    fn name(&self) -> &'static str {
        "sort_last_axis"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::LogicIntensive
    }

    fn arity(&self) -> usize {
        1
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::RowWise
    }

    fn summary(&self) -> &'static str {
        "descending sort along the last axis"
    }

    fn infer(&self, inputs: &[TensorSpec], _attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        Ok(inputs[0].clone())
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let n = *inputs[0].spec.shape.last().expect("rank >= 1");
        let data = inputs[0].as_f32().chunks(n).flat_map(sorted_desc).collect();
        TensorValue::f32(out.clone(), data)
    }
}

/// The `k` largest values of every last-axis row, in descending order.
#[derive(Debug)]
pub struct TopkValues;

const TOPK_ATTRS: &[AttrDef] = &[AttrDef {
    name: "k",
    ty: AttrType::Int { min: 1, max: 1 << 20 },
}];

impl Operator for TopkValues {
    fn name(&self) -> &'static str {
        "topk_values"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::LogicIntensive
    }

    fn arity(&self) -> usize {
        1
    }

    fn attr_schema(&self) -> &'static [AttrDef] {
        TOPK_ATTRS
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::RowWise
    }

    fn summary(&self) -> &'static str {
        "top-k selection along the last axis"
    }

    fn infer(&self, inputs: &[TensorSpec], attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let k = int_attr(attrs, "k") as usize;
        let input = &inputs[0];
        let last = *input.shape.last().expect("rank >= 1");
        if k > last {
            return Err(ShapeError::AttrOutOfRange {
                attr: "k".into(),
                reason: format!("k = {k} exceeds last-axis extent {last}"),
            });
        }
        let mut shape = input.shape.clone();
        *shape.last_mut().expect("rank >= 1") = k;
        TensorSpec::new(input.dtype, shape)
    }

    fn evaluate(&self, inputs: &[&TensorValue], attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let k = int_attr(attrs, "k") as usize;
        let n = *inputs[0].spec.shape.last().expect("rank >= 1");
        let data = inputs[0]
            .as_f32()
            .chunks(n)
            .flat_map(|row| sorted_desc(row).into_iter().take(k))
            .collect();
        TensorValue::f32(out.clone(), data)
    }

    fn sample_attrs(&self, input: &TensorSpec, rng: &mut dyn RngCore) -> Attrs {
        let last = *input.shape.last().expect("rank >= 1");
        let k = rng.gen_range(1..=last.min(8));
        Attrs::from([("k".to_string(), AttrValue::Int(k as i64))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sort_and_topk() {
        let spec = TensorSpec::f32(&[2, 4]);
        let v = TensorValue::f32(spec.clone(), vec![0.5, -1.0, 2.0, 0.5, 3.0, 1.0, 2.0, 0.0]);
        let sorted = SortLastAxis.evaluate(&[&v], &Attrs::new(), &spec);
        assert_eq!(sorted.as_f32(), &[2.0, 0.5, 0.5, -1.0, 3.0, 2.0, 1.0, 0.0]);

        let attrs = Attrs::from([("k".to_string(), AttrValue::Int(2))]);
        let out = TopkValues.infer(&[spec], &attrs).unwrap();
        assert_eq!(out.shape, vec![2, 2]);
        assert_eq!(TopkValues.evaluate(&[&v], &attrs, &out).as_f32(), &[2.0, 0.5, 3.0, 2.0]);
    }
}
