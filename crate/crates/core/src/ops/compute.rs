use rand::seq::SliceRandom;
use rand::RngCore;

use super::{Attrs, LoopClass, Operator, OperatorCategory, ShapeError, TensorSpec, TensorValue};

/// Rank-2 matrix product `(M, K) x (K, N) -> (M, N)`.
#[derive(Debug)]
pub struct MatMul;

impl Operator for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::ComputeIntensive
    }

    fn arity(&self) -> usize {
        2
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Contraction
    }

    fn summary(&self) -> &'static str {
        "matrix multiplication"
    }

    fn infer(&self, inputs: &[TensorSpec], _attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let (a, b) = (&inputs[0], &inputs[1]);
        for s in [a, b] {
            if s.rank() != 2 {
                return Err(ShapeError::RankUnsupported {
                    rank: s.rank(),
                    reason: "matmul operands must be rank 2".into(),
                });
            }
        }
        if a.shape[1] != b.shape[0] {
            return Err(ShapeError::ShapeMismatch(format!(
                "matmul inner dimensions differ: {} vs {}",
                a.shape[1], b.shape[0]
            )));
        }
        TensorSpec::new(a.dtype, vec![a.shape[0], b.shape[1]])
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let (a, b) = (inputs[0].as_f32(), inputs[1].as_f32());
        let k_dim = inputs[0].spec.shape[1];
        let (m, n) = (out.shape[0], out.shape[1]);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for k in 0..k_dim {
                    acc += a[i * k_dim + k] as f64 * b[k * n + j] as f64;
                }
                data.push(acc as f32);
            }
        }
        TensorValue::f32(out.clone(), data)
    }

    fn operand_spec(
        &self,
        first: &TensorSpec,
        _attrs: &Attrs,
        pool: &[TensorSpec],
        rng: &mut dyn RngCore,
    ) -> Option<TensorSpec> {
        if first.rank() != 2 {
            return None;
        }
        let k = first.shape[1];
        let fitting: Vec<&TensorSpec> = pool
            .iter()
            .filter(|s| s.rank() == 2 && s.shape[0] == k)
            .collect();
        if let Some(s) = fitting.choose(rng) {
            return Some((*s).clone());
        }
        let mut extents: Vec<usize> = pool
            .iter()
            .filter(|s| s.rank() == 2)
            .flat_map(|s| s.shape.iter().copied())
            .collect();
        extents.sort_unstable();
        extents.dedup();
        let n = extents.choose(rng).copied().unwrap_or(k);
        Some(TensorSpec::f32(&[k, n]))
    }
}

/// NCHW convolution with a `(O, C, 3, 3)` weight, stride 1, padding 1.
#[derive(Debug)]
pub struct Conv2d;

pub const CONV_KERNEL: usize = 3;
pub const CONV_PAD: usize = 1;

impl Operator for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn category(&self) -> OperatorCategory {
        OperatorCategory::ComputeIntensive
    }

    fn arity(&self) -> usize {
        2
    }

    fn loop_class(&self) -> LoopClass {
        LoopClass::Contraction
    }

    fn summary(&self) -> &'static str {
        "2-D convolution (3x3, stride 1, padding 1)"
    }

    fn infer(&self, inputs: &[TensorSpec], _attrs: &Attrs) -> Result<TensorSpec, ShapeError> {
        let (x, w) = (&inputs[0], &inputs[1]);
        for s in [x, w] {
            if s.rank() != 4 {
                return Err(ShapeError::RankUnsupported {
                    rank: s.rank(),
                    reason: "conv2d operands must be rank 4 (NCHW / OCHW)".into(),
                });
            }
        }
        if w.shape[2] != CONV_KERNEL || w.shape[3] != CONV_KERNEL {
            return Err(ShapeError::ShapeMismatch(format!(
                "conv2d weight must be 3x3, got {w}"
            )));
        }
        if w.shape[1] != x.shape[1] {
            return Err(ShapeError::ShapeMismatch(format!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                x.shape[1], w.shape[1]
            )));
        }
        TensorSpec::new(x.dtype, vec![x.shape[0], w.shape[0], x.shape[2], x.shape[3]])
    }

    fn evaluate(&self, inputs: &[&TensorValue], _attrs: &Attrs, out: &TensorSpec) -> TensorValue {
        let (x, w) = (inputs[0].as_f32(), inputs[1].as_f32());
        let (batch, chans, h, wd) = {
            let s = &inputs[0].spec.shape;
            (s[0], s[1], s[2], s[3])
        };
        let outc = out.shape[1];
        let mut data = Vec::with_capacity(out.len());
        for n in 0..batch {
            for o in 0..outc {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0f64;
                        for c in 0..chans {
                            for ky in 0..CONV_KERNEL {
                                let iy = y as isize + ky as isize - CONV_PAD as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..CONV_KERNEL {
                                    let ix = xx as isize + kx as isize - CONV_PAD as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x[((n * chans + c) * h + iy as usize) * wd + ix as usize];
                                    let wv = w[((o * chans + c) * CONV_KERNEL + ky) * CONV_KERNEL + kx];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        data.push(acc as f32);
                    }
                }
            }
        }
        TensorValue::f32(out.clone(), data)
    }

    fn operand_spec(
        &self,
        first: &TensorSpec,
        _attrs: &Attrs,
        _pool: &[TensorSpec],
        _rng: &mut dyn RngCore,
    ) -> Option<TensorSpec> {
        if first.rank() != 4 {
            return None;
        }
        let c = first.shape[1];
        Some(TensorSpec::f32(&[c, c, CONV_KERNEL, CONV_KERNEL]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_is_shape_preserving_with_square_weight() {
        let out = Conv2d
            .infer(
                &[TensorSpec::f32(&[1, 16, 32, 32]), TensorSpec::f32(&[16, 16, 3, 3])],
                &Attrs::new(),
            )
            .unwrap();
        assert_eq!(out.shape, vec![1, 16, 32, 32]);
    }

    #[test]
    fn conv_identity_kernel() {
        // single channel, centre tap = 1 -> output equals input
        let xs = TensorSpec::f32(&[1, 1, 2, 3]);
        let ws = TensorSpec::f32(&[1, 1, 3, 3]);
        let x = TensorValue::f32(xs.clone(), vec![1., 2., 3., 4., 5., 6.]);
        let mut wv = vec![0.0; 9];
        wv[4] = 1.0;
        let w = TensorValue::f32(ws, wv);
        let out = Conv2d.evaluate(&[&x, &w], &Attrs::new(), &xs);
        assert_eq!(out.as_f32(), x.as_f32());
    }

    #[test]
    fn matmul_operand_prefers_pool() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let pool = super::super::default_shape_pool();
        let s = MatMul
            .operand_spec(&TensorSpec::f32(&[4, 3]), &Attrs::new(), &pool, &mut rng)
            .unwrap();
        assert_eq!(s.shape, vec![3, 5]);
        let s = MatMul
            .operand_spec(&TensorSpec::f32(&[36, 9]), &Attrs::new(), &pool, &mut rng)
            .unwrap();
        assert_eq!(s.shape[0], 9);
    }
}
