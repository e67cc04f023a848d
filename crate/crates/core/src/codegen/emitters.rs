use std::collections::BTreeMap;
use std::sync::LazyLock;

use super::{flat_index, Code, EmitError, EmitOptions, NodeCtx};
use crate::ops::{
    int_attr, ints_attr, split_axis, transpose_source_strides, BinaryKind, Inventory,
    ReduceKind, TensorSpec, UnaryKind,
};
use crate::ops::{CONV_KERNEL, CONV_PAD};

const PRAGMA: &str = "#pragma omp parallel for";

/// Body of one CUDA kernel: `work_items` threads, each with a flat `idx`.
/// Lines refer to the parameters `out`, `in0`, `in1`.
pub struct CudaBody {
    pub work_items: usize,
    pub lines: Vec<String>,
}

/// Emits the loop nest for one operator family.
pub trait KernelEmitter: Send + Sync {
    fn emit_cpu(&self, node: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions);
    fn emit_cuda(&self, node: &NodeCtx<'_>) -> CudaBody;
}

pub struct EmitterRegistry {
    map: BTreeMap<&'static str, Box<dyn KernelEmitter>>,
}

static GLOBAL: LazyLock<EmitterRegistry> = LazyLock::new(EmitterRegistry::v1);

impl EmitterRegistry {
    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn global() -> &'static EmitterRegistry {
        &GLOBAL
    }

    pub fn v1() -> Self {
        let mut r = Self::empty();
        for (name, k) in [
            ("relu", UnaryKind::Relu),
            ("sin", UnaryKind::Sin),
            ("cos", UnaryKind::Cos),
            ("sqrt_abs", UnaryKind::SqrtAbs),
        ] {
            r.register(name, Unary(k));
        }
        for (name, k) in [("add", BinaryKind::Add), ("sub", BinaryKind::Sub), ("mul", BinaryKind::Mul)] {
            r.register(name, Binary(k));
        }
        for (name, k) in [
            ("sum", ReduceKind::Sum),
            ("mean", ReduceKind::Mean),
            ("max", ReduceKind::Max),
            ("argmax", ReduceKind::Argmax),
        ] {
            r.register(name, Reduction(k));
        }
        r.register("softmax", SoftmaxEmitter);
        r.register("reshape", ReshapeEmitter);
        r.register("transpose", TransposeEmitter);
        r.register("sort_last_axis", RowSelect { topk: false });
        r.register("topk_values", RowSelect { topk: true });
        r.register("matmul", MatmulEmitter);
        r.register("conv2d", ConvEmitter);
        r
    }

    pub fn register(&mut self, op: &'static str, emitter: impl KernelEmitter + 'static) {
        let prev = self.map.insert(op, Box::new(emitter));
        assert!(prev.is_none(), "emitter for `{op}` registered twice");
    }

    pub fn get(&self, op: &str) -> Result<&dyn KernelEmitter, EmitError> {
        self.map
            .get(op)
            .map(|b| b.as_ref())
            .ok_or_else(|| EmitError::UnsupportedOp(op.to_string()))
    }

    /// Inventory operators with no emitter.
    pub fn missing(&self, inv: &Inventory) -> Vec<String> {
        inv.operators()
            .filter(|op| !self.map.contains_key(op.name()))
            .map(|op| op.name().to_string())
            .collect()
    }
}

fn loop_vars(rank: usize) -> Vec<String> {
    (0..rank).map(|d| format!("i{d}")).collect()
}

fn for_loop(v: &str, from: usize, to: usize) -> String {
    format!("for (int32_t {v} = {from}; {v} < {to}; ++{v})")
}

/// Row-major loop nest over `shape`. The parallel pragma lands on the first
/// loop with extent > 1; the innermost loop is unrolled when requested.
fn pointwise_nest(code: &mut Code, shape: &[usize], opts: &EmitOptions, body: &dyn Fn(&mut Code, &[String])) {
    let rank = shape.len();
    let vars = loop_vars(rank);
    let par = if opts.parallel { shape.iter().position(|&e| e > 1) } else { None };
    for d in 0..rank - 1 {
        if par == Some(d) {
            code.line(PRAGMA);
        }
        code.open(for_loop(&vars[d], 0, shape[d]));
    }
    let last = rank - 1;
    let (v, e) = (vars[last].clone(), shape[last]);
    if par == Some(last) {
        code.line(PRAGMA);
    }
    match opts.unroll {
        Some(u) if e >= u => {
            let main = e / u * u;
            code.open(format!("for (int32_t {v} = 0; {v} < {main}; {v} += {u})"));
            for k in 0..u {
                let mut vs = vars.clone();
                if k > 0 {
                    vs[last] = format!("({v} + {k})");
                }
                body(code, &vs);
            }
            code.close();
            if main < e {
                code.open(for_loop(&v, main, e));
                body(code, &vars);
                code.close();
            }
        }
        _ => {
            code.open(for_loop(&v, 0, e));
            body(code, &vars);
            code.close();
        }
    }
    for _ in 0..rank - 1 {
        code.close();
    }
}

/// `o` / `j` loops around a reduction axis, parallel on the first non-unit one.
fn axis_nest(code: &mut Code, outer: usize, inner: usize, opts: &EmitOptions, body: &dyn Fn(&mut Code)) {
    if opts.parallel && outer > 1 {
        code.line(PRAGMA);
    }
    code.open(for_loop("o", 0, outer));
    if opts.parallel && outer == 1 && inner > 1 {
        code.line(PRAGMA);
    }
    code.open(for_loop("j", 0, inner));
    body(code);
    code.close();
    code.close();
}

fn axis_index(red: usize, inner: usize, r: &str) -> String {
    format!("(o * {red} + {r}) * {inner} + j")
}

struct Unary(UnaryKind);

fn unary_cpu(kind: UnaryKind, x: &str) -> String {
    match kind {
        UnaryKind::Relu => format!("({x} > 0.0f ? {x} : 0.0f)"),
        UnaryKind::Sin => format!("(float)sin((double){x})"),
        UnaryKind::Cos => format!("(float)cos((double){x})"),
        UnaryKind::SqrtAbs => format!("(float)sqrt((double)fabsf({x}))"),
    }
}

impl KernelEmitter for Unary {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let shape = &n.spec.shape;
        let (out, a) = (&n.out, &n.args[0].0);
        pointwise_nest(code, shape, opts, &|c, vars| {
            let idx = flat_index(vars, shape);
            c.line(format!("{out}[{idx}] = {};", unary_cpu(self.0, &format!("{a}[{idx}]"))));
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let expr = match self.0 {
            UnaryKind::Relu => "fmaxf(in0[idx], 0.0f)",
            UnaryKind::Sin => "__sinf(in0[idx])",
            UnaryKind::Cos => "__cosf(in0[idx])",
            UnaryKind::SqrtAbs => "sqrtf(fabsf(in0[idx]))",
        };
        CudaBody {
            work_items: n.spec.len(),
            lines: vec![format!("out[idx] = {expr};")],
        }
    }
}

struct Binary(BinaryKind);

impl KernelEmitter for Binary {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let shape = &n.spec.shape;
        let (out, a, b) = (&n.out, &n.args[0].0, &n.args[1].0);
        let op = self.0.c_operator();
        pointwise_nest(code, shape, opts, &|c, vars| {
            let idx = flat_index(vars, shape);
            c.line(format!("{out}[{idx}] = {a}[{idx}] {op} {b}[{idx}];"));
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        CudaBody {
            work_items: n.spec.len(),
            lines: vec![format!("out[idx] = in0[idx] {} in1[idx];", self.0.c_operator())],
        }
    }
}

struct Reduction(ReduceKind);

fn reduce_dims(n: &NodeCtx<'_>) -> (usize, usize, usize) {
    let axis = int_attr(n.attrs, "axis") as usize;
    split_axis(&n.args[0].1.shape, axis)
}

impl KernelEmitter for Reduction {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let (outer, red, inner) = reduce_dims(n);
        let (out, a) = (&n.out, &n.args[0].0);
        let kind = self.0;
        axis_nest(code, outer, inner, opts, &|c| {
            let at = |r: &str| format!("{a}[{}]", axis_index(red, inner, r));
            let dst = format!("{out}[o * {inner} + j]");
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    c.line("double acc = 0.0;");
                    c.open(for_loop("r", 0, red));
                    c.line(format!("acc += (double){};", at("r")));
                    c.close();
                    if kind == ReduceKind::Mean {
                        c.line(format!("{dst} = (float)(acc / {red}.0);"));
                    } else {
                        c.line(format!("{dst} = (float)acc;"));
                    }
                }
                ReduceKind::Max | ReduceKind::Argmax => {
                    let arg = kind == ReduceKind::Argmax;
                    c.line(format!("float best = {};", at("0")));
                    if arg {
                        c.line("int32_t best_i = 0;");
                    }
                    c.open(for_loop("r", 1, red));
                    c.line(format!("const float x = {};", at("r")));
                    c.open("if (x > best)");
                    c.line("best = x;");
                    if arg {
                        c.line("best_i = r;");
                    }
                    c.close();
                    c.close();
                    if !arg {
                        c.line(format!("{dst} = best;"));
                    } else {
                        c.line(format!("{dst} = best_i;"));
                    }
                }
            }
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let (outer, red, inner) = reduce_dims(n);
        let at = |r: &str| format!("in0[{}]", axis_index(red, inner, r));
        let mut lines = vec![
            format!("int o = idx / {inner};"),
            format!("int j = idx % {inner};"),
        ];
        match self.0 {
            ReduceKind::Sum | ReduceKind::Mean => {
                lines.push("float acc = 0.0f;".into());
                lines.push(format!("for (int r = 0; r < {red}; ++r) acc += {};", at("r")));
                if self.0 == ReduceKind::Mean {
                    lines.push(format!("out[idx] = acc / {red}.0f;"));
                } else {
                    lines.push("out[idx] = acc;".into());
                }
            }
            ReduceKind::Max | ReduceKind::Argmax => {
                lines.push(format!("float best = {};", at("0")));
                lines.push("int best_i = 0;".into());
                lines.push(format!(
                    "for (int r = 1; r < {red}; ++r) {{ float x = {}; if (x > best) {{ best = x; best_i = r; }} }}",
                    at("r")
                ));
                if self.0 == ReduceKind::Max {
                    lines.push("out[idx] = best;".into());
                } else {
                    lines.push("out[idx] = best_i;".into());
                }
            }
        }
        CudaBody {
            work_items: outer * inner,
            lines,
        }
    }
}

struct SoftmaxEmitter;

impl KernelEmitter for SoftmaxEmitter {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let (outer, red, inner) = reduce_dims(n);
        let (out, a) = (&n.out, &n.args[0].0);
        axis_nest(code, outer, inner, opts, &|c| {
            let at = |r: &str| format!("{a}[{}]", axis_index(red, inner, r));
            c.line(format!("double m = (double){};", at("0")));
            c.open(for_loop("r", 1, red));
            c.line(format!("const double x = (double){};", at("r")));
            c.open("if (x > m)");
            c.line("m = x;");
            c.close();
            c.close();
            c.line("double s = 0.0;");
            c.open(for_loop("r", 0, red));
            c.line(format!("s += exp((double){} - m);", at("r")));
            c.close();
            c.open(for_loop("r", 0, red));
            c.line(format!(
                "{out}[{}] = (float)(exp((double){} - m) / s);",
                axis_index(red, inner, "r"),
                at("r")
            ));
            c.close();
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let (_, red, inner) = reduce_dims(n);
        CudaBody {
            work_items: n.spec.len(),
            lines: vec![
                format!("int base = idx / {} * {} + idx % {inner};", red * inner, red * inner),
                "float m = in0[base];".into(),
                format!("for (int r = 1; r < {red}; ++r) m = fmaxf(m, in0[base + r * {inner}]);"),
                "float s = 0.0f;".into(),
                format!("for (int r = 0; r < {red}; ++r) s += __expf(in0[base + r * {inner}] - m);"),
                "out[idx] = __expf(in0[idx] - m) / s;".into(),
            ],
        }
    }
}

struct ReshapeEmitter;

impl KernelEmitter for ReshapeEmitter {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let flat = [n.spec.len()];
        let (out, a) = (&n.out, &n.args[0].0);
        pointwise_nest(code, &flat, opts, &|c, vars| {
            c.line(format!("{out}[{0}] = {a}[{0}];", vars[0]));
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        CudaBody {
            work_items: n.spec.len(),
            lines: vec!["out[idx] = in0[idx];".into()],
        }
    }
}

struct TransposeEmitter;

fn transpose_src(n: &NodeCtx<'_>) -> Vec<usize> {
    let perm: Vec<usize> = ints_attr(n.attrs, "perm").iter().map(|&p| p as usize).collect();
    transpose_source_strides(n.args[0].1, &perm)
}

impl KernelEmitter for TransposeEmitter {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let shape = &n.spec.shape;
        let src = transpose_src(n);
        let (out, a) = (&n.out, &n.args[0].0);
        pointwise_nest(code, shape, opts, &|c, vars| {
            let from: Vec<String> = vars
                .iter()
                .zip(&src)
                .map(|(v, &s)| if s == 1 { v.clone() } else { format!("{v} * {s}") })
                .collect();
            c.line(format!("{out}[{}] = {a}[{}];", flat_index(vars, shape), from.join(" + ")));
        });
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let src = transpose_src(n);
        let strides = n.spec.strides();
        let mut lines = vec!["int src = 0;".to_string()];
        for ((os, d), ss) in strides.iter().zip(&n.spec.shape).zip(&src) {
            lines.push(format!("src += (idx / {os} % {d}) * {ss};"));
        }
        lines.push("out[idx] = in0[src];".into());
        CudaBody {
            work_items: n.spec.len(),
            lines,
        }
    }
}

/// Descending stable sort of each last-axis row, or its top-k prefix.
struct RowSelect {
    topk: bool,
}

impl RowSelect {
    fn dims(&self, n: &NodeCtx<'_>) -> (usize, usize, usize) {
        let input = n.args[0].1;
        let len = *input.shape.last().expect("rank >= 1");
        let k = if self.topk { int_attr(n.attrs, "k") as usize } else { len };
        (input.len() / len, len, k)
    }
}

impl KernelEmitter for RowSelect {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let (rows, len, k) = self.dims(n);
        let (out, a) = (&n.out, &n.args[0].0);
        if opts.parallel && rows > 1 {
            code.line(PRAGMA);
        }
        code.open(for_loop("row", 0, rows));
        code.line(format!("float* dst = {out} + row * {k};"));
        code.line(format!("const float* src = {a} + row * {len};"));
        if self.topk {
            code.line("int32_t count = 0;");
        }
        code.open(for_loop("i", 0, len));
        code.line("const float key = src[i];");
        if self.topk {
            code.line("int32_t p;");
            code.open(format!("if (count < {k})"));
            code.line("p = count - 1;");
            code.line("++count;");
            code.close();
            code.open(format!("else if (key > dst[{}])", k - 1));
            code.line(format!("p = {};", k as i64 - 2));
            code.close();
            code.open("else");
            code.line("continue;");
            code.close();
        } else {
            code.line("int32_t p = i - 1;");
        }
        code.open("while (p >= 0 && dst[p] < key)");
        code.line("dst[p + 1] = dst[p];");
        code.line("--p;");
        code.close();
        code.line("dst[p + 1] = key;");
        code.close();
        code.close();
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let (rows, len, k) = self.dims(n);
        let store = if self.topk {
            format!("if (rank < {k}) out[row * {k} + rank] = key;")
        } else {
            format!("out[row * {len} + rank] = key;")
        };
        CudaBody {
            work_items: rows * len,
            lines: vec![
                format!("int row = idx / {len};"),
                format!("int i = idx % {len};"),
                format!("const float* x = in0 + row * {len};"),
                "float key = x[i];".into(),
                "int rank = 0;".into(),
                format!("for (int p = 0; p < {len}; ++p) rank += (x[p] > key) || (x[p] == key && p < i);"),
                store,
            ],
        }
    }
}

struct MatmulEmitter;

fn matmul_dims(n: &NodeCtx<'_>) -> (usize, usize, usize) {
    let a: &TensorSpec = n.args[0].1;
    (a.shape[0], a.shape[1], n.spec.shape[1])
}

impl KernelEmitter for MatmulEmitter {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let (m, kd, nd) = matmul_dims(n);
        let (out, a, b) = (&n.out, &n.args[0].0, &n.args[1].0);
        if opts.parallel && m > 1 {
            code.line(PRAGMA);
        }
        code.open(for_loop("i", 0, m));
        match opts.tile {
            // Row panel of `t` accumulators; k stays the outer reduction loop so
            // the summation order matches the naive kernel exactly.
            Some(t) => {
                let t = t.min(nd);
                let even = nd % t == 0;
                code.open(format!("for (int32_t jj = 0; jj < {nd}; jj += {t})"));
                let bound = if even {
                    t.to_string()
                } else {
                    code.line(format!("const int32_t jn = {nd} - jj < {t} ? {nd} - jj : {t};"));
                    "jn".to_string()
                };
                code.line(format!("double acc[{t}];"));
                code.open(format!("for (int32_t j = 0; j < {bound}; ++j)"));
                code.line("acc[j] = 0.0;");
                code.close();
                code.open(for_loop("k", 0, kd));
                code.line(format!("const double aik = (double){a}[i * {kd} + k];"));
                code.line(format!("const float* brow = {b} + k * {nd} + jj;"));
                code.open(format!("for (int32_t j = 0; j < {bound}; ++j)"));
                code.line("acc[j] += aik * (double)brow[j];");
                code.close();
                code.close();
                code.open(format!("for (int32_t j = 0; j < {bound}; ++j)"));
                code.line(format!("{out}[i * {nd} + jj + j] = (float)acc[j];"));
                code.close();
                code.close();
            }
            None => {
                code.open(for_loop("j", 0, nd));
                code.line("double acc = 0.0;");
                code.open(for_loop("k", 0, kd));
                code.line(format!("acc += (double){a}[i * {kd} + k] * (double){b}[k * {nd} + j];"));
                code.close();
                code.line(format!("{out}[i * {nd} + j] = (float)acc;"));
                code.close();
            }
        }
        code.close();
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let (m, kd, nd) = matmul_dims(n);
        CudaBody {
            work_items: m * nd,
            lines: vec![
                format!("int i = idx / {nd};"),
                format!("int j = idx % {nd};"),
                "float acc = 0.0f;".into(),
                format!("for (int k = 0; k < {kd}; ++k) acc += in0[i * {kd} + k] * in1[k * {nd} + j];"),
                "out[idx] = acc;".into(),
            ],
        }
    }
}

struct ConvEmitter;

fn conv_dims(n: &NodeCtx<'_>) -> [usize; 5] {
    let x = &n.args[0].1.shape;
    [x[0], x[1], x[2], x[3], n.spec.shape[1]]
}

impl KernelEmitter for ConvEmitter {
    fn emit_cpu(&self, n: &NodeCtx<'_>, code: &mut Code, opts: &EmitOptions) {
        let [batch, chans, h, w, outc] = conv_dims(n);
        let (out, x, wt) = (&n.out, &n.args[0].0, &n.args[1].0);
        let (ks, pad) = (CONV_KERNEL, CONV_PAD);
        if opts.parallel {
            code.line("#pragma omp parallel for collapse(2)");
        }
        code.open(for_loop("n", 0, batch));
        code.open(for_loop("oc", 0, outc));
        code.open(for_loop("y", 0, h));
        code.open(for_loop("xw", 0, w));
        code.line("double acc = 0.0;");
        code.open(for_loop("c", 0, chans));
        code.open(for_loop("ky", 0, ks));
        code.line(format!("const int32_t iy = y + ky - {pad};"));
        code.open(format!("if (iy < 0 || iy >= {h})"));
        code.line("continue;");
        code.close();
        code.open(for_loop("kx", 0, ks));
        code.line(format!("const int32_t ix = xw + kx - {pad};"));
        code.open(format!("if (ix < 0 || ix >= {w})"));
        code.line("continue;");
        code.close();
        code.line(format!(
            "acc += (double){x}[((n * {chans} + c) * {h} + iy) * {w} + ix] * (double){wt}[((oc * {chans} + c) * {ks} + ky) * {ks} + kx];"
        ));
        code.close();
        code.close();
        code.close();
        code.line(format!("{out}[((n * {outc} + oc) * {h} + y) * {w} + xw] = (float)acc;"));
        for _ in 0..4 {
            code.close();
        }
    }

    fn emit_cuda(&self, n: &NodeCtx<'_>) -> CudaBody {
        let [_, chans, h, w, outc] = conv_dims(n);
        let (ks, pad) = (CONV_KERNEL, CONV_PAD);
        CudaBody {
            work_items: n.spec.len(),
            lines: vec![
                format!("int xw = idx % {w};"),
                format!("int y = idx / {w} % {h};"),
                format!("int oc = idx / {} % {outc};", w * h),
                format!("int n = idx / {};", w * h * outc),
                "float acc = 0.0f;".into(),
                format!("for (int c = 0; c < {chans}; ++c)"),
                format!("    for (int ky = 0; ky < {ks}; ++ky)"),
                format!("        for (int kx = 0; kx < {ks}; ++kx) {{"),
                format!("            int iy = y + ky - {pad};"),
                format!("            int ix = xw + kx - {pad};"),
                format!("            if (iy >= 0 && iy < {h} && ix >= 0 && ix < {w})"),
                format!(
                    "                acc += in0[((n * {chans} + c) * {h} + iy) * {w} + ix] * in1[((oc * {chans} + c) * {ks} + ky) * {ks} + kx];"
                ),
                "        }".into(),
                "out[idx] = acc;".into(),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_inventory() {
        assert!(EmitterRegistry::global().missing(Inventory::global()).is_empty());
        assert!(matches!(
            EmitterRegistry::global().get("gelu"),
            Err(EmitError::UnsupportedOp(_))
        ));
    }
}
