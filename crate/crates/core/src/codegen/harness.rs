use super::{buffer_name, buffer_plan, c_params, mangle_entry, Code, Target};
use crate::graph::ComputationGraph;
use crate::ops::DType;

/// Extra elements allocated past every buffer, so a slightly out-of-range
/// store corrupts padding instead of crashing.
pub const BUFFER_PAD: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HarnessSource {
    /// Entry called unless `-DENTRY=...` overrides it.
    pub default_entry: String,
    pub source_text: String,
}

/// C driver for either CPU entry point of `pair_id`.
///
/// Without arguments it fills inputs from the shared SplitMix64 stream seeded
/// with `input_seed`, calls the entry once and prints `OUT <node> <index>
/// <value>` for every graph output. With `--time W R` it runs W warm-up and R
/// timed calls and prints `TIME_NS <median>`.
pub fn emit_harness(graph: &ComputationGraph, pair_id: u64, input_seed: u64) -> HarnessSource {
    let plan = buffer_plan(graph);
    let default_entry = mangle_entry(pair_id, Target::CpuOptimized);
    let args: Vec<String> = plan.iter().map(|s| buffer_name(s.node)).collect();
    let call = format!("ENTRY({});", args.join(", "));

    let mut c = Code::default();
    c.line("#define _POSIX_C_SOURCE 199309L");
    for h in ["stdint.h", "stdio.h", "stdlib.h", "string.h", "time.h"] {
        c.line(format!("#include <{h}>"));
    }
    c.line("");
    c.line("#ifndef ENTRY");
    c.line(format!("#define ENTRY {default_entry}"));
    c.line("#endif");
    c.line(format!("#define PAD {BUFFER_PAD}"));
    c.line("");
    c.line(format!("void ENTRY({});", c_params(&plan)));
    c.line("");
    c.line("static uint64_t rng_state;");
    c.line("");
    c.open("static uint64_t next_u64(void)");
    c.line("rng_state += 0x9E3779B97F4A7C15ULL;");
    c.line("uint64_t z = rng_state;");
    c.line("z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;");
    c.line("z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;");
    c.line("return z ^ (z >> 31);");
    c.close();
    c.line("");
    c.open("static float next_f32(void)");
    c.line("return (float)(uint32_t)(next_u64() >> 40) * (1.0f / 8388608.0f) - 1.0f;");
    c.close();
    c.line("");
    c.open("static int64_t now_ns(void)");
    c.line("struct timespec ts;");
    c.line("clock_gettime(CLOCK_MONOTONIC, &ts);");
    c.line("return (int64_t)ts.tv_sec * 1000000000LL + (int64_t)ts.tv_nsec;");
    c.close();
    c.line("");
    c.open("int main(int argc, char** argv)");
    c.line("int timing = 0;");
    c.line("long warmup = 0, reps = 1;");
    c.open("if (argc == 4 && strcmp(argv[1], \"--time\") == 0)");
    c.line("timing = 1;");
    c.line("warmup = atol(argv[2]);");
    c.line("reps = atol(argv[3]);");
    c.open("if (warmup < 0 || reps < 1)");
    c.line("fprintf(stderr, \"invalid repetition counts\\n\");");
    c.line("return 2;");
    c.close();
    c.close();
    c.open("else if (argc != 1)");
    c.line("fprintf(stderr, \"usage: %s [--time WARMUP REPS]\\n\", argv[0]);");
    c.line("return 2;");
    c.close();
    c.line(format!("rng_state = {input_seed}ULL;"));
    for s in &plan {
        let (ty, name) = (s.spec.dtype.c_type(), buffer_name(s.node));
        c.line(format!(
            "{ty}* {name} = ({ty}*)calloc({} + PAD, sizeof({ty}));",
            s.spec.len()
        ));
        c.open(format!("if (!{name})"));
        c.line("fprintf(stderr, \"out of memory\\n\");");
        c.line("return 3;");
        c.close();
    }
    for id in graph.input_ids() {
        let spec = &graph.node(id).expect("input exists").spec;
        let name = buffer_name(id);
        c.open(format!("for (int64_t i = 0; i < {}; ++i)", spec.len()));
        c.line(format!("{name}[i] = next_f32();"));
        c.close();
    }
    c.open("if (!timing)");
    c.line(&call);
    for &id in graph.outputs() {
        let spec = &graph.node(id).expect("output exists").spec;
        let name = buffer_name(id);
        c.open(format!("for (int64_t i = 0; i < {}; ++i)", spec.len()));
        match spec.dtype {
            DType::F32 => c.line(format!(
                "printf(\"OUT {} %lld %.9g\\n\", (long long)i, (double){name}[i]);",
                id.0
            )),
            DType::I32 => c.line(format!(
                "printf(\"OUT {} %lld %d\\n\", (long long)i, (int){name}[i]);",
                id.0
            )),
        }
        c.close();
    }
    c.close();
    c.open("else");
    c.open("for (long w = 0; w < warmup; ++w)");
    c.line(&call);
    c.close();
    c.line("int64_t* samples = (int64_t*)malloc((size_t)reps * sizeof(int64_t));");
    c.open("if (!samples)");
    c.line("fprintf(stderr, \"out of memory\\n\");");
    c.line("return 3;");
    c.close();
    c.open("for (long r = 0; r < reps; ++r)");
    c.line("int64_t t0 = now_ns();");
    c.line(&call);
    c.line("samples[r] = now_ns() - t0;");
    c.close();
    c.open("for (long a = 1; a < reps; ++a)");
    c.line("int64_t key = samples[a];");
    c.line("long b = a - 1;");
    c.open("while (b >= 0 && samples[b] > key)");
    c.line("samples[b + 1] = samples[b];");
    c.line("--b;");
    c.close();
    c.line("samples[b + 1] = key;");
    c.close();
    c.line("int64_t median = reps % 2 ? samples[reps / 2] : (samples[reps / 2 - 1] + samples[reps / 2]) / 2;");
    c.line("printf(\"TIME_NS %lld\\n\", (long long)median);");
    c.line("free(samples);");
    c.close();
    for s in &plan {
        c.line(format!("free({});", buffer_name(s.node)));
    }
    c.line("return 0;");
    c.close();
    HarnessSource {
        default_entry,
        source_text: c.finish(),
    }
}
