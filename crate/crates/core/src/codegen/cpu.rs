use super::{
    buffer_plan, c_params, check_graph, mangle_entry, node_contexts, buffer_name, Code, EmitError,
    EmitOptions, EmitterRegistry, KernelSource, Target,
};
use crate::graph::ComputationGraph;
use crate::ops::Inventory;

/// Emits one C function computing the whole graph into caller-owned buffers.
///
/// `CpuReference` ignores `opts` and produces plain sequential loops;
/// `CpuOptimized` applies them.
pub fn emit_cpu(
    inv: &Inventory,
    graph: &ComputationGraph,
    pair_id: u64,
    target: Target,
    opts: &EmitOptions,
) -> Result<KernelSource, EmitError> {
    let opts = match target {
        Target::CpuReference => EmitOptions::naive(),
        Target::CpuOptimized => {
            opts.check()?;
            opts.clone()
        }
        Target::Cuda => return Err(EmitError::InvalidOptions("emit_cpu called with the CUDA target".into())),
    };
    check_graph(inv, graph)?;
    let registry = EmitterRegistry::global();
    let plan = buffer_plan(graph);
    let entry = mangle_entry(pair_id, target);

    let mut code = Code::default();
    code.line("#include <math.h>");
    code.line("#include <stdint.h>");
    code.line("");
    code.open(format!("void {entry}({})", c_params(&plan)));
    for (i, node) in node_contexts(inv, graph, buffer_name)?.iter().enumerate() {
        if i > 0 {
            code.line("");
        }
        code.line(format!("// node {}: {} -> {}", node.id, node.op, node.spec));
        registry.get(node.op)?.emit_cpu(node, &mut code, &opts);
    }
    code.close();
    Ok(KernelSource {
        target,
        entry_name: entry,
        source_text: code.finish(),
        buffer_plan: plan,
    })
}
