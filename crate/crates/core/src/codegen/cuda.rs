use super::{
    buffer_name, buffer_plan, check_graph, mangle_entry, node_contexts, BufferRole, Code, EmitError,
    EmitterRegistry, KernelSource, Target,
};
use crate::graph::ComputationGraph;
use crate::ops::{DType, Inventory};

pub const MAX_BLOCK: usize = 256;

/// Threads per block for a kernel with `work_items` independent items.
pub fn block_size(work_items: usize) -> usize {
    work_items.clamp(1, MAX_BLOCK)
}

fn cuda_type(dtype: DType) -> &'static str {
    match dtype {
        DType::F32 => "float",
        DType::I32 => "int",
    }
}

/// One `__global__` kernel per operator node plus an `extern "C"` host
/// launcher taking the same buffer plan as the CPU entry point.
pub fn emit_cuda(inv: &Inventory, graph: &ComputationGraph, pair_id: u64) -> Result<KernelSource, EmitError> {
    check_graph(inv, graph)?;
    let registry = EmitterRegistry::global();
    let plan = buffer_plan(graph);
    let entry = mangle_entry(pair_id, Target::Cuda);
    let nodes = node_contexts(inv, graph, |id| format!("d_{}", buffer_name(id)))?;

    let mut code = Code::default();
    let mut launches = Vec::new();
    for node in &nodes {
        let body = registry.get(node.op)?.emit_cuda(node);
        let block = block_size(body.work_items);
        let grid = body.work_items.div_ceil(block);
        let kernel = format!("{entry}_k{}", node.id);
        let mut params = vec![format!("{}* __restrict__ out", cuda_type(node.spec.dtype))];
        for (slot, (_, spec)) in node.args.iter().enumerate() {
            params.push(format!("const {}* __restrict__ in{slot}", cuda_type(spec.dtype)));
        }
        code.line(format!("// node {}: {} -> {}", node.id, node.op, node.spec));
        code.open(format!(
            "extern \"C\" __global__ void __launch_bounds__({block}) {kernel}({})",
            params.join(", ")
        ));
        code.line(format!("int idx = ((int)blockIdx.x) * {block} + ((int)threadIdx.x);"));
        let guarded = body.work_items % block != 0;
        if guarded {
            code.open(format!("if (idx < {})", body.work_items));
        }
        for l in &body.lines {
            code.line(l);
        }
        if guarded {
            code.close();
        }
        code.close();
        code.line("");
        let mut args = vec![node.out.clone()];
        args.extend(node.args.iter().map(|(n, _)| n.clone()));
        launches.push(format!("{kernel}<<<{grid}, {block}>>>({});", args.join(", ")));
    }

    let params: Vec<String> = plan
        .iter()
        .map(|s| {
            let ty = cuda_type(s.spec.dtype);
            let c = if s.role == BufferRole::Input { "const " } else { "" };
            format!("{c}{ty}* {}", buffer_name(s.node))
        })
        .collect();
    code.open(format!("extern \"C\" void {entry}({})", params.join(", ")));
    for s in &plan {
        let (ty, name) = (cuda_type(s.spec.dtype), buffer_name(s.node));
        code.line(format!("{ty}* d_{name};"));
        code.line(format!("cudaMalloc((void**)&d_{name}, {} * sizeof({ty}));", s.spec.len()));
    }
    for s in plan.iter().filter(|s| s.role == BufferRole::Input) {
        let (ty, name) = (cuda_type(s.spec.dtype), buffer_name(s.node));
        code.line(format!(
            "cudaMemcpy(d_{name}, {name}, {} * sizeof({ty}), cudaMemcpyHostToDevice);",
            s.spec.len()
        ));
    }
    for l in &launches {
        code.line(l);
    }
    code.line("cudaDeviceSynchronize();");
    for s in plan.iter().filter(|s| s.role != BufferRole::Input) {
        let (ty, name) = (cuda_type(s.spec.dtype), buffer_name(s.node));
        code.line(format!(
            "cudaMemcpy({name}, d_{name}, {} * sizeof({ty}), cudaMemcpyDeviceToHost);",
            s.spec.len()
        ));
    }
    for s in &plan {
        code.line(format!("cudaFree(d_{});", buffer_name(s.node)));
    }
    code.close();
    Ok(KernelSource {
        target: Target::Cuda,
        entry_name: entry,
        source_text: code.finish(),
        buffer_plan: plan,
    })
}
