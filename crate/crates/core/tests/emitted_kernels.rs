//! Compiles emitted kernels with the host C compiler and checks them against
//! the interpreter.

use transbench::builder::{build_primitive, BuilderConfig};
use transbench::codegen::{emit_cuda, scan_clean, SourceKind, Target};
use transbench::dataset::{assemble_pair, HardwareLabel};
use transbench::eval::{verify_pair, ToolchainConfig};
use transbench::graph::ComputationGraph;
use transbench::ops::{default_shape_pool, Attrs, Inventory, TensorSpec};

fn inv() -> &'static Inventory {
    Inventory::global()
}

fn cos_graph() -> ComputationGraph {
    let mut g = ComputationGraph::new();
    let x = g.add_input(TensorSpec::f32(&[36, 9]));
    g.add_operator(inv(), "cos", Attrs::new(), &[x]).unwrap();
    g
}

const COS_GOLDEN: &str = include_str!("golden/cos_36x9.cu");

#[test]
fn cos_cuda_kernel_golden() {
    let src = emit_cuda(inv(), &cos_graph(), 0).unwrap().source_text;
    assert_eq!(src, COS_GOLDEN);
    assert!(scan_clean(&src, SourceKind::Kernel(Target::Cuda)).is_empty());
}

#[test]
fn guard_only_when_work_is_ragged() {
    let mut g = ComputationGraph::new();
    let x = g.add_input(TensorSpec::f32(&[64, 64]));
    g.add_operator(inv(), "relu", Attrs::new(), &[x]).unwrap();
    let src = emit_cuda(inv(), &g, 3).unwrap().source_text;
    assert!(!src.contains("if (idx <"));
    assert!(src.contains("<<<16, 256>>>"));
}

#[test]
fn every_operator_matches_the_interpreter() {
    let tc = ToolchainConfig::default();
    assert!(tc.available(), "a C compiler is required");
    let pool = default_shape_pool();
    for (i, op) in inv().operators().enumerate() {
        let g = build_primitive(inv(), op.name(), i as u64, &pool).unwrap();
        let pair = assemble_pair(inv(), g, i as u64, &Default::default(), i as u64, &HardwareLabel::default()).unwrap();
        let check = verify_pair(inv(), &pair, &tc).unwrap_or_else(|e| panic!("{}: {e}\n{}", op.name(), pair.cpu_src));
        assert!(check.reference.ok, "{} reference: {:?}", op.name(), check.reference);
        assert!(check.optimized.ok, "{} optimized: {:?}", op.name(), check.optimized);
    }
}

#[test]
fn built_graphs_match_the_interpreter() {
    let tc = ToolchainConfig::default();
    for seed in 0..12u64 {
        let cfg = BuilderConfig { seed, ..Default::default() };
        let (g, _) = transbench::builder::build_graph(inv(), &cfg).unwrap();
        let pair = assemble_pair(inv(), g, seed, &Default::default(), seed, &HardwareLabel::default()).unwrap();
        let check = verify_pair(inv(), &pair, &tc).unwrap();
        assert!(check.reference.ok && check.optimized.ok, "seed {seed}: {check:?}");
    }
}
