use std::collections::BTreeSet;

use maxvit::check::cases::{end_to_end_case, layer_cases, primitive_cases, GradCase, GRAD_TOL, GRAPH_PRIMITIVES};

fn assert_passes(case: &GradCase) {
    let rep = case.run().unwrap_or_else(|e| panic!("{}: {e}", case.name));
    assert!(rep.max_rel_error < GRAD_TOL, "{}: max rel error {:e} at {:?}", case.name, rep.max_rel_error, rep.worst);
    assert!(rep.entries > 0);
}

#[test]
fn every_primitive_passes() {
    for case in primitive_cases() {
        assert_passes(&case);
    }
}

#[test]
fn every_graph_operation_has_a_case() {
    let names: BTreeSet<&str> = primitive_cases().iter().map(|c| c.name).collect();
    for op in GRAPH_PRIMITIVES {
        assert!(names.iter().any(|n| n.starts_with(op)), "no gradient case for {op}");
    }
}

#[test]
fn composite_layers_pass() {
    for case in layer_cases() {
        assert_passes(&case);
    }
}

#[test]
fn one_block_model_end_to_end() {
    assert_passes(&end_to_end_case());
}
