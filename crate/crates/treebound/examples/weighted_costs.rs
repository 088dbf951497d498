//! Weighted tree automata: cost of an input, the limitedness probe, and the
//! logarithmic bounds the path charger places on proposal ranks.

use std::collections::BTreeSet;

use treebound::annotation::{annotate, jumps};
use treebound::fixpoint::seed_distance_formula;
use treebound::tree::path_tree;
use treebound::types::build_basis;
use treebound::weighted::{
    build_path_weight_automaton, ceil_half_log2, cost, limitedness_probe, path_input,
    verify_log_bounds,
};

fn main() {
    let charger = build_path_weight_automaton();
    charger.validate().unwrap();

    let phi = seed_distance_formula();
    let basis = build_basis(1, &["P0"]).unwrap();
    let mut tree = path_tree(6);
    tree.labels_mut(0).insert("P0".into());
    let ann = annotate(&phi, &tree, 7, &basis).unwrap();

    // Charge the full path from the seed to the far end, marking jumps.
    let jump_set: BTreeSet<_> = jumps(&ann, &basis).unwrap().keys().copied().collect();
    let path: BTreeSet<_> = tree.vertices().collect();
    let input = path_input(&tree, 5, &path, &jump_set);
    println!(
        "cost of the full seeded path: {:?} (log floor for rank 5: {})",
        cost(&charger, &input).unwrap(),
        ceil_half_log2(5)
    );

    // The probe exhausts small inputs and reports whether costs look bounded.
    let report = limitedness_probe(&charger, 5).unwrap();
    println!("probe over {} accepted inputs: {:?}", report.accepted, report.verdict);
    for (size, max) in &report.table {
        println!("  size {size}: max cost {max:?}");
    }

    // On an annotated tree, the charger's cost squeezes each rank:
    // ceil(log2(rank)/2) <= cost <= rank.
    for check in verify_log_bounds(&ann, &basis).unwrap() {
        println!(
            "vertex {}: rank {} cost {:?} within bounds = {}",
            check.vertex, check.rank, check.cost, check.ok
        );
        assert!(check.ok);
    }
}
