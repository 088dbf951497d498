//! Compute jumps, dependencies, and ranks on an annotated tree, and check
//! a full proposal at a vertex.

use treebound::annotation::{annotate, check_proposal, jumps, ranks};
use treebound::fixpoint::seed_distance_formula;
use treebound::tree::path_tree;
use treebound::types::build_basis;

fn main() {
    let phi = seed_distance_formula();
    let basis = build_basis(1, &["P0"]).unwrap();

    let mut tree = path_tree(6);
    tree.labels_mut(0).insert("P0".into());

    let ann = annotate(&phi, &tree, 7, &basis).unwrap();

    let j = jumps(&ann, &basis).unwrap();
    println!("jump indices:");
    for (v, i) in &j {
        println!("  vertex {v}: history index {i}");
    }

    let r = ranks(&ann, &basis).unwrap();
    println!("ranks:");
    for (v, rk) in &r {
        println!("  vertex {v}: rank {rk}");
    }

    // The far end of a seeded 6-path enters the fixed point last, so its
    // proposal carries the largest rank.
    let report = check_proposal(&phi, &ann, 5, &basis).unwrap();
    println!("proposal at vertex 5:");
    println!("  well formed:          {}", report.well_formed);
    println!("  locally consistent:   {}", report.locally_consistent);
    println!("  globally consistent:  {}", report.globally_consistent);
    println!("  jump consistent:      {}", report.jump_consistent);
    println!("  vertex in fixpoint:   {}", report.vertex_in_fixpoint);
    println!("  rank:                 {:?}", report.rank);
    assert!(report.is_proposal());
}
