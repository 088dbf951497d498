//! Annotate a tree with tile histories up to a stage budget, then inspect
//! sections and consistency.

use treebound::annotation::{
    annotate, check_global_annotated, check_local_annotated, section, stage_tilings,
};
use treebound::fixpoint::seed_distance_formula;
use treebound::tree::path_tree;
use treebound::types::build_basis;

fn main() {
    let phi = seed_distance_formula();
    let basis = build_basis(1, &["P0"]).unwrap();

    let mut tree = path_tree(5);
    tree.labels_mut(0).insert("P0".into());

    let beta = 4;
    let ann = annotate(&phi, &tree, beta, &basis).unwrap();
    println!("annotated {} vertices up to stage {}", tree.len(), beta);
    for v in tree.vertices() {
        println!("  vertex {}: history of length {}", v, ann.h[&v].length());
    }

    match check_local_annotated(&ann).unwrap() {
        None => println!("locally consistent"),
        Some(fault) => println!("local fault: {fault}"),
    }
    match check_global_annotated(&ann, &basis).unwrap() {
        None => println!("globally consistent"),
        Some(fault) => println!("global fault: {fault}"),
    }

    // A section picks one tile per vertex from a history index at a chosen
    // vertex, following the synchronisation map outward.
    let sec = section(&ann, 0, 1).unwrap();
    println!("section at (vertex 0, index 1):");
    for (v, tile) in &sec {
        let eqs = tile.check_equations(&basis).unwrap();
        println!("  vertex {v}: tile equations hold = {eqs}");
    }

    // Stage tilings record the canonical tiling of each stage directly.
    let st = stage_tilings(&phi, &tree, beta, &basis).unwrap();
    for alpha in 0..beta {
        let changed = tree
            .vertices()
            .filter(|&v| st.at(alpha)[&v] != st.at(alpha + 1)[&v])
            .count();
        println!("stage {alpha} -> {}: {changed} tiles changed", alpha + 1);
    }
}
