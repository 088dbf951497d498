//! Watch the stages of a monotone fixpoint grow on a seeded path: each
//! stage reaches one vertex further from the seed.

use treebound::fixpoint::{evaluate_stages, seed_distance_formula};
use treebound::tree::path_tree;

fn main() {
    let phi = seed_distance_formula();
    let mut t = path_tree(6);
    t.labels_mut(0).insert("P0".into());

    let trace = evaluate_stages(&phi, &t).unwrap();
    for (alpha, stage) in trace.stages.iter().enumerate() {
        let members: Vec<String> = stage.iter().map(usize::to_string).collect();
        println!("stage {alpha}: {{{}}}", members.join(", "));
    }
    println!("closure ordinal: {}", trace.closure_ordinal());
    for v in t.vertices() {
        println!("vertex {v} enters at stage {:?}", trace.stage_of(v));
    }
}
