//! Decide boundedness of two fixpoint formulas over finite ternary trees:
//! a trivially bounded one and the unbounded path-reachability formula.

use treebound::fixpoint::{boundedness_search, seed_distance_formula, BoundednessStatus};
use treebound::formula::parse_formula;
use treebound::tree::print_tree;

fn main() {
    let top = parse_formula("true").unwrap();
    let verdict = boundedness_search(&top, 3).unwrap();
    assert_eq!(verdict.status, BoundednessStatus::Bounded(1));
    println!("true is bounded by 1");

    let path = seed_distance_formula();
    println!("path formula: {path}");
    let verdict = boundedness_search(&path, 4).unwrap();
    assert_eq!(verdict.status, BoundednessStatus::NotBoundedBy(4));
    for (t, v, alpha) in &verdict.witnesses {
        println!(
            "stage {alpha} needs {} vertices: marked vertex {v} in {}",
            t.len(),
            print_tree(t)
        );
    }
}
