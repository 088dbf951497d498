//! X-positive types compose: the type of a glued tree is determined by
//! the types of its parts (the composition homomorphism).

use treebound::tree::{add_under, path_tree};
use treebound::types::{build_basis, compose_add, compose_plus, compute_type, PositiveType};

fn main() {
    let basis = build_basis(1, &["P0"]).unwrap();
    println!("rank-1 basis over P0: {} formulas", basis.formulas.len());

    let left = path_tree(2).with_x_vertex(0).with_x_set([1].into());
    let right = path_tree(3).with_x_vertex(2).with_x_set([0, 1].into());
    let glued = add_under(&left, &right, None).unwrap();

    let ty_left = compute_type(&left, &basis).unwrap();
    let ty_right = compute_type(&right, &basis).unwrap();
    let composed = compose_add(&ty_left, &ty_right, &basis).unwrap();
    let direct = compute_type(&glued, &basis).unwrap();
    assert_eq!(composed, direct);
    println!("type of the glued tree matches the composed type");

    let joined = compose_plus(&ty_left, "c1", &ty_right, "c2", &basis).unwrap();
    assert_eq!(joined, composed);
    println!("joining at constants agrees with hanging under x");

    // The empty tree is right-neutral.
    assert_eq!(
        compose_add(&ty_left, &PositiveType::Empty, &basis).unwrap(),
        ty_left
    );
    println!("the empty tree is neutral on the right");
}
