//! Definition schemes: apply one to a structure, translate a formula
//! through it, and transfer a boundedness question across it.

use treebound::formula::parse_formula_with_free;
use treebound::interp::{
    apply_scheme, fcns_encode, fcns_scheme, subclass_scheme, transfer_boundedness,
    translate_formula, tree_identity_scheme,
};
use treebound::structure::{eval, isomorphic, Env};
use treebound::tree::path_tree;

fn main() {
    // Decode a first-child/next-sibling encoding back to the original graph.
    let mut tree = path_tree(4);
    tree.labels_mut(1).insert("A".into());
    let host = tree.to_structure();
    let encoded = fcns_encode(&host).unwrap();
    let scheme = fcns_scheme(&["A", "P0"]);
    let decoded = apply_scheme(&scheme, &encoded.to_structure())
        .unwrap()
        .defined()
        .cloned()
        .unwrap();
    let mut bare = host.clone();
    bare.relations.remove("R");
    assert!(isomorphic(&decoded, &bare));
    println!("first-child/next-sibling encoding decodes back to the source");

    // Translating a sentence through a scheme evaluates it on the image.
    let psi = parse_formula_with_free("(ex y (A y))", &[]).unwrap();
    let translated = translate_formula(&scheme, &psi).unwrap();
    let on_image = eval(&decoded, &psi, &Env::default()).unwrap();
    let on_host = eval(&encoded.to_structure(), &translated, &Env::default()).unwrap();
    assert_eq!(on_image, on_host);
    println!("translated formula agrees with evaluation on the image: {on_image}");

    // Boundedness transfers along a scheme onto a subclass of trees.
    let base = tree_identity_scheme(&["P0"]);
    let guard = parse_formula_with_free("(all u (not (P0 u)))", &[]).unwrap();
    let restricted = subclass_scheme(&base, guard);
    let phi = parse_formula_with_free("(or (P0 x) (ex y (and (E x y) (X y))))", &[]).unwrap();
    let verdict = transfer_boundedness(&restricted, &phi, 3).unwrap();
    println!("verdict on the P0-free subclass: {:?}", verdict.status);
}
