//! Compilation of MSO formulas to deterministic bottom-up tree automata.
//!
//! The classical inductive construction: every first-order variable is
//! treated as a singleton set bit (with an "exactly one occurrence" guard
//! automaton at its binder), atoms become small letter- or marker-checking
//! automata, boolean connectives become products/complement, and
//! quantifiers become bit projection with eager determinization and
//! minimization.  Constants in the vocabulary (including the designated
//! `x`) are guarded at the top level, so two formulas compile to the same
//! canonical automaton exactly when they agree on all validly-marked trees.

use crate::automaton::{
    canonical, intersect, minimize, product, project, Child, TreeAutomaton,
};
use crate::formula::Formula;
use crate::{Error, Result};
use std::collections::BTreeSet;

/// Compile `phi` over the unary vocabulary `vocab` (label names, set
/// variables such as `X`, and constants such as `x`, `c1`, ...).
pub fn compile(phi: &Formula, vocab: &[String]) -> Result<TreeAutomaton> {
    let vocab_set: BTreeSet<String> = vocab.iter().cloned().collect();
    for name in phi.free_unary_names() {
        if !vocab_set.contains(&name) {
            return Err(Error::Invalid(format!(
                "free set/predicate name {name} not in the vocabulary"
            )));
        }
    }
    for name in phi.free_fo_names() {
        if !vocab_set.contains(&name) {
            return Err(Error::Invalid(format!(
                "free constant {name} not in the vocabulary"
            )));
        }
    }
    if has_rel(phi) {
        return Err(Error::Invalid(
            "general relation atoms cannot be compiled over trees".into(),
        ));
    }
    let mut used: BTreeSet<String> = vocab_set.clone();
    used.extend(phi.all_names());
    let mut counter = 0;
    let phi = phi.freshen_bound(&mut used, &mut counter);
    let mut a = compile_inner(&phi, &vocab_set)?;
    // Valid markings interpret each constant at exactly one vertex.
    for name in vocab {
        if name.starts_with(|c: char| c.is_ascii_lowercase()) {
            a = minimize(&intersect(&a, &exactly_one(&a.alphabet, name)?)?);
        }
    }
    Ok(canonical(&a))
}

fn has_rel(f: &Formula) -> bool {
    match f {
        Formula::Rel(..) => true,
        Formula::Not(g) => has_rel(g),
        Formula::And(fs) | Formula::Or(fs) => fs.iter().any(has_rel),
        Formula::ExFo(_, g)
        | Formula::AllFo(_, g)
        | Formula::ExSo(_, g)
        | Formula::AllSo(_, g) => has_rel(g),
        _ => false,
    }
}

fn alphabet_of(bits: &BTreeSet<String>) -> Vec<String> {
    bits.iter().cloned().collect()
}

fn compile_inner(f: &Formula, bits: &BTreeSet<String>) -> Result<TreeAutomaton> {
    let alphabet = alphabet_of(bits);
    match f {
        Formula::True => TreeAutomaton::all(alphabet),
        Formula::False => TreeAutomaton::none(alphabet),
        Formula::Pred(p, t) => {
            let tb = bit(&alphabet, t.name())?;
            let pb = alphabet.iter().position(|n| n == p);
            letter_test(alphabet, |l| {
                l & (1 << tb) == 0 || pb.map(|pb| l & (1 << pb) != 0).unwrap_or(false)
            })
        }
        Formula::Eq(a, b) => {
            let ab = bit(&alphabet, a.name())?;
            let bb = bit(&alphabet, b.name())?;
            letter_test(alphabet, |l| (l & (1 << ab) != 0) == (l & (1 << bb) != 0))
        }
        Formula::Edge(a, b) => {
            let ab = bit(&alphabet, a.name())?;
            let bb = bit(&alphabet, b.name())?;
            marker_atom(alphabet, ab, bb, None)
        }
        Formula::Succ(d, a, b) => {
            let ab = bit(&alphabet, a.name())?;
            let bb = bit(&alphabet, b.name())?;
            marker_atom(alphabet, ab, bb, Some(*d))
        }
        Formula::Rel(..) => Err(Error::Internal("relation atom reached the compiler".into())),
        Formula::Not(g) => Ok(compile_inner(g, bits)?.complement()),
        Formula::And(fs) => {
            let mut acc = TreeAutomaton::all(alphabet)?;
            for g in fs {
                acc = minimize(&intersect(&acc, &compile_inner(g, bits)?)?);
            }
            Ok(acc)
        }
        Formula::Or(fs) => {
            let mut acc = TreeAutomaton::none(alphabet)?;
            for g in fs {
                acc = minimize(&product(&acc, &compile_inner(g, bits)?, |x, y| x || y)?);
            }
            Ok(acc)
        }
        Formula::ExFo(v, g) => exists(g, bits, v, true),
        Formula::ExSo(v, g) => exists(g, bits, v, false),
        Formula::AllFo(v, g) => Ok(exists(&g.clone().not(), bits, v, true)?.complement()),
        Formula::AllSo(v, g) => Ok(exists(&g.clone().not(), bits, v, false)?.complement()),
    }
}

fn exists(body: &Formula, bits: &BTreeSet<String>, v: &str, first_order: bool) -> Result<TreeAutomaton> {
    let mut inner_bits = bits.clone();
    inner_bits.insert(v.to_string());
    let mut a = compile_inner(body, &inner_bits)?;
    if first_order {
        a = minimize(&intersect(&a, &exactly_one(&a.alphabet, v)?)?);
    }
    Ok(minimize(&project(&a, v)?))
}

fn bit(alphabet: &[String], name: &str) -> Result<usize> {
    alphabet
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Internal(format!("name {name} missing from the alphabet")))
}

/// One-state automaton accepting trees in which every vertex letter passes
/// `test`; vacuously accepts the empty tree.
fn letter_test(alphabet: Vec<String>, test: impl Fn(u64) -> bool) -> Result<TreeAutomaton> {
    let mut a = TreeAutomaton::none(alphabet)?;
    a.states = 1;
    a.accepting = [0].into();
    a.accepts_empty = true;
    for l in 0..a.letter_count() {
        if !test(l) {
            continue;
        }
        for updir in 0..=3u8 {
            for mask in 0..8usize {
                let mut children: [Child; 3] = [None, None, None];
                for (i, slot) in children.iter_mut().enumerate() {
                    if mask & (1 << i) != 0 {
                        *slot = Some(0);
                    }
                }
                a.transitions.insert((l, updir, children), 0);
            }
        }
    }
    Ok(a)
}

// States of the adjacency and direction atoms.
const CLEAN: usize = 0;
const JUST_A: usize = 1; // the a-marked vertex heads this subtree
const JUST_B: usize = 2; // the b-marked vertex heads this subtree
const DONE: usize = 3;

/// Automaton for `E a b` (when `dir` is `None`) or `succ_d a b` (when
/// `dir` is `Some(d)`), where `a`/`b` are singleton bits.
fn marker_atom(alphabet: Vec<String>, ab: usize, bb: usize, dir: Option<u8>) -> Result<TreeAutomaton> {
    let mut a = TreeAutomaton::none(alphabet)?;
    a.states = 4;
    a.accepting = [DONE].into();
    for l in 0..a.letter_count() {
        let ma = l & (1 << ab) != 0;
        let mb = l & (1 << bb) != 0;
        for updir in 0..=3u8 {
            for code in 0..(5usize.pow(3)) {
                let mut children: [Child; 3] = [None, None, None];
                let mut c = code;
                for slot in children.iter_mut() {
                    let digit = c % 5;
                    c /= 5;
                    if digit > 0 {
                        *slot = Some(digit - 1);
                    }
                }
                let target = match dir {
                    None => edge_target(ma, mb, &children),
                    Some(d) => succ_target(ma, mb, updir, d, &children),
                };
                if let Some(q) = target {
                    a.transitions.insert((l, updir, children), q);
                }
            }
        }
    }
    Ok(a)
}

fn counts(children: &[Child; 3]) -> [usize; 4] {
    let mut n = [0usize; 4];
    for c in children.iter().flatten() {
        n[*c] += 1;
    }
    n
}

/// `E a b`: the two marked vertices must be adjacent.  A `JUST_A`/`JUST_B`
/// child whose parent does not carry the other mark can never become
/// adjacent to it, so such runs die.
fn edge_target(ma: bool, mb: bool, children: &[Child; 3]) -> Option<usize> {
    let [_, na, nb, nd] = counts(children);
    match (ma, mb) {
        (true, true) => None, // a single vertex is not self-adjacent
        (true, false) => match (na, nb, nd) {
            (0, 0, 0) => Some(JUST_A),
            (0, 1, 0) => Some(DONE),
            _ => None,
        },
        (false, true) => match (na, nb, nd) {
            (0, 0, 0) => Some(JUST_B),
            (1, 0, 0) => Some(DONE),
            _ => None,
        },
        (false, false) => match (na, nb, nd) {
            (0, 0, 0) => Some(CLEAN),
            (0, 0, 1) => Some(DONE),
            _ => None,
        },
    }
}

/// `succ_d a b`: the a-marked vertex's neighbor in direction `d` must be
/// the b-marked vertex.  From a's node that neighbor is either the child
/// in slot `d` or, when a's updir is `d`, the parent.
fn succ_target(ma: bool, mb: bool, updir: u8, d: u8, children: &[Child; 3]) -> Option<usize> {
    let [_, na, nb, nd] = counts(children);
    let slot_d = children[d as usize - 1];
    match (ma, mb) {
        (true, true) => None,
        (true, false) => {
            if nb == 1 {
                // The only permitted non-clean child is a JUST_B in slot d.
                (slot_d == Some(JUST_B) && na == 0 && nd == 0).then_some(DONE)
            } else {
                (na == 0 && nd == 0 && slot_d.is_none() && updir == d).then_some(JUST_A)
            }
        }
        (false, true) => match (na, nb, nd) {
            (0, 0, 0) => Some(JUST_B),
            (1, 0, 0) => Some(DONE), // the JUST_A child's updir was d
            _ => None,
        },
        (false, false) => match (na, nb, nd) {
            (0, 0, 0) => Some(CLEAN),
            (0, 0, 1) => Some(DONE),
            _ => None,
        },
    }
}

/// Guard: the bit `name` is set at exactly one vertex.
pub fn exactly_one(alphabet: &[String], name: &str) -> Result<TreeAutomaton> {
    let pos = bit(alphabet, name)?;
    let mut a = TreeAutomaton::none(alphabet.to_vec())?;
    a.states = 2;
    a.accepting = [1].into();
    for l in 0..a.letter_count() {
        let m = usize::from(l & (1 << pos) != 0);
        for updir in 0..=3u8 {
            for code in 0..(3usize.pow(3)) {
                let mut children: [Child; 3] = [None, None, None];
                let mut c = code;
                let mut total = m;
                for slot in children.iter_mut() {
                    let digit = c % 3;
                    c /= 3;
                    if digit > 0 {
                        *slot = Some(digit - 1);
                        total += digit - 1;
                    }
                }
                if total <= 1 {
                    a.transitions.insert((l, updir, children), total);
                }
            }
        }
    }
    Ok(a)
}

/// Compile over a vocabulary given as string slices.
pub fn compile_str(phi: &Formula, vocab: &[&str]) -> Result<TreeAutomaton> {
    let v: Vec<String> = vocab.iter().map(|s| s.to_string()).collect();
    compile(phi, &v)
}

/// All (tree, X-subset, x-vertex) variants of `t` needed to exercise a
/// formula with free `X`/`x` over the trees of a corpus.
pub fn marked_variants(t: &crate::tree::TreeStructure, with_x_set: bool, with_x_vertex: bool) -> Vec<crate::tree::TreeStructure> {
    let mut out = Vec::new();
    let subsets: Vec<BTreeSet<usize>> = if with_x_set {
        crate::tree::vertex_subsets(t.len())
    } else {
        vec![BTreeSet::new()]
    };
    for s in subsets {
        let base = if with_x_set {
            let mut b = t.clone();
            b.set_x_set(Some(s));
            b
        } else {
            t.clone()
        };
        if with_x_vertex {
            for v in 0..t.len() {
                out.push(base.clone().with_x_vertex(v));
            }
        } else {
            out.push(base);
        }
    }
    out
}

/// Check model_check/automaton agreement of `phi` over every tree of the
/// corpus (with all X/x markings that the formula's free names require);
/// returns the number of instances checked.
pub fn cross_check(
    phi: &Formula,
    vocab: &[String],
    trees: &[crate::tree::TreeStructure],
) -> Result<usize> {
    let a = compile(phi, vocab)?;
    let needs_x_set = phi.free_unary_names().contains("X");
    let needs_x = phi.free_fo_names().contains("x");
    let mut n = 0;
    for t in trees {
        if needs_x && t.is_empty() {
            continue;
        }
        for m in marked_variants(t, needs_x_set, needs_x) {
            let want = crate::structure::model_check(&m, phi)?;
            let got = a.accepts(&m);
            if want != got {
                return Err(Error::Internal(format!(
                    "oracle disagreement on {} (evaluator {want}, automaton {got})",
                    crate::tree::print_tree(&m)
                )));
            }
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{equivalent, find_witness, is_empty};
    use crate::formula::parse_formula;
    use crate::tree::{enumerate_trees, TreeStructure};

    fn voc(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn truth_and_falsity() {
        let top = compile_str(&parse_formula("true").unwrap(), &["P0"]).unwrap();
        let bot = compile_str(&parse_formula("false").unwrap(), &["P0"]).unwrap();
        assert_eq!(minimize(&top).states, 1);
        assert!(is_empty(&bot));
        for t in enumerate_trees(3, &voc(&["P0"]), 10_000).unwrap() {
            assert!(top.accepts(&t));
        }
    }

    #[test]
    fn existential_predicate_agrees_with_oracle() {
        let phi = parse_formula("(ex y (P0 y))").unwrap();
        let n = cross_check(&phi, &voc(&["P0"]), &enumerate_trees(4, &voc(&["P0"]), 10_000).unwrap()).unwrap();
        assert!(n > 20);
    }

    #[test]
    fn so_quantifier_accepts_nonempty_trees() {
        let phi = parse_formula("(all2 Y (or (not (all y (Y y))) (ex y (Y y))))").unwrap();
        let a = compile_str(&phi, &[]).unwrap();
        assert!(!a.accepts(&TreeStructure::empty()));
        for t in enumerate_trees(4, &[], 10_000).unwrap() {
            assert_eq!(a.accepts(&t), !t.is_empty());
        }
    }

    #[test]
    fn free_x_and_big_x_agree_with_oracle() {
        let phi = parse_formula("(or (P0 x) (ex y (and (E x y) (X y))))").unwrap();
        let trees = enumerate_trees(3, &voc(&["P0"]), 10_000).unwrap();
        let n = cross_check(&phi, &voc(&["P0", "X", "x"]), &trees).unwrap();
        assert!(n > 100);
    }

    #[test]
    fn direction_atoms_agree_with_oracle_and_are_root_invariant() {
        let phi = parse_formula("(ex y (succ1 x y))").unwrap();
        let trees = enumerate_trees(3, &[], 10_000).unwrap();
        cross_check(&phi, &voc(&["x"]), &trees).unwrap();
        let a = compile_str(&phi, &["x"]).unwrap();
        for t in &trees {
            for v in 0..t.len() {
                let m = t.clone().with_x_vertex(0);
                assert_eq!(a.accepts_at(&m, v), a.accepts(&m), "rooting changed the verdict");
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_irreflexive() {
        let xy = compile_str(&parse_formula("(E x c1)").unwrap(), &["x", "c1"]).unwrap();
        let yx = compile_str(&parse_formula("(E c1 x)").unwrap(), &["x", "c1"]).unwrap();
        assert_eq!(xy, yx);
        let self_edge = compile_str(&parse_formula("(and (eq x c1) (E x c1))").unwrap(), &["x", "c1"]).unwrap();
        assert!(is_empty(&self_edge));
    }

    #[test]
    fn projection_matches_explicit_so_quantifier() {
        let body = parse_formula("(ex y (and (Y y) (P0 y)))").unwrap();
        let quantified = parse_formula("(ex2 Y (ex y (and (Y y) (P0 y))))").unwrap();
        let a = compile_str(&body, &["P0", "Y"]).unwrap();
        let b = compile_str(&quantified, &["P0"]).unwrap();
        assert_eq!(canonical(&project(&a, "Y").unwrap()), b);
        assert!(equivalent(&b, &compile_str(&parse_formula("(ex y (P0 y))").unwrap(), &["P0"]).unwrap()).unwrap());
    }

    #[test]
    fn nnf_compiles_to_the_same_canonical_automaton() {
        for src in [
            "(not (ex y (and (P0 y) (not (X y)))))",
            "(not (all y (or (not (E y x)) (X y))))",
            "(not (ex2 Y (all y (Y y))))",
        ] {
            let phi = parse_formula(src).unwrap();
            let v = voc(&["P0", "X", "x"]);
            assert_eq!(compile(&phi, &v).unwrap(), compile(&phi.nnf(), &v).unwrap());
        }
    }

    #[test]
    fn witness_of_a_satisfiable_sentence_is_minimal() {
        let phi = parse_formula("(and (ex y (P0 y)) (ex y (not (P0 y))))").unwrap();
        let a = compile_str(&phi, &["P0"]).unwrap();
        let w = find_witness(&a).unwrap();
        assert_eq!(w.len(), 2);
        assert!(crate::structure::model_check(&w, &phi).unwrap());
    }

    #[test]
    fn unknown_names_are_rejected() {
        let phi = parse_formula("(ex y (P9 y))").unwrap();
        assert!(matches!(compile_str(&phi, &["P0"]), Err(Error::Invalid(_))));
        let phi = parse_formula("(P0 c7)").unwrap();
        assert!(matches!(compile_str(&phi, &["P0"]), Err(Error::Invalid(_))));
    }
}
