//! Stage evaluation of X-positive formulas on concrete trees, closure
//! ordinals, and the exact per-stage boundedness decision over the class
//! of all finite ternary trees.
//!
//! A formula φ(X, x) that is positive in X induces a monotone operator
//! on vertex sets; its stages are X₀ = ∅, X_{α+1} = { v : (T, X_α, v) ⊨ φ }.
//! On a finite tree the stages stabilize after at most |T| steps.  φ is
//! bounded by α over all finite trees when stage α+1 never adds a vertex;
//! that is decided exactly by compiling the stage-difference formula and
//! testing automaton emptiness.

use crate::automaton::find_witness;
use crate::compile::compile;
use crate::formula::{unfold_stage, Formula};
use crate::structure::model_check;
use crate::tree::{TreeStructure, Vertex};
use crate::{Error, Result};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTrace {
    /// stages[α] = φ^α(T); strictly increasing except for the final two
    /// entries, which are equal.
    pub stages: Vec<BTreeSet<Vertex>>,
}

impl StageTrace {
    pub fn closure_ordinal(&self) -> usize {
        self.stages.len() - 2
    }

    pub fn fixpoint(&self) -> &BTreeSet<Vertex> {
        self.stages.last().unwrap()
    }

    /// Least α with v ∈ φ^{α+1}(T); `None` when v never enters.
    pub fn stage_of(&self, v: Vertex) -> Option<usize> {
        self.stages
            .iter()
            .skip(1)
            .position(|s| s.contains(&v))
    }
}

fn ensure_positive(phi: &Formula) -> Result<()> {
    if phi.is_positive_in("X") {
        Ok(())
    } else {
        Err(Error::NotPositive(
            "the formula is not positive in X".into(),
        ))
    }
}

fn iterate_stages(
    t: &TreeStructure,
    mut holds: impl FnMut(&TreeStructure) -> Result<bool>,
) -> Result<StageTrace> {
    let mut stages = vec![BTreeSet::new()];
    loop {
        let current = stages.last().unwrap().clone();
        let mut next = BTreeSet::new();
        for v in t.vertices() {
            let mut m = t.clone();
            m.set_x_set(Some(current.clone()));
            let m = m.with_x_vertex(v);
            if holds(&m)? {
                next.insert(v);
            }
        }
        let done = next == *stages.last().unwrap();
        stages.push(next);
        if done {
            return Ok(StageTrace { stages });
        }
    }
}

/// Stage iteration by direct semantic evaluation.
pub fn evaluate_stages(phi: &Formula, t: &TreeStructure) -> Result<StageTrace> {
    ensure_positive(phi)?;
    iterate_stages(t, |m| model_check(m, phi))
}

/// Stage iteration through the compiled automaton (X and x as alphabet
/// bits, rerun per stage); the independent backend for cross-checks.
pub fn evaluate_stages_automaton(phi: &Formula, t: &TreeStructure) -> Result<StageTrace> {
    ensure_positive(phi)?;
    let mut vocab: BTreeSet<String> = phi.free_unary_names();
    vocab.insert("X".into());
    vocab.insert("x".into());
    vocab.extend(phi.free_fo_names());
    let vocab: Vec<String> = vocab.into_iter().collect();
    let a = compile(phi, &vocab)?;
    iterate_stages(t, |m| Ok(a.accepts(m)))
}

/// The stage-difference sentence φ^{α+1}(x) ∧ ¬φ^α(x).
pub fn stage_difference(phi: &Formula, alpha: usize) -> Result<Formula> {
    let lo = unfold_stage(phi, alpha, true)?;
    let hi = unfold_stage(phi, alpha + 1, true)?;
    Ok(Formula::and(vec![hi, lo.not()]))
}

/// `Ok(None)`: φ is bounded by α over all finite ternary trees (exact).
/// `Ok(Some(t))`: a size-minimal tree whose x-vertex has stage exactly α.
pub fn check_bounded_by(phi: &Formula, alpha: usize) -> Result<Option<TreeStructure>> {
    ensure_positive(phi)?;
    let psi = stage_difference(phi, alpha)?;
    let mut vocab: BTreeSet<String> = psi.free_unary_names();
    vocab.extend(psi.free_fo_names());
    vocab.insert("x".into());
    let vocab: Vec<String> = vocab.into_iter().collect();
    let a = compile(&psi, &vocab)?;
    Ok(find_witness(&a))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundednessStatus {
    /// Exact over the class of all finite ternary trees.
    Bounded(usize),
    /// Every α ≤ budget fails; inconclusive about true unboundedness.
    NotBoundedBy(usize),
}

#[derive(Debug, Clone)]
pub struct BoundednessVerdict {
    pub status: BoundednessStatus,
    /// For each α that failed: a minimal tree whose marked vertex has
    /// stage exactly α.
    pub witnesses: Vec<(TreeStructure, Vertex, usize)>,
}

/// Try α = 0, 1, …, budget in order; the first success is the least bound.
pub fn boundedness_search(phi: &Formula, budget: usize) -> Result<BoundednessVerdict> {
    ensure_positive(phi)?;
    let mut witnesses = Vec::new();
    for alpha in 0..=budget {
        match check_bounded_by(phi, alpha)? {
            None => {
                return Ok(BoundednessVerdict {
                    status: BoundednessStatus::Bounded(alpha),
                    witnesses,
                })
            }
            Some(t) => {
                let v = t.x_vertex().ok_or_else(|| {
                    Error::Internal("stage witness lacks a marked vertex".into())
                })?;
                witnesses.push((t, v, alpha));
            }
        }
    }
    Ok(BoundednessVerdict {
        status: BoundednessStatus::NotBoundedBy(budget),
        witnesses,
    })
}

/// The undirected reachability formula used throughout the tests: x is in
/// the new stage when it is a seed (P0) or adjacent to the current stage.
/// Its stages grow by graph distance from the seeds, so it is unbounded
/// over paths with a single seeded end.
pub fn seed_distance_formula() -> Formula {
    crate::formula::parse_formula("(or (P0 x) (ex y (and (E x y) (X y))))").unwrap()
}

/// A 9-vertex path with P0 at both endpoints: closure ordinal 5, middle
/// vertex entering last at stage 4.
pub fn nine_path_both_ends_seeded() -> TreeStructure {
    let mut t = crate::tree::path_tree(9);
    t.labels_mut(0).insert("P0".into());
    t.labels_mut(8).insert("P0".into());
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::tree::{enumerate_trees, path_tree};

    #[test]
    fn top_formula_saturates_in_one_step() {
        let phi = parse_formula("true").unwrap();
        let trace = evaluate_stages(&phi, &path_tree(4)).unwrap();
        assert_eq!(trace.stages.len(), 3);
        assert_eq!(trace.closure_ordinal(), 1);
        assert_eq!(trace.fixpoint().len(), 4);
        assert_eq!(trace.stage_of(2), Some(0));
    }

    #[test]
    fn x_atom_has_empty_fixpoint() {
        let phi = parse_formula("(X x)").unwrap();
        let trace = evaluate_stages(&phi, &path_tree(3)).unwrap();
        assert_eq!(trace.closure_ordinal(), 0);
        assert!(trace.fixpoint().is_empty());
        assert_eq!(trace.stage_of(1), None);
    }

    #[test]
    fn non_positive_formula_is_rejected() {
        let phi = parse_formula("(not (X x))").unwrap();
        assert!(matches!(
            evaluate_stages(&phi, &path_tree(2)),
            Err(Error::NotPositive(_))
        ));
    }

    #[test]
    fn nine_path_closure_ordinal_and_middle_stage() {
        let trace = evaluate_stages(&seed_distance_formula(), &nine_path_both_ends_seeded()).unwrap();
        assert_eq!(trace.closure_ordinal(), 5);
        assert_eq!(trace.stage_of(4), Some(4));
        assert_eq!(trace.stage_of(0), Some(0));
        assert_eq!(trace.fixpoint().len(), 9);
    }

    #[test]
    fn backends_agree_and_stages_are_monotone() {
        let formulas = [
            seed_distance_formula(),
            parse_formula("(and (X x) (P0 x))").unwrap(),
            parse_formula("(all y (or (not (E y x)) (X y)))").unwrap(),
        ];
        let mut trees = enumerate_trees(4, &["P0".to_string()], 100_000).unwrap();
        trees.truncate(40);
        for phi in &formulas {
            for t in &trees {
                let a = evaluate_stages(phi, t).unwrap();
                let b = evaluate_stages_automaton(phi, t).unwrap();
                assert_eq!(a, b);
                for w in a.stages.windows(2) {
                    assert!(w[0].is_subset(&w[1]));
                }
                assert!(a.closure_ordinal() <= t.len());
            }
        }
    }

    #[test]
    fn unfolded_stage_formulas_define_the_stages() {
        let phi = seed_distance_formula();
        let mut trees = enumerate_trees(4, &["P0".to_string()], 100_000).unwrap();
        trees.truncate(25);
        for t in &trees {
            let trace = evaluate_stages(&phi, t).unwrap();
            for alpha in 0..=3usize.min(trace.stages.len() - 1) {
                let stage_formula = unfold_stage(&phi, alpha, true).unwrap();
                let mut by_formula = BTreeSet::new();
                for v in t.vertices() {
                    let m = t.clone().with_x_vertex(v);
                    if model_check(&m, &stage_formula).unwrap() {
                        by_formula.insert(v);
                    }
                }
                let want = trace.stages[alpha.min(trace.stages.len() - 1)].clone();
                assert_eq!(by_formula, want);
            }
        }
    }

    #[test]
    fn top_is_bounded_by_one_but_not_zero() {
        let phi = parse_formula("true").unwrap();
        assert!(check_bounded_by(&phi, 1).unwrap().is_none());
        let w = check_bounded_by(&phi, 0).unwrap().unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn x_free_formula_is_bounded_by_one() {
        let phi = parse_formula("(P0 x)").unwrap();
        let verdict = boundedness_search(&phi, 3).unwrap();
        assert_eq!(verdict.status, BoundednessStatus::Bounded(1));
        assert_eq!(verdict.witnesses.len(), 1); // the α = 0 failure
    }

    #[test]
    fn seed_distance_formula_is_not_bounded() {
        let phi = seed_distance_formula();
        let w = check_bounded_by(&phi, 3).unwrap().expect("must fail");
        assert!(w.len() >= 4, "a stage-3 vertex needs distance 3 from every seed");
        let trace = evaluate_stages(&phi, &w).unwrap();
        assert_eq!(trace.stage_of(w.x_vertex().unwrap()), Some(3));

        let verdict = boundedness_search(&phi, 3).unwrap();
        assert_eq!(verdict.status, BoundednessStatus::NotBoundedBy(3));
        for (t, v, alpha) in &verdict.witnesses {
            let trace = evaluate_stages(&phi, t).unwrap();
            assert_eq!(trace.stage_of(*v), Some(*alpha));
            assert!(t.len() <= 2 * alpha + 3);
        }
    }

    #[test]
    fn bounded_verdicts_hold_on_small_trees() {
        // Vertices adjacent to a seed, fed back through X: stabilizes at 2.
        let phi = parse_formula("(or (P0 x) (ex y (and (E x y) (P0 y))))").unwrap();
        let verdict = boundedness_search(&phi, 3).unwrap();
        assert_eq!(verdict.status, BoundednessStatus::Bounded(1));
        for t in enumerate_trees(4, &["P0".to_string()], 100_000).unwrap() {
            let trace = evaluate_stages(&phi, &t).unwrap();
            assert!(trace.closure_ordinal() <= 1);
        }
    }
}
