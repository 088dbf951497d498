//! Deciding boundedness of monadic least fixed points over finite
//! edge-colored ternary trees.
//!
//! The library exposes:
//!
//! * [`formula`] — an MSO formula AST with one designated monadic fixpoint
//!   variable `X` and one designated first-order constant `x`, an
//!   S-expression surface syntax, negation normal form, positivity checking,
//!   substitution and syntactic stage unfolding.
//! * [`tree`] — finite undirected ternary trees whose edges carry an
//!   independent direction in {1,2,3} at each endpoint, together with the
//!   concatenation / splitting / grafting algebra and isomorphism-canonical
//!   forms.
//! * [`structure`] — plain relational structures and a brute-force MSO
//!   evaluator, used as the independent oracle throughout the test suite.
//! * [`automaton`] / [`compile`] — deterministic bottom-up tree automata
//!   over rooted direction-indexed encodings, compiled inductively from
//!   formulas, with boolean operations, projection, minimization and
//!   emptiness testing with minimal witnesses.
//! * [`fixpoint`] — stage evaluation, bounded-by checks and boundedness
//!   search over tree classes, with two cross-checked backends.
//! * [`types`] — X-positive types of bounded quantifier rank and their
//!   composition under tree concatenation and grafting.
//! * [`annotation`] — tiles, tilings, histories, annotated trees, sections,
//!   dependency ranks and proposals.
//! * [`weighted`] — weighted tree automata, cost evaluation, a limitedness
//!   probe, and the path-counting automaton whose cost sandwiches dependency
//!   ranks between ⌈½·log₂ r⌉ and r.
//! * [`interp`] — MSO definition schemes, formula translation along
//!   interpretations, boundedness transfer, and the tree-width-k encoding of
//!   graphs into ternary trees.

pub mod annotation;
pub mod automaton;
pub mod compile;
pub mod fixpoint;
pub mod formula;
pub mod interp;
pub mod structure;
pub mod tree;
pub mod types;
pub mod weighted;

use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (formula, tree, automaton or structure files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid object (not a tree, inconsistent directions,
    /// automaton not deterministic, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The formula is not positive in the fixpoint variable where
    /// positivity is required.
    #[error("formula is not positive in {0}")]
    NotPositive(String),

    /// A configured resource cap (state count, basis size, structure size)
    /// was exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// An internal invariant failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
