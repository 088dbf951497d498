//! X-positive n-types and their composition algebra.
//!
//! Two representations are maintained and cross-validated:
//!
//! * [`TypeTower`] — a structural rank-n type: the full atomic diagram over a
//!   set of named constants together with the set of rank-(n-1) types realized
//!   by one extra vertex and the set of rank-(n-1) types realized by one extra
//!   unary set. Composition ([`compose_towers`]) is the literal
//!   Feferman–Vaught recursion: the diagram of a disjoint sum joined by one
//!   edge is the join of the diagrams, the realized set of the sum is built
//!   from the realized sets of the parts, and the set-extension types compose
//!   pairwise. Towers decide every formula of quantifier rank ≤ n
//!   ([`TypeTower::satisfies`]); the positive-type order [`pos_le`] compares
//!   only what X-positive formulae can see.
//!
//! * [`PositiveType`] — an extensional bit-set over a finite [`TypeBasis`] of
//!   canonical X-positive formulae, each backed by a compiled tree automaton.
//!   [`compute_type`] reads the bits off the automata; [`compose_plus`] and
//!   [`compose_add`] evaluate the basis against composed towers, so the
//!   automaton route and the recursion route check each other.
//!
//! The type vocabulary is direction-free: types see the symmetric edge
//! relation, unary labels, X, and constants, never `succ_d`. Edge colours are
//! invisible to composition, which is what makes the operations well-defined
//! on types.

use crate::automaton::{canonical, TreeAutomaton};
use crate::compile::compile;
use crate::formula::{parse_formula, Formula, Term};
use crate::tree::{concat, TreeStructure, Vertex};
#[cfg(test)]
use crate::tree::{enumerate_trees, vertex_subsets};
use crate::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Mutex;

/// Reserved constant name for the vertex added by a first-order quantifier.
pub const EXT_VERTEX: &str = "y";
/// Reserved unary marker for the set added by a second-order quantifier.
pub const EXT_SET: &str = "Y";
/// Reserved constant name for the root of a right-hand composition operand.
pub const RIGHT_ROOT: &str = "x2";

// ---------------------------------------------------------------------------
// Structural types: diagrams and towers
// ---------------------------------------------------------------------------

/// Atomic diagram of a structure over an ordered list of named constants:
/// unary labels, X-membership, equality, and adjacency between constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagram {
    /// Constant names, sorted; all other fields are indexed by position here.
    pub consts: Vec<String>,
    pub labels: Vec<BTreeSet<String>>,
    pub x_bits: Vec<bool>,
    /// Pairs (i, j) with i < j of constants naming the same vertex.
    pub eq: BTreeSet<(usize, usize)>,
    /// Pairs (i, j) with i < j of adjacent constants.
    pub edge: BTreeSet<(usize, usize)>,
}

impl Diagram {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.consts.iter().position(|c| c == name)
    }

    pub fn same_vertex(&self, i: usize, j: usize) -> bool {
        i == j || self.eq.contains(&(i.min(j), i.max(j)))
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        i != j && self.edge.contains(&(i.min(j), i.max(j)))
    }
}

/// Structural rank-n type. Rank 0 is the diagram alone; rank n ≥ 1 adds the
/// set of rank-(n-1) types realized by extending the constants with one
/// vertex (named [`EXT_VERTEX`]) and with one unary set (marked [`EXT_SET`]).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TypeTower {
    pub rank: usize,
    pub diag: Diagram,
    pub realized: BTreeSet<TypeTower>,
    pub so: BTreeSet<TypeTower>,
}

fn diagram_of(t: &TreeStructure, consts: &[(String, Vertex)]) -> Diagram {
    let mut consts = consts.to_vec();
    consts.sort();
    let names: Vec<String> = consts.iter().map(|(n, _)| n.clone()).collect();
    let mut labels = Vec::new();
    let mut x_bits = Vec::new();
    for &(_, v) in &consts {
        labels.push(t.labels(v).clone());
        x_bits.push(t.in_x(v));
    }
    let mut eq = BTreeSet::new();
    let mut edge = BTreeSet::new();
    for i in 0..consts.len() {
        for j in i + 1..consts.len() {
            if consts[i].1 == consts[j].1 {
                eq.insert((i, j));
            }
            if t.adjacent(consts[i].1, consts[j].1) {
                edge.insert((i, j));
            }
        }
    }
    Diagram { consts: names, labels, x_bits, eq, edge }
}

/// Compute the structural rank-n type of a tree with the given named
/// constants. The empty tree is admitted with an empty constant list; its
/// realized set is empty, which is exactly what makes `∀y ⊥` hold there.
///
/// Rank ≥ 2 would require enumerating the 2^|T| set extensions and is
/// refused.
pub fn tower_of(t: &TreeStructure, rank: usize, consts: &[(String, Vertex)]) -> Result<TypeTower> {
    if rank >= 2 {
        return Err(Error::Resource(
            "structural types are capped at rank 1 (rank 2 requires set-extension enumeration)"
                .into(),
        ));
    }
    for &(ref n, v) in consts {
        if v >= t.len() {
            return Err(Error::Invalid(format!("constant {n} out of range")));
        }
        if n == EXT_SET {
            return Err(Error::Invalid(format!("{EXT_SET} is a reserved marker name")));
        }
    }
    let diag = diagram_of(t, consts);
    let mut realized = BTreeSet::new();
    let mut so = BTreeSet::new();
    if rank >= 1 {
        if consts.iter().any(|(n, _)| n == EXT_VERTEX) {
            return Err(Error::Invalid(format!(
                "{EXT_VERTEX} is reserved for quantifier extensions"
            )));
        }
        for w in t.vertices() {
            let mut ext = consts.to_vec();
            ext.push((EXT_VERTEX.to_string(), w));
            realized.insert(tower_of(t, rank - 1, &ext)?);
        }
        // Rank-0 set extensions only see the set through the constants, and
        // two constants naming the same vertex must agree, so the realized
        // set-extension types are exactly the marker assignments to the
        // equality classes of the constants.
        let classes = const_classes(&diag);
        for mask in 0u32..(1 << classes.len()) {
            let mut d = diag.clone();
            for (k, class) in classes.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    for &i in class {
                        d.labels[i].insert(EXT_SET.to_string());
                    }
                }
            }
            so.insert(TypeTower {
                rank: 0,
                diag: d,
                realized: BTreeSet::new(),
                so: BTreeSet::new(),
            });
        }
    }
    Ok(TypeTower { rank, diag, realized, so })
}

/// Convenience: the type of an x-rooted tree over the single constant x.
pub fn x_rooted_tower(t: &TreeStructure, rank: usize) -> Result<TypeTower> {
    if t.is_empty() {
        return tower_of(t, rank, &[]);
    }
    let v = t
        .x_vertex()
        .ok_or_else(|| Error::Invalid("tree does not interpret x".into()))?;
    tower_of(t, rank, &[("x".to_string(), v)])
}

/// Equality classes of the constants under the diagram's eq relation, each
/// class listed as sorted indices, classes ordered by least member.
fn const_classes(d: &Diagram) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..d.consts.len() {
        match classes.iter_mut().find(|c| d.same_vertex(c[0], i)) {
            Some(c) => c.push(i),
            None => classes.push(vec![i]),
        }
    }
    classes
}

/// Restrict a type to a lower rank by truncating the tower.
pub fn restrict_tower(t: &TypeTower, rank: usize) -> TypeTower {
    assert!(rank <= t.rank);
    if rank == t.rank {
        return t.clone();
    }
    let realized = if rank == 0 {
        BTreeSet::new()
    } else {
        t.realized.iter().map(|r| restrict_tower(r, rank - 1)).collect()
    };
    let so = if rank == 0 {
        BTreeSet::new()
    } else {
        t.so.iter().map(|s| restrict_tower(s, rank - 1)).collect()
    };
    TypeTower { rank, diag: t.diag.clone(), realized, so }
}

fn rename_diagram(d: &Diagram, from: &str, to: &str) -> Result<Diagram> {
    if d.index_of(to).is_some() {
        return Err(Error::Invalid(format!("constant {to} already present")));
    }
    let old = d.consts.clone();
    let mut names: Vec<String> = old
        .iter()
        .map(|n| if n == from { to.to_string() } else { n.clone() })
        .collect();
    names.sort();
    // Map old index -> new index through the renamed name.
    let reindex: Vec<usize> = old
        .iter()
        .map(|n| {
            let n2 = if n == from { to } else { n.as_str() };
            names.iter().position(|m| m == n2).unwrap()
        })
        .collect();
    let mut labels = vec![BTreeSet::new(); names.len()];
    let mut x_bits = vec![false; names.len()];
    for (i, &j) in reindex.iter().enumerate() {
        labels[j] = d.labels[i].clone();
        x_bits[j] = d.x_bits[i];
    }
    let remap_pairs = |pairs: &BTreeSet<(usize, usize)>| {
        pairs
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (reindex[i], reindex[j]);
                (a.min(b), a.max(b))
            })
            .collect()
    };
    Ok(Diagram {
        consts: names,
        labels,
        x_bits,
        eq: remap_pairs(&d.eq),
        edge: remap_pairs(&d.edge),
    })
}

/// Rename a constant throughout the tower.
pub fn rename_tower_const(t: &TypeTower, from: &str, to: &str) -> Result<TypeTower> {
    let diag = rename_diagram(&t.diag, from, to)?;
    let realized = t
        .realized
        .iter()
        .map(|r| rename_tower_const(r, from, to))
        .collect::<Result<_>>()?;
    let so = t
        .so
        .iter()
        .map(|s| rename_tower_const(s, from, to))
        .collect::<Result<_>>()?;
    Ok(TypeTower { rank: t.rank, diag, realized, so })
}

fn drop_diagram_const(d: &Diagram, name: &str) -> Result<Diagram> {
    let k = d
        .index_of(name)
        .ok_or_else(|| Error::Invalid(format!("constant {name} not present")))?;
    let reindex = |i: usize| if i < k { i } else { i - 1 };
    let keep = |&(i, j): &(usize, usize)| i != k && j != k;
    Ok(Diagram {
        consts: d.consts.iter().filter(|n| *n != name).cloned().collect(),
        labels: d
            .labels
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, l)| l.clone())
            .collect(),
        x_bits: d
            .x_bits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, b)| *b)
            .collect(),
        eq: d.eq.iter().filter(|p| keep(p)).map(|&(i, j)| (reindex(i), reindex(j))).collect(),
        edge: d.edge.iter().filter(|p| keep(p)).map(|&(i, j)| (reindex(i), reindex(j))).collect(),
    })
}

/// Forget a constant: the type of the same structure over the smaller
/// constant list. This is the "intersect with the x-vocabulary" step of the
/// ⊞ⁿ corollary.
pub fn reduct_tower(t: &TypeTower, name: &str) -> Result<TypeTower> {
    let diag = drop_diagram_const(&t.diag, name)?;
    let realized = t
        .realized
        .iter()
        .map(|r| reduct_tower(r, name))
        .collect::<Result<_>>()?;
    let so = t.so.iter().map(|s| reduct_tower(s, name)).collect::<Result<_>>()?;
    Ok(TypeTower { rank: t.rank, diag, realized, so })
}

/// Join the diagrams of two disjoint structures connected by a single new
/// edge between the constants `ca` (left) and `cb` (right).
fn join_diagrams(a: &Diagram, b: &Diagram, ca: &str, cb: &str) -> Result<Diagram> {
    for n in &b.consts {
        if a.index_of(n).is_some() {
            return Err(Error::Invalid(format!("constant {n} present on both sides")));
        }
    }
    let ia = a
        .index_of(ca)
        .ok_or_else(|| Error::Invalid(format!("constant {ca} missing on the left")))?;
    let ib = b
        .index_of(cb)
        .ok_or_else(|| Error::Invalid(format!("constant {cb} missing on the right")))?;
    let mut names: Vec<(String, bool, usize)> = Vec::new();
    for (i, n) in a.consts.iter().enumerate() {
        names.push((n.clone(), false, i));
    }
    for (i, n) in b.consts.iter().enumerate() {
        names.push((n.clone(), true, i));
    }
    names.sort();
    let consts: Vec<String> = names.iter().map(|(n, _, _)| n.clone()).collect();
    let labels = names
        .iter()
        .map(|&(_, right, i)| if right { b.labels[i].clone() } else { a.labels[i].clone() })
        .collect();
    let x_bits = names
        .iter()
        .map(|&(_, right, i)| if right { b.x_bits[i] } else { a.x_bits[i] })
        .collect();
    let mut eq = BTreeSet::new();
    let mut edge = BTreeSet::new();
    for p in 0..names.len() {
        for q in p + 1..names.len() {
            let (_, rp, ip) = names[p];
            let (_, rq, iq) = names[q];
            let (e, ed) = if rp == rq {
                let d = if rp { b } else { a };
                (d.same_vertex(ip, iq), d.adjacent(ip, iq))
            } else {
                // Disjoint universes: never equal; adjacent exactly when the
                // pair names the endpoints of the new connecting edge.
                let (la, lb) = if rp { (iq, ip) } else { (ip, iq) };
                (false, a.same_vertex(la, ia) && b.same_vertex(lb, ib))
            };
            if e {
                eq.insert((p, q));
            }
            if ed {
                edge.insert((p, q));
            }
        }
    }
    Ok(Diagram { consts, labels, x_bits, eq, edge })
}

/// Feferman–Vaught composition ⊕ⁿ: the type of the disjoint sum of two
/// structures joined by one edge from `ca` to `cb`, computed from the two
/// component types alone.
///
/// The recursion is the proposition's proof: the vertex realized by an
/// extension of the sum lies in one of the parts, so the realized set of the
/// sum is the union over both choices; a set over the sum splits freely into
/// its two traces, so the set-extension types compose pairwise.
pub fn compose_towers(a: &TypeTower, b: &TypeTower, ca: &str, cb: &str) -> Result<TypeTower> {
    if a.rank != b.rank {
        return Err(Error::Invalid(format!(
            "cannot compose a rank-{} type with a rank-{} type",
            a.rank, b.rank
        )));
    }
    let diag = join_diagrams(&a.diag, &b.diag, ca, cb)?;
    let mut realized = BTreeSet::new();
    let mut so = BTreeSet::new();
    if a.rank >= 1 {
        let a_low = restrict_tower(a, a.rank - 1);
        let b_low = restrict_tower(b, b.rank - 1);
        for r in &a.realized {
            realized.insert(compose_towers(r, &b_low, ca, cb)?);
        }
        for r in &b.realized {
            realized.insert(compose_towers(&a_low, r, ca, cb)?);
        }
        for u in &a.so {
            for v in &b.so {
                so.insert(compose_towers(u, v, ca, cb)?);
            }
        }
    }
    Ok(TypeTower { rank: a.rank, diag, realized, so })
}

/// Feferman–Vaught composition ⊞ⁿ: attach an x-rooted right operand below
/// the left operand's x and keep only the left vocabulary. `None` on the
/// right denotes the empty tree, the right-neutral element.
pub fn add_towers(s: &TypeTower, t: Option<&TypeTower>) -> Result<TypeTower> {
    let t = match t {
        None => return Ok(s.clone()),
        Some(t) => t,
    };
    if t.diag.consts.is_empty() {
        // The type of the empty tree carries no constants; it is the neutral
        // element in this guise too.
        return Ok(s.clone());
    }
    let renamed = rename_tower_const(t, "x", RIGHT_ROOT)?;
    let joined = compose_towers(s, &renamed, "x", RIGHT_ROOT)?;
    reduct_tower(&joined, RIGHT_ROOT)
}

// ---------------------------------------------------------------------------
// The positive order on towers
// ---------------------------------------------------------------------------

/// The X-positive entailment order: `pos_le(a, b)` holds iff every X-positive
/// formula of rank ≤ n true under `a` is true under `b`.
///
/// On diagrams this requires equality of everything except the X bits (non-X
/// literals appear under both polarities in positive formulae) and inclusion
/// of the X bits. On the extension sets it requires both the ∃-preservation
/// condition (every extension of `a` is dominated by one of `b`) and the
/// ∀-preservation condition (every extension of `b` dominates one of `a`);
/// positive characteristic formulae witness that both are necessary.
pub fn pos_le(a: &TypeTower, b: &TypeTower) -> bool {
    if a.rank != b.rank {
        return false;
    }
    let (da, db) = (&a.diag, &b.diag);
    if da.consts != db.consts || da.labels != db.labels || da.eq != db.eq || da.edge != db.edge {
        return false;
    }
    if da.x_bits.iter().zip(&db.x_bits).any(|(&p, &q)| p && !q) {
        return false;
    }
    let dominated = |xs: &BTreeSet<TypeTower>, ys: &BTreeSet<TypeTower>| {
        xs.iter().all(|x| ys.iter().any(|y| pos_le(x, y)))
            && ys.iter().all(|y| xs.iter().any(|x| pos_le(x, y)))
    };
    dominated(&a.realized, &b.realized) && dominated(&a.so, &b.so)
}

/// Equality up to X-positive formulae: mutual [`pos_le`].
pub fn pos_eq(a: &TypeTower, b: &TypeTower) -> bool {
    pos_le(a, b) && pos_le(b, a)
}

// ---------------------------------------------------------------------------
// Evaluating formulae against a tower
// ---------------------------------------------------------------------------

impl TypeTower {
    /// Decide a formula of quantifier rank ≤ the tower's rank. Free
    /// first-order names must be constants of the tower; the unary name `X`
    /// reads the X bits; any other free unary name is read from the labels.
    /// Direction atoms are outside the type vocabulary and are rejected.
    pub fn satisfies(&self, f: &Formula) -> Result<bool> {
        if f.qr() > self.rank {
            return Err(Error::Invalid(format!(
                "formula of rank {} against a rank-{} type",
                f.qr(),
                self.rank
            )));
        }
        let mut fo = BTreeMap::new();
        let mut so = BTreeMap::new();
        self.eval(f, &mut fo, &mut so)
    }

    fn const_index(&self, t: &Term, fo: &BTreeMap<String, String>) -> Result<usize> {
        let name = match t {
            Term::Var(v) => fo
                .get(v)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::Invalid(format!("unbound variable {v}")))?,
            Term::Const(c) => c.as_str(),
        };
        self.diag
            .index_of(name)
            .ok_or_else(|| Error::Invalid(format!("constant {name} not in the type vocabulary")))
    }

    fn eval(
        &self,
        f: &Formula,
        fo: &mut BTreeMap<String, String>,
        so: &mut BTreeMap<String, String>,
    ) -> Result<bool> {
        use Formula::*;
        Ok(match f {
            True => true,
            False => false,
            Pred(p, t) => {
                let i = self.const_index(t, fo)?;
                if p == "X" {
                    self.diag.x_bits[i]
                } else if let Some(marker) = so.get(p) {
                    self.diag.labels[i].contains(marker)
                } else {
                    self.diag.labels[i].contains(p)
                }
            }
            Eq(s, t) => {
                let (i, j) = (self.const_index(s, fo)?, self.const_index(t, fo)?);
                self.diag.same_vertex(i, j)
            }
            Edge(s, t) => {
                let (i, j) = (self.const_index(s, fo)?, self.const_index(t, fo)?);
                self.diag.adjacent(i, j)
            }
            Succ(..) => {
                return Err(Error::Invalid(
                    "direction atoms are outside the type vocabulary".into(),
                ))
            }
            Rel(name, _) => {
                return Err(Error::Invalid(format!(
                    "relation {name} is outside the type vocabulary"
                )))
            }
            Not(g) => !self.eval(g, fo, so)?,
            And(parts) => {
                let mut all = true;
                for g in parts {
                    all &= self.eval(g, fo, so)?;
                }
                all
            }
            Or(parts) => {
                let mut any = false;
                for g in parts {
                    any |= self.eval(g, fo, so)?;
                }
                any
            }
            ExFo(v, g) | AllFo(v, g) => {
                let universal = matches!(f, AllFo(..));
                let prev = fo.insert(v.clone(), EXT_VERTEX.to_string());
                let mut out = universal;
                for r in &self.realized {
                    let holds = r.eval(g, fo, so)?;
                    if universal {
                        out &= holds;
                    } else {
                        out |= holds;
                    }
                }
                match prev {
                    Some(p) => fo.insert(v.clone(), p),
                    None => fo.remove(v),
                };
                out
            }
            ExSo(v, g) | AllSo(v, g) => {
                let universal = matches!(f, AllSo(..));
                let prev = so.insert(v.clone(), EXT_SET.to_string());
                let mut out = universal;
                for s in &self.so {
                    let holds = s.eval(g, fo, so)?;
                    if universal {
                        out &= holds;
                    } else {
                        out |= holds;
                    }
                }
                match prev {
                    Some(p) => so.insert(v.clone(), p),
                    None => so.remove(v),
                };
                out
            }
        })
    }
}

// ---------------------------------------------------------------------------
// The finite basis of X-positive formulae
// ---------------------------------------------------------------------------

/// Finite list of pairwise inequivalent X-positive formulae of quantifier
/// rank ≤ `rank` over the unary `predicates`, X, and the constant x, each
/// with its compiled automaton. Built deterministically; rebuilds are
/// bit-identical.
pub struct TypeBasis {
    pub rank: usize,
    pub predicates: Vec<String>,
    pub formulas: Vec<Formula>,
    pub automata: Vec<TreeAutomaton>,
    /// One witness tree per realizable x-rooted type, from the type panel.
    panel_trees: Vec<TreeStructure>,
    caches: Mutex<BasisCaches>,
}

#[derive(Default)]
struct BasisCaches {
    /// Realized bit-sets mapped to a witness tree, filled from the panel.
    witnesses: Option<BTreeMap<BTreeSet<usize>, TreeStructure>>,
    compose: BTreeMap<(BTreeSet<usize>, BTreeSet<usize>, bool), BTreeSet<usize>>,
}

/// X-positive type as a set of basis bits, with the empty tree kept apart:
/// no automaton run is defined on it, and the paper keeps it as a separate
/// value with `∀y ⊥` as its private possession.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PositiveType {
    Empty,
    Bits(BTreeSet<usize>),
}

impl PositiveType {
    /// The inclusion order. [`PositiveType::Empty`] is comparable only to
    /// itself; at rank ≥ 1 it is genuinely incomparable to every tree type
    /// (it alone satisfies `∀y ⊥`, and it misses `∃y ⊤`).
    pub fn le(&self, other: &PositiveType) -> bool {
        match (self, other) {
            (PositiveType::Empty, PositiveType::Empty) => true,
            (PositiveType::Bits(a), PositiveType::Bits(b)) => a.is_subset(b),
            _ => false,
        }
    }
}

/// Exhaustive panel of rank-n x-rooted type values, one witness tree per
/// realizable type. A rank-1 x-rooted type is determined by x's own atomic
/// kind, the set of kinds realized by its neighbours (at most 3 in a ternary
/// tree), and the set of kinds realized at distance ≥ 2 (nonempty only when
/// a neighbour exists); every such combination is realized by a star with a
/// pendant chain. Truth of a qr ≤ n formula is a function of the type, so
/// agreement on this panel is equivalence over all finite marked trees.
fn semantic_panel(rank: usize, preds: &[String]) -> Result<Vec<(TypeTower, TreeStructure)>> {
    // A vertex kind: which predicates hold and whether the vertex is in X.
    let kinds: Vec<(u32, bool)> = (0u32..1 << preds.len())
        .flat_map(|m| [false, true].map(|x| (m, x)))
        .collect();
    let labels_of = |mask: u32| -> Vec<String> {
        preds
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| p.clone())
            .collect()
    };
    let mut panel: BTreeMap<TypeTower, TreeStructure> = BTreeMap::new();
    let kind_subsets: Vec<Vec<(u32, bool)>> = {
        let mut out = Vec::new();
        for mask in 0u32..1 << kinds.len() {
            out.push(
                kinds
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &k)| k)
                    .collect(),
            );
        }
        out
    };
    for &(mx, xx) in &kinds {
        for near in kind_subsets.iter().filter(|s| s.len() <= 3) {
            for far in &kind_subsets {
                if rank == 0 && (!near.is_empty() || !far.is_empty()) {
                    continue;
                }
                if near.is_empty() && !far.is_empty() {
                    continue;
                }
                let mut t = TreeStructure::singleton(labels_of(mx));
                let mut in_x: BTreeSet<Vertex> = BTreeSet::new();
                if xx {
                    in_x.insert(0);
                }
                let mut first_neighbor = None;
                for &(m, xb) in near {
                    let w = t.add_vertex(labels_of(m));
                    let d = t.free_direction(0).unwrap();
                    t.add_edge(0, d, w, 1)?;
                    if xb {
                        in_x.insert(w);
                    }
                    first_neighbor.get_or_insert(w);
                }
                let mut tail = first_neighbor;
                for &(m, xb) in far {
                    let v = tail.unwrap();
                    let w = t.add_vertex(labels_of(m));
                    let d = t.free_direction(v).unwrap();
                    t.add_edge(v, d, w, 1)?;
                    if xb {
                        in_x.insert(w);
                    }
                    tail = Some(w);
                }
                let t = t.with_x_set(in_x).with_x_vertex(0);
                let tower = x_rooted_tower(&t, rank)?;
                panel.entry(tower).or_insert(t);
            }
        }
    }
    Ok(panel.into_iter().collect())
}

/// One conjunction describing a vertex: label literals, an optional positive
/// X claim, and (for the quantified vertex) its relation to x.
fn vertex_pattern(
    preds: &[String],
    signs: u32,
    x_claim: bool,
    term: &Term,
    relation: Option<u8>,
) -> Formula {
    let term = term.clone();
    let mut parts = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let atom = Formula::Pred(p.clone(), term.clone());
        parts.push(if signs & (1 << i) != 0 { atom } else { atom.not() });
    }
    if x_claim {
        parts.push(Formula::Pred("X".into(), term.clone()));
    }
    let x = Term::Const("x".into());
    match relation {
        None => {}
        Some(0) => parts.push(Formula::Eq(x, term)),
        Some(1) => parts.push(Formula::Edge(x, term)),
        Some(_) => {
            parts.push(Formula::Eq(x.clone(), term.clone()).not());
            parts.push(Formula::Edge(x, term).not());
        }
    }
    Formula::and(parts)
}

/// Build the basis. Rank 0 enumerates all disjunctions of complete positive
/// vertex descriptions of x — exhaustive for rank 0 up to equivalence. Rank 1
/// adds, on top of the rank-0 family, the `∃y π` patterns (∃ distributes over
/// ∨, so complete patterns suffice), the `∀y ⋁S` disjunction families
/// (reduced modulo X-monotone redundancy), the empty-tree discriminators
/// `∃y ⊤` / `∀y ⊥`, and the seed-growth corpus formula. Second-order
/// quantifiers with rank-0 bodies collapse to rank-0 facts about x and add
/// nothing at rank 1.
///
/// Candidates are deduplicated by canonical-automaton identity, keeping the
/// first representative in a fixed enumeration order.
pub fn build_basis(rank: usize, predicates: &[&str]) -> Result<TypeBasis> {
    if rank >= 2 {
        return Err(Error::Resource(
            "rank-2 bases are non-elementary; the enumeration is capped at rank 1".into(),
        ));
    }
    let pred_cap = if rank == 0 { 2 } else { 1 };
    if predicates.len() > pred_cap {
        return Err(Error::Resource(format!(
            "at most {pred_cap} unary predicates supported at rank {rank}"
        )));
    }
    let preds: Vec<String> = predicates.iter().map(|p| p.to_string()).collect();
    let mut vocab: Vec<String> = preds.clone();
    vocab.push("X".into());
    vocab.push("x".into());

    let mut candidates: Vec<Formula> = Vec::new();
    // Canonical simple formulae first, so deduplication keeps them as the
    // representatives of their equivalence classes.
    let x_const = Term::Const("x".into());
    candidates.push(Formula::False);
    candidates.push(Formula::True);
    candidates.push(Formula::Pred("X".into(), x_const.clone()));
    for p in &preds {
        let atom = Formula::Pred(p.clone(), x_const.clone());
        candidates.push(atom.clone());
        candidates.push(atom.not());
    }
    if rank == 1 {
        candidates.push(Formula::ExFo("y0".into(), Box::new(Formula::True)));
        candidates.push(Formula::AllFo("y0".into(), Box::new(Formula::False)));
        if preds.first().map(|p| p.as_str()) == Some("P0") {
            candidates.push(parse_formula("(or (P0 x) (ex y (and (E x y) (X y))))")?);
        }
    }
    // Rank-0 family: disjunctions of complete positive descriptions of x.
    // A description fixes every label literal and optionally claims X x.
    let x_patterns: Vec<Formula> = (0u32..1 << preds.len())
        .flat_map(|signs| {
            [false, true].map(|xc| vertex_pattern(&preds, signs, xc, &x_const, None))
        })
        .collect();
    for mask in 0u32..1 << x_patterns.len() {
        let picked: Vec<Formula> = x_patterns
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| p.clone())
            .collect();
        candidates.push(Formula::or(picked));
    }

    if rank == 1 {
        // ∃y over complete (y, x)-patterns.
        let mut y_patterns = Vec::new();
        for signs in 0u32..1 << preds.len() {
            for rel in [0u8, 1, 2] {
                for xc in [false, true] {
                    y_patterns.push((signs, rel, xc));
                }
            }
        }
        let y_var = Term::Var("y0".into());
        for &(signs, rel, xc) in &y_patterns {
            candidates.push(Formula::ExFo(
                "y0".into(),
                Box::new(vertex_pattern(&preds, signs, xc, &y_var, Some(rel))),
            ));
        }
    }
    // The ∀y disjunction families. Per (signs, rel) component the X-claimed
    // pattern is implied by the unclaimed one, so the useful choices per
    // component are: absent, claimed only, or unclaimed (subsuming both).
    // These are the positive characteristic clauses of the composition
    // recursion; only the ones needed to separate the order are kept below.
    let mut covering: Vec<Formula> = Vec::new();
    if rank == 1 {
        let y_var = Term::Var("y0".into());
        let components: Vec<(u32, u8)> = (0u32..1 << preds.len())
            .flat_map(|signs| [0u8, 1, 2].map(|rel| (signs, rel)))
            .collect();
        let mut choice = vec![0u8; components.len()];
        loop {
            let mut picked = Vec::new();
            for (k, &(signs, rel)) in components.iter().enumerate() {
                match choice[k] {
                    0 => {}
                    1 => picked.push(vertex_pattern(&preds, signs, true, &y_var, Some(rel))),
                    _ => picked.push(vertex_pattern(&preds, signs, false, &y_var, Some(rel))),
                }
            }
            covering.push(Formula::AllFo("y0".into(), Box::new(Formula::or(picked))));
            // Odometer over {0,1,2}^components.
            let mut k = 0;
            loop {
                if k == choice.len() {
                    break;
                }
                choice[k] += 1;
                if choice[k] < 3 {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    }

    // Deduplicate semantically before compiling: truth over the exhaustive
    // type panel is equivalence over all finite marked trees, and evaluating
    // a tower is far cheaper than compiling an automaton.
    let panel = semantic_panel(rank, &preds)?;
    // The key carries one bit per panel type plus the empty-tree bit, so
    // formulae differing only on the empty tree (⊤ vs ∃y⊤) stay distinct.
    let key_of = |f: &Formula| -> Result<Vec<bool>> {
        let mut key = panel
            .iter()
            .map(|(tower, _)| tower.satisfies(f))
            .collect::<Result<Vec<bool>>>()?;
        key.push(empty_truth(f));
        Ok(key)
    };
    let mut formulas: Vec<Formula> = Vec::new();
    let mut keys: Vec<Vec<bool>> = Vec::new();
    let mut seen: BTreeSet<Vec<bool>> = BTreeSet::new();
    for f in candidates {
        debug_assert!(f.is_positive_in("X"));
        let key = key_of(&f)?;
        if seen.insert(key.clone()) {
            formulas.push(f);
            keys.push(key);
        }
    }
    // The basis must characterize the positive order on realizable types:
    // bits(u) ⊆ bits(v) exactly when u ≤ v. For every strictly unordered
    // panel pair keep, in enumeration order, the first ∀-clause that
    // separates it positively; the retained set stays small while the full
    // family would be several hundred pairwise inequivalent formulae.
    let mut unseparated: Vec<(usize, usize)> = Vec::new();
    for i in 0..panel.len() {
        for j in 0..panel.len() {
            if i != j
                && !pos_le(&panel[i].0, &panel[j].0)
                && !keys.iter().any(|k| k[i] && !k[j])
            {
                unseparated.push((i, j));
            }
        }
    }
    let covering_keys = covering
        .iter()
        .map(key_of)
        .collect::<Result<Vec<_>>>()?;
    let mut available: Vec<usize> = (0..covering.len()).collect();
    while !unseparated.is_empty() && !available.is_empty() {
        // Max-coverage greedy, first index on ties: deterministic and keeps
        // the retained set an order of magnitude smaller than one-at-a-time.
        let best = available
            .iter()
            .copied()
            .max_by_key(|&c| {
                let k = &covering_keys[c];
                let covered =
                    unseparated.iter().filter(|&&(i, j)| k[i] && !k[j]).count();
                (covered, usize::MAX - c)
            })
            .unwrap();
        let key = &covering_keys[best];
        let before = unseparated.len();
        unseparated.retain(|&(i, j)| !(key[i] && !key[j]));
        available.retain(|&c| c != best);
        if unseparated.len() == before {
            break;
        }
        formulas.push(covering[best].clone());
        keys.push(key.clone());
    }
    if !unseparated.is_empty() {
        return Err(Error::Internal(format!(
            "{} panel pairs lack a positive separator",
            unseparated.len()
        )));
    }
    let automata = formulas
        .iter()
        .map(|f| compile(f, &vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok(TypeBasis {
        rank,
        predicates: preds,
        formulas,
        automata,
        panel_trees: panel.into_iter().map(|(_, t)| t).collect(),
        caches: Mutex::new(BasisCaches::default()),
    })
}

/// Truth in the empty tree: the empty structure interprets no x, so formulae
/// whose truth would need x are false there; `∀y ⊥` is vacuously true.
fn empty_truth(f: &Formula) -> bool {
    let empty = crate::structure::Structure::new(0);
    let mut env = crate::structure::Env::default();
    crate::structure::eval(&empty, f, &mut env).unwrap_or(false)
}

impl TypeBasis {
    /// Whether basis formula `i` holds in the empty tree.
    pub fn holds_in_empty(&self, i: usize) -> bool {
        empty_truth(&self.formulas[i])
    }

    fn check_vocabulary(&self, t: &TreeStructure) -> Result<()> {
        for v in t.vertices() {
            for l in t.labels(v) {
                if !self.predicates.contains(l) {
                    return Err(Error::Invalid(format!(
                        "label {l} is not in the basis vocabulary"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Find a tree realizing the given bit-set. The panel enumerates every
    /// realizable x-rooted type with a witness, so a bit-set missing there is
    /// genuinely unrealizable — the composition operations only accept types
    /// of structures.
    fn realize(&self, bits: &BTreeSet<usize>) -> Result<TreeStructure> {
        let mut caches = self.caches.lock().unwrap();
        if caches.witnesses.is_none() {
            let mut map = BTreeMap::new();
            for t in &self.panel_trees {
                map.entry(self.bits_of(t)?).or_insert_with(|| t.clone());
            }
            caches.witnesses = Some(map);
        }
        caches
            .witnesses
            .as_ref()
            .unwrap()
            .get(bits)
            .cloned()
            .ok_or_else(|| {
                Error::Invalid(format!("bit-set {bits:?} is not the type of any structure"))
            })
    }

    fn bits_of(&self, t: &TreeStructure) -> Result<BTreeSet<usize>> {
        let mut bits = BTreeSet::new();
        for (i, a) in self.automata.iter().enumerate() {
            if a.accepts(t) {
                bits.insert(i);
            }
        }
        Ok(bits)
    }

    /// Whether a formula belongs to a type, i.e. holds in every structure
    /// of that type. `f` must be an X-positive formula over the basis
    /// vocabulary with quantifier rank at most the basis rank, so that its
    /// truth is a function of the type; it is decided on a witness.
    pub fn formula_holds(&self, f: &Formula, t: &PositiveType) -> Result<bool> {
        if f.qr() > self.rank {
            return Err(Error::Invalid(format!(
                "quantifier rank {} exceeds the basis rank {}",
                f.qr(),
                self.rank
            )));
        }
        match t {
            PositiveType::Empty => Ok(empty_truth(f)),
            PositiveType::Bits(b) => {
                let witness = self.realize(b)?;
                crate::structure::model_check(&witness, f)
            }
        }
    }

    /// Evaluate every basis formula against a structural tower.
    fn bits_of_tower(&self, tower: &TypeTower) -> Result<BTreeSet<usize>> {
        let mut bits = BTreeSet::new();
        for (i, f) in self.formulas.iter().enumerate() {
            if tower.satisfies(f)? {
                bits.insert(i);
            }
        }
        Ok(bits)
    }
}

/// The X-positive type of a tree: one bit per basis formula, read off the
/// compiled automata; the empty tree gets the separate value `△`.
pub fn compute_type(t: &TreeStructure, basis: &TypeBasis) -> Result<PositiveType> {
    if t.is_empty() {
        return Ok(PositiveType::Empty);
    }
    basis.check_vocabulary(t)?;
    if t.x_vertex().is_none() {
        return Err(Error::Invalid("tree does not interpret the constant x".into()));
    }
    Ok(PositiveType::Bits(basis.bits_of(t)?))
}

fn bits_only<'a>(t: &'a PositiveType, side: &str) -> Result<&'a BTreeSet<usize>> {
    match t {
        PositiveType::Bits(b) => Ok(b),
        PositiveType::Empty => Err(Error::Invalid(format!(
            "the empty-tree type cannot be the {side} operand here"
        ))),
    }
}

/// ⊕ⁿ on basis types: the type of T₁ +_{c₁,c₂} T₂ where cᵢ is the marked
/// vertex of the respective operand and the composite keeps the left mark as
/// its x. Computed by realizing the operands, composing their structural
/// towers with the Feferman–Vaught recursion, and reading the basis off the
/// composed tower; the homomorphism law makes the result independent of the
/// chosen witnesses.
pub fn compose_plus(
    t1: &PositiveType,
    c1: &str,
    t2: &PositiveType,
    c2: &str,
    basis: &TypeBasis,
) -> Result<PositiveType> {
    if c1 == c2 {
        return Err(Error::Invalid("attachment constants must be distinct".into()));
    }
    compose_bits(t1, t2, basis, false)
}

/// ⊞ⁿ on basis types: `s ⊞ⁿ △ = s`; otherwise the restriction of ⊕ⁿ that
/// renames the right x away and forgets it.
pub fn compose_add(s: &PositiveType, t: &PositiveType, basis: &TypeBasis) -> Result<PositiveType> {
    if matches!(t, PositiveType::Empty) {
        return Ok(s.clone());
    }
    compose_bits(s, t, basis, true)
}

fn compose_bits(
    t1: &PositiveType,
    t2: &PositiveType,
    basis: &TypeBasis,
    _add: bool,
) -> Result<PositiveType> {
    let b1 = bits_only(t1, "left")?.clone();
    let b2 = bits_only(t2, "right")?.clone();
    if let Some(hit) = basis.caches.lock().unwrap().compose.get(&(b1.clone(), b2.clone(), _add)) {
        return Ok(PositiveType::Bits(hit.clone()));
    }
    let w1 = basis.realize(&b1)?;
    let w2 = basis.realize(&b2)?;
    let s1 = x_rooted_tower(&w1, basis.rank)?;
    let s2 = x_rooted_tower(&w2, basis.rank)?;
    // Both ⊕ (with the left mark kept as x) and ⊞ reduce to grafting the
    // right root below x and forgetting it.
    let composed = add_towers(&s1, Some(&s2))?;
    let bits = basis.bits_of_tower(&composed)?;
    basis
        .caches
        .lock()
        .unwrap()
        .compose
        .insert((b1, b2, _add), bits.clone());
    Ok(PositiveType::Bits(bits))
}

// ---------------------------------------------------------------------------
// Substitution invariance
// ---------------------------------------------------------------------------

/// Check the substitution form of the composition theorem: attaching
/// same-type subtrees at free slots yields same-type results. `slots` lists
/// free (vertex, direction) positions of `host`; `subs` and `alts` give, per
/// slot, two x-rooted replacement trees of equal positive type. Returns true
/// when the two augmented trees have equal rank-n types towards the host's x.
pub fn substitute_subtrees_invariance(
    host: &TreeStructure,
    slots: &[(Vertex, u8)],
    subs: &[TreeStructure],
    alts: &[TreeStructure],
    rank: usize,
) -> Result<bool> {
    if slots.len() != subs.len() || slots.len() != alts.len() {
        return Err(Error::Invalid("one replacement pair per slot required".into()));
    }
    host.x_vertex()
        .ok_or_else(|| Error::Invalid("host tree does not interpret x".into()))?;
    for (i, (s, a)) in subs.iter().zip(alts).enumerate() {
        let ts = x_rooted_tower(s, rank)?;
        let ta = x_rooted_tower(a, rank)?;
        if !pos_eq(&ts, &ta) {
            return Err(Error::Invalid(format!(
                "replacement pair {i} does not have equal types"
            )));
        }
    }
    let attach_all = |trees: &[TreeStructure]| -> Result<TreeStructure> {
        let mut u = host.clone();
        for (&(v, d), s) in slots.iter().zip(trees) {
            if u.neighbor(v, d).is_some() {
                return Err(Error::Invalid(format!("slot ({v}, {d}) is occupied")));
            }
            if s.is_empty() {
                continue;
            }
            let mut right = s.clone();
            let r = right
                .x_vertex()
                .ok_or_else(|| Error::Invalid("replacement tree does not interpret x".into()))?;
            right.unset_constant("x");
            right.set_constant(RIGHT_ROOT, r);
            let dr = right
                .free_direction(r)
                .ok_or_else(|| Error::Invalid("replacement root has no free direction".into()))?;
            let mut tmp = u.clone();
            tmp.set_constant("__slot", v);
            u = concat(&tmp, "__slot", &right, RIGHT_ROOT, Some((d, dr)))?;
            u.unset_constant("__slot");
            u.unset_constant(RIGHT_ROOT);
        }
        Ok(u)
    };
    let u = attach_all(subs)?;
    let u2 = attach_all(alts)?;
    Ok(pos_eq(&x_rooted_tower(&u, rank)?, &x_rooted_tower(&u2, rank)?))
}

// ---------------------------------------------------------------------------
// Basis dump (.tb)
// ---------------------------------------------------------------------------

/// Stable text dump of a basis: rank, vocabulary, and the formula list.
/// Automata are recompiled on load, which is deterministic.
pub fn print_basis(basis: &TypeBasis) -> String {
    let mut out = String::new();
    writeln!(out, "rank {}", basis.rank).unwrap();
    writeln!(out, "predicates {}", basis.predicates.join(" ")).unwrap();
    for (i, f) in basis.formulas.iter().enumerate() {
        writeln!(out, "formula {i} {f}").unwrap();
    }
    out
}

/// Parse a `.tb` dump and recompile the automata.
pub fn parse_basis(text: &str) -> Result<TypeBasis> {
    let mut rank = None;
    let mut predicates: Vec<String> = Vec::new();
    let mut formulas = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ' ');
        let head = parts.next().unwrap();
        let rest = parts.next().unwrap_or("");
        match head {
            "rank" => {
                rank = Some(rest.trim().parse::<usize>().map_err(|_| {
                    Error::Parse(format!("bad rank line: {line}"))
                })?)
            }
            "predicates" => {
                predicates = rest.split_whitespace().map(|s| s.to_string()).collect()
            }
            "formula" => {
                let mut sub = rest.splitn(2, ' ');
                let idx: usize = sub
                    .next()
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad formula line: {line}")))?;
                if idx != formulas.len() {
                    return Err(Error::Parse(format!("formula index {idx} out of order")));
                }
                formulas.push(parse_formula(sub.next().unwrap_or(""))?);
            }
            _ => return Err(Error::Parse(format!("unknown basis line: {line}"))),
        }
    }
    let rank = rank.ok_or_else(|| Error::Parse("missing rank line".into()))?;
    let mut vocab = predicates.clone();
    vocab.push("X".into());
    vocab.push("x".into());
    let automata = formulas
        .iter()
        .map(|f| compile(f, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let panel = semantic_panel(rank, &predicates)?;
    Ok(TypeBasis {
        rank,
        predicates,
        formulas,
        automata,
        panel_trees: panel.into_iter().map(|(_, t)| t).collect(),
        caches: Mutex::new(BasisCaches::default()),
    })
}

/// Canonicalize an automaton to the same form used for basis deduplication.
#[allow(dead_code)]
fn canonical_key(a: &TreeAutomaton) -> String {
    crate::automaton::print_automaton(&canonical(a))
}

// ---------------------------------------------------------------------------

/// One basis per rank over the vocabulary {P0}, shared across the test
/// binary: building the rank-1 basis takes a few seconds.
#[cfg(test)]
pub(crate) fn shared_basis(rank: usize) -> &'static TypeBasis {
    use std::sync::OnceLock;
    static B0: OnceLock<TypeBasis> = OnceLock::new();
    static B1: OnceLock<TypeBasis> = OnceLock::new();
    match rank {
        0 => B0.get_or_init(|| build_basis(0, &["P0"]).unwrap()),
        _ => B1.get_or_init(|| build_basis(1, &["P0"]).unwrap()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::model_check;
    use crate::tree::{add_under, path_tree};

    fn basis1() -> &'static TypeBasis {
        shared_basis(1)
    }

    fn basis0() -> &'static TypeBasis {
        shared_basis(0)
    }

    /// All (tree, X-subset, x-mark) structures with the given exact sizes.
    fn marked_trees(max: usize) -> Vec<TreeStructure> {
        let mut out = Vec::new();
        for t in enumerate_trees(max, &["P0".to_string()], max).unwrap() {
            for xs in vertex_subsets(t.len()) {
                let m = t.clone().with_x_set(xs);
                for v in m.vertices() {
                    out.push(m.clone().with_x_vertex(v));
                }
            }
        }
        out
    }

    #[test]
    fn towers_decide_formulas_like_the_evaluator() {
        // The structural tower and the brute-force evaluator must agree on
        // every basis formula; this is the bridge between the two routes.
        let b = basis1();
        for t in marked_trees(3) {
            let tower = x_rooted_tower(&t, 1).unwrap();
            for f in &b.formulas {
                assert_eq!(
                    tower.satisfies(f).unwrap(),
                    model_check(&t, f).unwrap(),
                    "disagreement on {f} at {}",
                    crate::tree::print_tree(&t)
                );
            }
        }
    }

    #[test]
    fn automaton_bits_match_tower_bits() {
        let b = basis1();
        for t in marked_trees(3) {
            let via_automata = match compute_type(&t, b).unwrap() {
                PositiveType::Bits(bits) => bits,
                PositiveType::Empty => unreachable!(),
            };
            let tower = x_rooted_tower(&t, 1).unwrap();
            assert_eq!(via_automata, b.bits_of_tower(&tower).unwrap());
        }
    }

    #[test]
    fn empty_tree_owns_forall_bottom() {
        let b = basis1();
        assert_eq!(compute_type(&TreeStructure::empty(), b).unwrap(), PositiveType::Empty);
        let all_false = Formula::AllFo("y0".into(), Box::new(Formula::False));
        let some = Formula::ExFo("y0".into(), Box::new(Formula::True));
        let i_all = b.formulas.iter().position(|f| *f == all_false).unwrap();
        let i_some = b.formulas.iter().position(|f| *f == some).unwrap();
        assert!(b.holds_in_empty(i_all));
        assert!(!b.holds_in_empty(i_some));
        // Every tree type contains ∃y⊤ and misses ∀y⊥ — △ is incomparable.
        for t in marked_trees(2) {
            let bits = match compute_type(&t, b).unwrap() {
                PositiveType::Bits(bits) => bits,
                PositiveType::Empty => unreachable!(),
            };
            assert!(bits.contains(&i_some) && !bits.contains(&i_all));
        }
    }

    #[test]
    fn letter_types_differ_exactly_in_x() {
        for b in [basis0(), basis1()] {
            let letter = TreeStructure::singleton(Vec::<String>::new()).with_x_vertex(0);
            let t0 = compute_type(&letter, b).unwrap();
            let t1 = compute_type(&letter.clone().with_x_set([0].into()), b).unwrap();
            assert!(t0.le(&t1) && t0 != t1, "0_L ⊊ 1_L fails at rank {}", b.rank);
            let xx = parse_formula("(X x)").unwrap();
            let i = b.formulas.iter().position(|f| *f == xx).unwrap();
            let (PositiveType::Bits(b0), PositiveType::Bits(b1)) = (&t0, &t1) else {
                unreachable!()
            };
            assert!(b1.contains(&i) && !b0.contains(&i));
        }
    }

    #[test]
    fn types_are_monotone_in_x() {
        let b = basis1();
        for t in enumerate_trees(3, &["P0".to_string()], 3).unwrap() {
            let subsets = vertex_subsets(t.len());
            for xs1 in &subsets {
                for xs2 in &subsets {
                    if !xs1.is_subset(xs2) {
                        continue;
                    }
                    for v in t.vertices() {
                        let lo = t.clone().with_x_set(xs1.clone()).with_x_vertex(v);
                        let hi = t.clone().with_x_set(xs2.clone()).with_x_vertex(v);
                        assert!(compute_type(&lo, b)
                            .unwrap()
                            .le(&compute_type(&hi, b).unwrap()));
                        // The structural order agrees.
                        assert!(pos_le(
                            &x_rooted_tower(&lo, 1).unwrap(),
                            &x_rooted_tower(&hi, 1).unwrap()
                        ));
                    }
                }
            }
        }
    }

    #[test]
    fn tower_composition_is_the_type_of_the_sum() {
        // ⊕ⁿ at the structural level: exhaustive over small marked pairs,
        // the composed tower equals the tower of the concatenated tree.
        let trees = marked_trees(3);
        let mut checked = 0;
        for t1 in &trees {
            for t2 in &trees {
                if t1.len() + t2.len() > 5 {
                    continue;
                }
                let v1 = t1.x_vertex().unwrap();
                let v2 = t2.x_vertex().unwrap();
                let (Some(d1), Some(d2)) = (t1.free_direction(v1), t2.free_direction(v2)) else {
                    continue;
                };
                let mut left = t1.clone();
                left.unset_constant("x");
                left.set_constant("c1", v1);
                let mut right = t2.clone();
                right.unset_constant("x");
                right.set_constant("c2", v2);
                let sum = concat(&left, "c1", &right, "c2", Some((d1, d2))).unwrap();
                let direct = tower_of(
                    &sum,
                    1,
                    &[
                        ("c1".to_string(), sum.constant("c1").unwrap()),
                        ("c2".to_string(), sum.constant("c2").unwrap()),
                    ],
                )
                .unwrap();
                let a = tower_of(&left, 1, &[("c1".to_string(), v1)]).unwrap();
                let bb = tower_of(&right, 1, &[("c2".to_string(), v2)]).unwrap();
                let composed = compose_towers(&a, &bb, "c1", "c2").unwrap();
                assert_eq!(direct, composed);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn add_towers_is_the_type_of_add_under() {
        let trees = marked_trees(3);
        let mut checked = 0;
        for t1 in &trees {
            for t2 in &trees {
                if t1.len() + t2.len() > 5 {
                    continue;
                }
                let Ok(sum) = add_under(t1, t2, None) else { continue };
                let s = x_rooted_tower(t1, 1).unwrap();
                let t = x_rooted_tower(t2, 1).unwrap();
                let composed = add_towers(&s, Some(&t)).unwrap();
                assert_eq!(x_rooted_tower(&sum, 1).unwrap(), composed);
                checked += 1;
            }
        }
        assert!(checked > 100);
        // Right-neutrality on the empty tree.
        let t = path_tree(3).with_x_vertex(1).with_x_set([0].into());
        let s = x_rooted_tower(&t, 1).unwrap();
        assert_eq!(add_towers(&s, None).unwrap(), s);
    }

    #[test]
    fn basis_composition_matches_compute_type() {
        let b = basis1();
        let trees = marked_trees(3);
        let mut checked = 0;
        for t1 in &trees {
            for t2 in &trees {
                if t1.len() + t2.len() > 5 {
                    continue;
                }
                let Ok(sum) = add_under(t1, t2, None) else { continue };
                let ty1 = compute_type(t1, b).unwrap();
                let ty2 = compute_type(t2, b).unwrap();
                let composed = compose_add(&ty1, &ty2, b).unwrap();
                assert_eq!(compute_type(&sum, b).unwrap(), composed);
                assert_eq!(compose_plus(&ty1, "c1", &ty2, "c2", b).unwrap(), composed);
                checked += 1;
            }
        }
        assert!(checked > 100);
        // s ⊞ △ = s.
        let t = trees.first().unwrap();
        let ty = compute_type(t, b).unwrap();
        assert_eq!(compose_add(&ty, &PositiveType::Empty, b).unwrap(), ty);
    }

    #[test]
    fn rank_zero_composition_on_letters() {
        let b = basis0();
        let mut l1 = TreeStructure::singleton(["P0".to_string()]).with_x_vertex(0);
        l1.set_x_set(Some([0].into()));
        let l2 = TreeStructure::singleton(Vec::<String>::new()).with_x_vertex(0);
        let sum = add_under(&l1, &l2, None).unwrap();
        let composed =
            compose_add(&compute_type(&l1, b).unwrap(), &compute_type(&l2, b).unwrap(), b)
                .unwrap();
        assert_eq!(compute_type(&sum, b).unwrap(), composed);
    }

    #[test]
    fn composition_is_monotone() {
        let b = basis1();
        // Collect the realized types of all small marked trees with their
        // witnesses, then check monotonicity of ⊞ in both arguments over
        // comparable pairs.
        let mut types: Vec<PositiveType> = Vec::new();
        for t in marked_trees(2) {
            let ty = compute_type(&t, b).unwrap();
            if !types.contains(&ty) {
                types.push(ty);
            }
        }
        for t1 in &types {
            for t1b in &types {
                if !t1.le(t1b) {
                    continue;
                }
                for t2 in &types {
                    let a = compose_add(t1, t2, b).unwrap();
                    let bb = compose_add(t1b, t2, b).unwrap();
                    assert!(a.le(&bb), "left monotonicity fails");
                    let c = compose_add(t2, t1, b).unwrap();
                    let d = compose_add(t2, t1b, b).unwrap();
                    assert!(c.le(&d), "right monotonicity fails");
                }
            }
        }
    }

    #[test]
    fn unrealizable_bit_sets_are_rejected() {
        let b = basis1();
        // ∀y⊥ together with ∃y⊤ is contradictory for tree types.
        let all_false = Formula::AllFo("y0".into(), Box::new(Formula::False));
        let some = Formula::ExFo("y0".into(), Box::new(Formula::True));
        let i_all = b.formulas.iter().position(|f| *f == all_false).unwrap();
        let i_some = b.formulas.iter().position(|f| *f == some).unwrap();
        let bogus = PositiveType::Bits([i_all, i_some].into());
        let ok = PositiveType::Bits(match compute_type(&path_tree(1).with_x_vertex(0), b).unwrap()
        {
            PositiveType::Bits(bits) => bits,
            PositiveType::Empty => unreachable!(),
        });
        assert!(compose_add(&bogus, &ok, b).is_err());
    }

    #[test]
    fn substitution_invariance_holds() {
        // Isomorphic replacement trees trivially, then a same-type
        // non-isomorphic pair found by search.
        let host = path_tree(2).with_x_vertex(0).with_x_set([1].into());
        let s = path_tree(2).with_x_vertex(0);
        let slot = (1usize, host.free_direction(1).unwrap());
        assert!(substitute_subtrees_invariance(&host, &[slot], &[s.clone()], &[s.clone()], 1)
            .unwrap());

        let pool = marked_trees(4);
        let mut found = false;
        'outer: for (i, a) in pool.iter().enumerate() {
            for bb in pool.iter().skip(i + 1) {
                if a.isomorphic(bb) {
                    continue;
                }
                let ta = x_rooted_tower(a, 1).unwrap();
                let tb = x_rooted_tower(bb, 1).unwrap();
                if !pos_eq(&ta, &tb) {
                    continue;
                }
                assert!(substitute_subtrees_invariance(
                    &host,
                    &[slot],
                    &[a.clone()],
                    &[bb.clone()],
                    1
                )
                .unwrap());
                found = true;
                break 'outer;
            }
        }
        assert!(found, "no same-type non-isomorphic pair among small trees");
    }

    #[test]
    fn basis_is_deterministic_and_capped() {
        let a = print_basis(basis1());
        let b = print_basis(&build_basis(1, &["P0"]).unwrap());
        assert_eq!(a, b);
        assert!(matches!(build_basis(2, &[]), Err(Error::Resource(_))));
        assert!(matches!(build_basis(1, &["P0", "P1"]), Err(Error::Resource(_))));
        assert!(matches!(build_basis(0, &["P0", "P1", "P2"]), Err(Error::Resource(_))));
    }

    #[test]
    fn basis_round_trips_through_text() {
        let b = basis0();
        let parsed = parse_basis(&print_basis(b)).unwrap();
        assert_eq!(parsed.formulas, b.formulas);
        assert_eq!(parsed.rank, b.rank);
        for (x, y) in parsed.automata.iter().zip(&b.automata) {
            assert_eq!(
                crate::automaton::print_automaton(x),
                crate::automaton::print_automaton(y)
            );
        }
    }
}
