//! Plain finite relational structures and a brute-force MSO evaluator.
//!
//! This is the independent oracle for the whole crate: formulas are
//! evaluated by direct recursion over the semantics, with second-order
//! quantifiers enumerating all subsets of the universe. Trees convert into
//! structures (`E`, `succ1..3`, labels, `X`, `x`), so one evaluator serves
//! both trees and the arbitrary structures used by interpretations.

use crate::formula::{Formula, Term};
use crate::tree::TreeStructure;
use crate::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};

/// Default universe cap for evaluating second-order quantifiers.
pub const SO_ORACLE_CAP: usize = 14;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Structure {
    pub universe: usize,
    pub unary: BTreeMap<String, BTreeSet<usize>>,
    pub relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    pub constants: BTreeMap<String, usize>,
}

impl Structure {
    pub fn new(universe: usize) -> Self {
        Structure {
            universe,
            ..Default::default()
        }
    }

    pub fn add_unary(&mut self, name: &str, v: usize) {
        self.unary.entry(name.to_string()).or_default().insert(v);
    }

    pub fn add_tuple(&mut self, name: &str, tuple: Vec<usize>) {
        self.relations
            .entry(name.to_string())
            .or_default()
            .insert(tuple);
    }

    /// Add a symmetric edge (both orientations).
    pub fn add_edge(&mut self, a: usize, b: usize) {
        self.add_tuple("E", vec![a, b]);
        self.add_tuple("E", vec![b, a]);
    }

    pub fn has_unary(&self, name: &str, v: usize) -> bool {
        self.unary.get(name).map(|s| s.contains(&v)).unwrap_or(false)
    }

    pub fn has_tuple(&self, name: &str, tuple: &[usize]) -> bool {
        self.relations
            .get(name)
            .map(|s| s.contains(tuple))
            .unwrap_or(false)
    }
}

impl TreeStructure {
    /// View as a relational structure with relations E (symmetric),
    /// succ1..succ3, unary labels, X, and constants (including x).
    pub fn to_structure(&self) -> Structure {
        let mut s = Structure::new(self.len());
        for v in self.vertices() {
            for l in self.labels(v) {
                s.add_unary(l, v);
            }
            if self.in_x(v) {
                s.add_unary("X", v);
            }
            for d in crate::tree::DIRS {
                if let Some(w) = self.neighbor(v, d) {
                    s.add_tuple(&format!("succ{d}"), vec![v, w]);
                    s.add_tuple("E", vec![v, w]);
                }
            }
        }
        for (name, &v) in self.constants() {
            s.constants.insert(name.clone(), v);
        }
        if let Some(v) = self.x_vertex() {
            s.constants.insert("x".into(), v);
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct Env {
    pub fo: BTreeMap<String, usize>,
    pub so: BTreeMap<String, BTreeSet<usize>>,
}

/// Evaluate an MSO formula on a structure under an environment.
/// Second-order quantifiers enumerate all 2^n subsets; universes larger
/// than `SO_ORACLE_CAP` are rejected when the formula has any.
pub fn eval(s: &Structure, f: &Formula, env: &Env) -> Result<bool> {
    if f.qr() > 0 && has_so(f) && s.universe > SO_ORACLE_CAP {
        return Err(Error::Resource(format!(
            "universe of size {} above the second-order oracle cap {}",
            s.universe, SO_ORACLE_CAP
        )));
    }
    eval_inner(s, f, &mut env.clone())
}

fn has_so(f: &Formula) -> bool {
    match f {
        Formula::ExSo(..) | Formula::AllSo(..) => true,
        Formula::Not(g) => has_so(g),
        Formula::And(fs) | Formula::Or(fs) => fs.iter().any(has_so),
        Formula::ExFo(_, g) | Formula::AllFo(_, g) => has_so(g),
        _ => false,
    }
}

fn term_value(s: &Structure, t: &Term, env: &Env) -> Result<usize> {
    match t {
        Term::Var(n) => env
            .fo
            .get(n)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unbound variable {n}"))),
        Term::Const(n) => env.fo.get(n).copied().or(s.constants.get(n).copied()).ok_or_else(|| {
            Error::Invalid(format!("constant {n} not interpreted in the structure"))
        }),
    }
}

fn eval_inner(s: &Structure, f: &Formula, env: &mut Env) -> Result<bool> {
    Ok(match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Pred(name, t) => {
            let v = term_value(s, t, env)?;
            match env.so.get(name) {
                Some(set) => set.contains(&v),
                None => s.has_unary(name, v),
            }
        }
        Formula::Eq(a, b) => term_value(s, a, env)? == term_value(s, b, env)?,
        Formula::Edge(a, b) => {
            let (a, b) = (term_value(s, a, env)?, term_value(s, b, env)?);
            s.has_tuple("E", &[a, b]) || s.has_tuple("E", &[b, a])
        }
        Formula::Succ(d, a, b) => {
            let (a, b) = (term_value(s, a, env)?, term_value(s, b, env)?);
            s.has_tuple(&format!("succ{d}"), &[a, b])
        }
        Formula::Rel(name, ts) => {
            let tuple = ts
                .iter()
                .map(|t| term_value(s, t, env))
                .collect::<Result<Vec<_>>>()?;
            s.has_tuple(name, &tuple)
        }
        Formula::Not(g) => !eval_inner(s, g, env)?,
        Formula::And(fs) => {
            for g in fs {
                if !eval_inner(s, g, env)? {
                    return Ok(false);
                }
            }
            true
        }
        Formula::Or(fs) => {
            for g in fs {
                if eval_inner(s, g, env)? {
                    return Ok(true);
                }
            }
            false
        }
        Formula::ExFo(v, g) => {
            let prev = env.fo.get(v).copied();
            let mut found = false;
            for u in 0..s.universe {
                env.fo.insert(v.clone(), u);
                if eval_inner(s, g, env)? {
                    found = true;
                    break;
                }
            }
            restore_fo(env, v, prev);
            found
        }
        Formula::AllFo(v, g) => {
            let prev = env.fo.get(v).copied();
            let mut all = true;
            for u in 0..s.universe {
                env.fo.insert(v.clone(), u);
                if !eval_inner(s, g, env)? {
                    all = false;
                    break;
                }
            }
            restore_fo(env, v, prev);
            all
        }
        Formula::ExSo(v, g) => {
            let prev = env.so.get(v).cloned();
            let mut found = false;
            for mask in 0u64..(1u64 << s.universe) {
                env.so.insert(v.clone(), mask_to_set(mask));
                if eval_inner(s, g, env)? {
                    found = true;
                    break;
                }
            }
            restore_so(env, v, prev);
            found
        }
        Formula::AllSo(v, g) => {
            let prev = env.so.get(v).cloned();
            let mut all = true;
            for mask in 0u64..(1u64 << s.universe) {
                env.so.insert(v.clone(), mask_to_set(mask));
                if !eval_inner(s, g, env)? {
                    all = false;
                    break;
                }
            }
            restore_so(env, v, prev);
            all
        }
    })
}

fn mask_to_set(mask: u64) -> BTreeSet<usize> {
    (0..64).filter(|i| mask & (1 << i) != 0).collect()
}

fn restore_fo(env: &mut Env, v: &str, prev: Option<usize>) {
    match prev {
        Some(u) => {
            env.fo.insert(v.to_string(), u);
        }
        None => {
            env.fo.remove(v);
        }
    }
}

fn restore_so(env: &mut Env, v: &str, prev: Option<BTreeSet<usize>>) {
    match prev {
        Some(s) => {
            env.so.insert(v.to_string(), s);
        }
        None => {
            env.so.remove(v);
        }
    }
}

/// Brute-force model checking on a tree: free `x`/`X` are supplied by the
/// tree's x-vertex and X-set.
pub fn model_check(t: &TreeStructure, f: &Formula) -> Result<bool> {
    eval(&t.to_structure(), f, &Env::default())
}

/// Structure isomorphism by backtracking (intended for small structures).
pub fn isomorphic(a: &Structure, b: &Structure) -> bool {
    if a.universe != b.universe {
        return false;
    }
    if a.constants.keys().collect::<Vec<_>>() != b.constants.keys().collect::<Vec<_>>() {
        return false;
    }
    let mut names: BTreeSet<&String> = a.unary.keys().chain(b.unary.keys()).collect();
    names.extend(a.relations.keys().chain(b.relations.keys()));
    // Quick invariant: matching cardinalities.
    for n in &names {
        let ca = a.unary.get(*n).map(BTreeSet::len).unwrap_or(0)
            + a.relations.get(*n).map(BTreeSet::len).unwrap_or(0);
        let cb = b.unary.get(*n).map(BTreeSet::len).unwrap_or(0)
            + b.relations.get(*n).map(BTreeSet::len).unwrap_or(0);
        if ca != cb {
            return false;
        }
    }
    let mut map: Vec<Option<usize>> = vec![None; a.universe];
    let mut used = vec![false; a.universe];
    fn consistent(a: &Structure, b: &Structure, map: &[Option<usize>]) -> bool {
        for (name, set) in &a.unary {
            for &v in set {
                if let Some(w) = map[v] {
                    if !b.has_unary(name, w) {
                        return false;
                    }
                }
            }
        }
        for (name, set) in &b.unary {
            for &w in set {
                if let Some(v) = map.iter().position(|&m| m == Some(w)) {
                    if !a.has_unary(name, v) {
                        return false;
                    }
                }
            }
        }
        for (name, tuples) in &a.relations {
            for tup in tuples {
                if tup.iter().all(|&v| map[v].is_some()) {
                    let img: Vec<usize> = tup.iter().map(|&v| map[v].unwrap()).collect();
                    if !b.has_tuple(name, &img) {
                        return false;
                    }
                }
            }
        }
        for (name, tuples) in &b.relations {
            for tup in tuples {
                let pre: Option<Vec<usize>> = tup
                    .iter()
                    .map(|&w| map.iter().position(|&m| m == Some(w)))
                    .collect();
                if let Some(pre) = pre {
                    if !a.has_tuple(name, &pre) {
                        return false;
                    }
                }
            }
        }
        true
    }
    fn go(
        a: &Structure,
        b: &Structure,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        v: usize,
    ) -> bool {
        if v == a.universe {
            return true;
        }
        for w in 0..b.universe {
            if used[w] {
                continue;
            }
            map[v] = Some(w);
            used[w] = true;
            if consistent(a, b, map) && go(a, b, map, used, v + 1) {
                return true;
            }
            map[v] = None;
            used[w] = false;
        }
        false
    }
    // Constants must map to each other.
    for (name, &v) in &a.constants {
        let w = b.constants[name];
        if let Some(prev) = map[v] {
            if prev != w {
                return false;
            }
        } else {
            if used[w] {
                return false;
            }
            map[v] = Some(w);
            used[w] = true;
        }
    }
    if !consistent(a, b, &map) {
        return false;
    }
    let start = (0..a.universe).find(|&v| map[v].is_none()).unwrap_or(a.universe);
    // Fill remaining from `start`; go() skips already-mapped vertices badly,
    // so instead iterate over a permutation search on unmapped vertices.
    fn go_free(
        a: &Structure,
        b: &Structure,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        order: &[usize],
        i: usize,
    ) -> bool {
        if i == order.len() {
            return true;
        }
        let v = order[i];
        for w in 0..b.universe {
            if used[w] {
                continue;
            }
            map[v] = Some(w);
            used[w] = true;
            if consistent(a, b, map) && go_free(a, b, map, used, order, i + 1) {
                return true;
            }
            map[v] = None;
            used[w] = false;
        }
        false
    }
    let _ = (go, start);
    let order: Vec<usize> = (0..a.universe).filter(|&v| map[v].is_none()).collect();
    go_free(a, b, &mut map, &mut used, &order, 0)
}

// ---------------------------------------------------------------------------
// The .struct file format
// ---------------------------------------------------------------------------

/// Parse `(structure (universe n) (unary P v …)… (rel R (a b)…)…
/// (const c v)…)`.
pub fn parse_structure(text: &str) -> Result<Structure> {
    use crate::formula::Sexp;
    let mut reader = crate::formula::parse_sexp(text)?;
    let sexp = reader.next_sexp()?;
    let items = match &sexp {
        Sexp::List(items, _) => items,
        _ => return Err(Error::Parse("expected (structure …)".into())),
    };
    match items.first() {
        Some(Sexp::Atom(h, _)) if h == "structure" => {}
        _ => return Err(Error::Parse("expected (structure …)".into())),
    }
    let mut s = Structure::new(0);
    let atom = |x: &Sexp| -> Result<String> {
        match x {
            Sexp::Atom(w, _) => Ok(w.clone()),
            _ => Err(Error::Parse("expected an atom".into())),
        }
    };
    let num = |x: &Sexp| -> Result<usize> {
        atom(x)?.parse().map_err(|_| Error::Parse("expected a number".into()))
    };
    for item in &items[1..] {
        let parts = match item {
            Sexp::List(parts, _) => parts,
            _ => return Err(Error::Parse("expected a (…) clause".into())),
        };
        match atom(&parts[0])?.as_str() {
            "universe" => s.universe = num(&parts[1])?,
            "unary" => {
                let name = atom(&parts[1])?;
                for p in &parts[2..] {
                    s.add_unary(&name, num(p)?);
                }
            }
            "rel" => {
                let name = atom(&parts[1])?;
                for p in &parts[2..] {
                    match p {
                        Sexp::List(vs, _) => {
                            let tuple = vs.iter().map(num).collect::<Result<Vec<_>>>()?;
                            s.add_tuple(&name, tuple);
                        }
                        _ => return Err(Error::Parse("rel tuples must be lists".into())),
                    }
                }
            }
            "const" => {
                let name = atom(&parts[1])?;
                let v = num(&parts[2])?;
                s.constants.insert(name, v);
            }
            other => return Err(Error::Parse(format!("unknown clause '{other}'"))),
        }
    }
    for (_, set) in &s.unary {
        if set.iter().any(|&v| v >= s.universe) {
            return Err(Error::Parse("unary element out of universe".into()));
        }
    }
    for (_, tuples) in &s.relations {
        if tuples.iter().flatten().any(|&v| v >= s.universe) {
            return Err(Error::Parse("tuple element out of universe".into()));
        }
    }
    Ok(s)
}

pub fn print_structure(s: &Structure) -> String {
    let mut out = format!("(structure (universe {})", s.universe);
    for (name, set) in &s.unary {
        out.push_str(&format!("\n  (unary {name}"));
        for v in set {
            out.push_str(&format!(" {v}"));
        }
        out.push(')');
    }
    for (name, tuples) in &s.relations {
        out.push_str(&format!("\n  (rel {name}"));
        for t in tuples {
            out.push_str(" (");
            out.push_str(
                &t.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            out.push(')');
        }
        out.push(')');
    }
    for (name, v) in &s.constants {
        out.push_str(&format!("\n  (const {name} {v})"));
    }
    out.push(')');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::tree::{path_tree, TreeStructure};

    #[test]
    fn single_p_node_has_a_p_witness() {
        let t = TreeStructure::singleton(["P0"]);
        assert!(model_check(&t, &parse_formula("(ex y (P0 y))").unwrap()).unwrap());
        assert!(!model_check(&t, &parse_formula("(ex y (P1 y))").unwrap()).unwrap());
    }

    #[test]
    fn two_node_path_well_foundedness_example() {
        // (2-node path, X = ∅) ⊨ ∀y(Eyx → Xy) is false at either node.
        let f = parse_formula("(all y (or (not (E y x)) (X y)))").unwrap();
        for v in 0..2 {
            let t = path_tree(2)
                .with_x_set(Default::default())
                .with_x_vertex(v);
            assert!(!model_check(&t, &f).unwrap());
        }
    }

    #[test]
    fn so_quantifier_nonempty_universe() {
        // ∀Y(∀y Yy → ∃y Yy) holds exactly on nonempty trees.
        let f =
            parse_formula("(all2 Y (or (not (all y (Y y))) (ex y (Y y))))").unwrap();
        assert!(model_check(&path_tree(3), &f).unwrap());
        assert!(!model_check(&TreeStructure::empty(), &f).unwrap());
    }

    #[test]
    fn succ_atoms_follow_directions() {
        let t = path_tree(3);
        let s = t.to_structure();
        assert!(s.has_tuple("succ1", &[0, 1]));
        assert!(s.has_tuple("succ2", &[1, 0]));
        assert!(!s.has_tuple("succ1", &[1, 0]));
    }

    #[test]
    fn so_cap_is_enforced() {
        let f = parse_formula("(ex2 Y (ex y (Y y)))").unwrap();
        let t = path_tree(SO_ORACLE_CAP + 1);
        assert!(matches!(model_check(&t, &f), Err(Error::Resource(_))));
    }

    #[test]
    fn structure_format_roundtrip() {
        let mut s = Structure::new(4);
        s.add_edge(0, 1);
        s.add_edge(1, 2);
        s.add_edge(2, 3);
        s.add_edge(3, 0);
        s.add_unary("P0", 2);
        s.constants.insert("c1".into(), 0);
        let text = print_structure(&s);
        assert_eq!(parse_structure(&text).unwrap(), s);
    }

    #[test]
    fn isomorphism_detects_cycles_vs_paths() {
        let mut cycle = Structure::new(4);
        for i in 0..4 {
            cycle.add_edge(i, (i + 1) % 4);
        }
        let mut path = Structure::new(4);
        for i in 0..3 {
            path.add_edge(i, i + 1);
        }
        let mut cycle2 = Structure::new(4);
        for (i, j) in [(2, 1), (1, 3), (3, 0), (0, 2)] {
            cycle2.add_edge(i, j);
        }
        assert!(isomorphic(&cycle, &cycle2));
        assert!(!isomorphic(&cycle, &path));
    }
}
