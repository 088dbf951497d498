//! Weighted tree automata with min–max-sum cost semantics.
//!
//! A weighted automaton runs over a finite labelled tree viewed as a
//! directed tree from a root; a transition names a letter, the multiset of
//! child states, a target state, and a weight. The cost of a run along a
//! branch is the sum of the transition weights on it, the cost of a run is
//! the maximum over branches, and the cost of a tree is the minimum over
//! accepting runs (`None` encodes ∞, i.e. rejection). On finite trees no
//! priority function is needed.
//!
//! The module also carries the dependency-path weight automaton: a weighted
//! automaton over the two letter bits `P` (vertex on the dependency path)
//! and `J` (jump on the path at the vertex) that checks the marked set is a
//! single nonempty path, tracks which subtrees contain a jump of the path
//! ("active"), and charges weight 1 exactly when the vertex has a jump or
//! at least two active children. Its cost on a proposal, minimized over
//! candidate dependency paths, sandwiches the proposal rank r between
//! ⌈½·log₂ r⌉ and r.

use std::collections::{BTreeMap, BTreeSet};

use crate::annotation::{dependencies, jumps, AnnotatedTree};
use crate::tree::{enumerate_trees, vertex_subsets, TreeStructure, Vertex, DIRS};
use crate::types::TypeBasis;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Automata and cost
// ---------------------------------------------------------------------------

/// One transition: at a vertex carrying `letter`, whose children assume
/// each state exactly as often as `children` demands (absent states zero
/// times), the automaton may enter `state` at cost `weight`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WeightedTransition {
    pub letter: u64,
    pub children: BTreeMap<usize, usize>,
    pub state: usize,
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedTreeAutomaton {
    /// Sorted bit names; bit i of a letter is set when name i holds at the
    /// vertex ("X" reads the X-set, anything else is a label).
    pub alphabet: Vec<String>,
    pub states: usize,
    /// States the root transition may end in.
    pub initial: BTreeSet<usize>,
    pub transitions: Vec<WeightedTransition>,
}

impl WeightedTreeAutomaton {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet.len() > 16 {
            return Err(Error::Resource("alphabet exceeds 16 bits".into()));
        }
        for q in self.initial.iter().chain(
            self.transitions
                .iter()
                .flat_map(|t| t.children.keys().chain(std::iter::once(&t.state))),
        ) {
            if *q >= self.states {
                return Err(Error::Invalid(format!("state {q} out of range")));
            }
        }
        Ok(())
    }

    fn letter_at(&self, t: &TreeStructure, v: Vertex) -> u64 {
        let mut bits = 0u64;
        for (i, name) in self.alphabet.iter().enumerate() {
            let set = match name.as_str() {
                "X" => t.in_x(v),
                _ => t.labels(v).contains(name),
            };
            if set {
                bits |= 1 << i;
            }
        }
        bits
    }
}

/// The root used to direct an input tree: its x-vertex when present,
/// vertex 0 otherwise.
pub fn input_root(t: &TreeStructure) -> Vertex {
    t.x_vertex().unwrap_or(0)
}

/// Minimal cost over accepting runs; `None` when no run accepts. Dynamic
/// program, bottom-up: for each vertex and state, the least achievable
/// maximum branch weight of a run on the subtree ending in that state.
pub fn cost(a: &WeightedTreeAutomaton, t: &TreeStructure) -> Result<Option<usize>> {
    a.validate()?;
    if t.is_empty() {
        return Err(Error::Invalid("weighted automata run on nonempty trees".into()));
    }
    let table = cost_table(a, t, input_root(t), None);
    Ok(a
        .initial
        .iter()
        .filter_map(|q| table[*q])
        .min())
}

/// best[q] = minimal max-branch weight of a subtree run ending in q.
fn cost_table(
    a: &WeightedTreeAutomaton,
    t: &TreeStructure,
    v: Vertex,
    parent: Option<Vertex>,
) -> Vec<Option<usize>> {
    let kids: Vec<Vertex> = DIRS
        .iter()
        .filter_map(|&d| t.neighbor(v, d))
        .filter(|&w| Some(w) != parent)
        .collect();
    let kid_tables: Vec<Vec<Option<usize>>> = kids
        .iter()
        .map(|&w| cost_table(a, t, w, Some(v)))
        .collect();
    let letter = a.letter_at(t, v);
    let mut best = vec![None; a.states];
    // Enumerate joint child-state choices; at most states^3 of them.
    let mut assignments: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    for table in &kid_tables {
        let mut next = Vec::new();
        for (states, worst) in &assignments {
            for (q, c) in table.iter().enumerate() {
                if let Some(c) = c {
                    let mut s = states.clone();
                    s.push(q);
                    next.push((s, (*worst).max(*c)));
                }
            }
        }
        assignments = next;
    }
    for tr in &a.transitions {
        if tr.letter != letter {
            continue;
        }
        for (states, worst) in &assignments {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &q in states {
                *counts.entry(q).or_default() += 1;
            }
            if counts != tr.children {
                continue;
            }
            let total = tr.weight + worst;
            if best[tr.state].map_or(true, |b| total < b) {
                best[tr.state] = Some(total);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Limitedness probing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeVerdict {
    /// All accepted trees up to the cap cost at most N; says nothing beyond.
    LimitedUpTo(usize, usize),
    /// The maximal cost kept growing with the input size.
    GrowthSuspected(String),
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// size → largest finite cost among accepted trees of that size.
    pub table: Vec<(usize, Option<usize>)>,
    pub accepted: usize,
    pub verdict: ProbeVerdict,
}

/// Exhaust all labelled trees up to `size_cap` (with X-subsets when the
/// alphabet reads X) and tabulate the maximal cost per size. The verdict
/// never claims limitedness beyond the cap nor unlimitedness at all.
pub fn limitedness_probe(
    a: &WeightedTreeAutomaton,
    size_cap: usize,
) -> Result<ProbeReport> {
    a.validate()?;
    if size_cap == 0 || size_cap > 6 {
        return Err(Error::Resource(format!(
            "probe cap {size_cap} outside the supported range 1..=6"
        )));
    }
    let preds: Vec<String> = a
        .alphabet
        .iter()
        .filter(|n| n.as_str() != "X")
        .cloned()
        .collect();
    let with_x = a.alphabet.iter().any(|n| n == "X");
    let mut per_size: BTreeMap<usize, Option<usize>> = (1..=size_cap).map(|s| (s, None)).collect();
    let mut accepted = 0usize;
    for t in enumerate_trees(size_cap, &preds, size_cap)? {
        let variants: Vec<TreeStructure> = if with_x {
            vertex_subsets(t.len())
                .into_iter()
                .map(|xs| t.clone().with_x_set(xs))
                .collect()
        } else {
            vec![t.clone()]
        };
        for m in variants {
            if let Some(c) = cost(a, &m)? {
                accepted += 1;
                let entry = per_size.get_mut(&m.len()).unwrap();
                if entry.map_or(true, |b| c > b) {
                    *entry = Some(c);
                }
            }
        }
    }
    let table: Vec<(usize, Option<usize>)> = per_size.into_iter().collect();
    let maxima: Vec<usize> = table.iter().filter_map(|(_, c)| *c).collect();
    let strictly_growing = maxima.len() >= 3
        && maxima.windows(2).all(|w| w[0] <= w[1])
        && maxima[maxima.len() - 1] > maxima[maxima.len() - 3];
    let verdict = if strictly_growing {
        ProbeVerdict::GrowthSuspected(format!(
            "max cost still rising at the cap: {maxima:?}"
        ))
    } else {
        ProbeVerdict::LimitedUpTo(size_cap, maxima.into_iter().max().unwrap_or(0))
    };
    Ok(ProbeReport {
        table,
        accepted,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// The dependency-path weight automaton
// ---------------------------------------------------------------------------

/// Letter bit names of the path automaton: `J` = jump of the path at this
/// vertex, `P` = vertex on the path. Sorted, so J is bit 0 and P bit 1.
pub const PATH_ALPHABET: [&str; 2] = ["J", "P"];

// Path-shape component of a state: the marked vertices seen in the subtree
// form no path piece yet (N), an open piece ending at the current vertex
// (O), or a completed piece that cannot be extended (C).
const N: usize = 0;
const O: usize = 1;
const C: usize = 2;

fn encode_state(shape: usize, active: bool) -> usize {
    shape * 2 + usize::from(active)
}

/// The weighted automaton charging the rank of a dependency path: over the
/// `J`/`P` bits it accepts exactly the trees whose `P`-set is one nonempty
/// path with `J` only on it, and it pays 1 whenever a vertex has a jump or
/// at least two children with a jump below them. States track the path
/// shape (none / open at the vertex / closed) and the active bit.
pub fn build_path_weight_automaton() -> WeightedTreeAutomaton {
    let mut transitions = Vec::new();
    // All child multisets over the 6 states with at most 3 children.
    let mut multisets: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..3 {
        let mut next = multisets.clone();
        for m in &multisets {
            let lo = m.last().copied().unwrap_or(0);
            for q in lo..6 {
                let mut m2 = m.clone();
                m2.push(q);
                next.push(m2);
            }
        }
        multisets = next;
        multisets.sort();
        multisets.dedup();
    }
    for letter in 0u64..4 {
        let jump = letter & 1 != 0;
        let on_path = letter & 2 != 0;
        if jump && !on_path {
            continue; // jumps of the path lie on the path
        }
        for m in &multisets {
            let opens = m.iter().filter(|&&q| q / 2 == O).count();
            let closes = m.iter().filter(|&&q| q / 2 == C).count();
            let actives = m.iter().filter(|&&q| q % 2 == 1).count();
            let shape = if on_path {
                // The vertex extends open pieces: 0 below (an endpoint),
                // 1 below (continues up), or 2 below (the bend; closed).
                // A closed piece elsewhere would be a second component.
                match (opens, closes) {
                    (0, 0) => O,
                    (1, 0) => O,
                    (2, 0) => C,
                    _ => continue,
                }
            } else {
                // The vertex is off the path: at most one piece below, and
                // an open piece ends here.
                match (opens, closes) {
                    (0, 0) => N,
                    (1, 0) => C,
                    (0, 1) => C,
                    _ => continue,
                }
            };
            let active = jump || actives > 0;
            let weight = usize::from(jump || actives >= 2);
            let mut children = BTreeMap::new();
            for &q in m {
                *children.entry(q).or_default() += 1;
            }
            transitions.push(WeightedTransition {
                letter,
                children,
                state: encode_state(shape, active),
                weight,
            });
        }
    }
    WeightedTreeAutomaton {
        alphabet: PATH_ALPHABET.iter().map(|s| s.to_string()).collect(),
        states: 6,
        // Accept when the whole tree contains exactly one path piece.
        initial: [O, C].iter().flat_map(|&s| [encode_state(s, false), encode_state(s, true)]).collect(),
        transitions,
    }
}

/// Encode a (proposal, path) pair as an input for the path automaton: the
/// tree re-labelled with `P` on the path and `J` on its jumps, directed
/// from the proposal vertex.
pub fn path_input(
    tree: &TreeStructure,
    root: Vertex,
    path: &BTreeSet<Vertex>,
    jump_set: &BTreeSet<Vertex>,
) -> TreeStructure {
    let mut t = tree.clone();
    t.set_x_set(None);
    for v in 0..t.len() {
        t.labels_mut(v).clear();
        if path.contains(&v) {
            t.labels_mut(v).insert("P".into());
            if jump_set.contains(&v) {
                t.labels_mut(v).insert("J".into());
            }
        }
    }
    t.with_x_vertex(root)
}

/// ⌈½·log₂ r⌉ in exact integer arithmetic: the least k with 4^k ≥ r.
pub fn ceil_half_log2(r: usize) -> usize {
    let mut k = 0usize;
    let mut pow = 1usize;
    while pow < r {
        pow *= 4;
        k += 1;
    }
    k
}

/// The unique tree path between two vertices, endpoints included.
fn tree_path(t: &TreeStructure, from: Vertex, to: Vertex) -> BTreeSet<Vertex> {
    let mut parent: BTreeMap<Vertex, Vertex> = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([from]);
    let mut seen = BTreeSet::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for d in DIRS {
            if let Some(w) = t.neighbor(u, d) {
                if seen.insert(w) {
                    parent.insert(w, u);
                    queue.push_back(w);
                }
            }
        }
    }
    let mut out = BTreeSet::from([to]);
    let mut u = to;
    while u != from {
        u = parent[&u];
        out.insert(u);
    }
    out
}

/// All minimal dependency chains from the jump at `v` down to a base jump,
/// as vertex sequences, capped in number.
fn minimal_chains(
    deps: &BTreeMap<Vertex, BTreeSet<Vertex>>,
    ranks: &BTreeMap<Vertex, usize>,
    v: Vertex,
    cap: usize,
) -> Vec<Vec<Vertex>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![v]];
    while let Some(chain) = stack.pop() {
        if out.len() >= cap {
            break;
        }
        let last = *chain.last().unwrap();
        let r = ranks[&last];
        if r == 1 {
            out.push(chain);
            continue;
        }
        for &w in &deps[&last] {
            if ranks.get(&w) == Some(&(r - 1)) {
                let mut next = chain.clone();
                next.push(w);
                stack.push(next);
            }
        }
    }
    out
}

/// Outcome of checking ⌈½·log₂ r⌉ ≤ cost ≤ r on one proposal.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub vertex: Vertex,
    pub rank: usize,
    /// Minimal path-automaton cost over the candidate dependency paths.
    pub cost: Option<usize>,
    pub ok: bool,
    pub note: Option<String>,
}

/// Verify the rank–cost sandwich on every finite-rank proposal vertex of an
/// annotated tree: enumerate minimal dependency chains, mark the induced
/// tree paths, and take the cheapest accepted input. Instances where every
/// candidate path is rejected are reported as skipped, not failed.
pub fn verify_log_bounds(a: &AnnotatedTree, basis: &TypeBasis) -> Result<Vec<BoundCheck>> {
    verify_log_bounds_with(a, basis, &build_path_weight_automaton())
}

/// As [`verify_log_bounds`], but against a caller-supplied weight
/// automaton — used to confirm that a wrong automaton fails the check.
pub fn verify_log_bounds_with(
    a: &AnnotatedTree,
    basis: &TypeBasis,
    automaton: &WeightedTreeAutomaton,
) -> Result<Vec<BoundCheck>> {
    let jump_map = jumps(a, basis)?;
    let jump_set: BTreeSet<Vertex> = jump_map.keys().copied().collect();
    let deps = dependencies(a, basis)?;
    let ranks = crate::annotation::ranks(a, basis)?;
    let mut out = Vec::new();
    for (&v, &r) in &ranks {
        let mut best: Option<usize> = None;
        for chain in minimal_chains(&deps, &ranks, v, 64) {
            let mut path = BTreeSet::new();
            for pair in chain.windows(2) {
                path.extend(tree_path(&a.tree, pair[0], pair[1]));
            }
            path.insert(v);
            let input = path_input(&a.tree, v, &path, &jump_set);
            if let Some(c) = cost(automaton, &input)? {
                if best.map_or(true, |b| c < b) {
                    best = Some(c);
                }
            }
        }
        let (ok, note) = match best {
            Some(c) => (ceil_half_log2(r) <= c && c <= r, None),
            None => (true, Some("every candidate path was rejected; skipped".into())),
        };
        out.push(BoundCheck {
            vertex: v,
            rank: r,
            cost: best,
            ok,
            note,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization (.wta)
// ---------------------------------------------------------------------------

pub fn print_wta(a: &WeightedTreeAutomaton) -> String {
    let mut out = String::from("wta\n");
    out.push_str(&format!("alphabet {}\n", a.alphabet.join(" ")));
    out.push_str(&format!("states {}\n", a.states));
    let init: Vec<String> = a.initial.iter().map(|q| q.to_string()).collect();
    out.push_str(&format!("initial {}\n", init.join(" ")));
    for t in &a.transitions {
        let mut kids = Vec::new();
        for (&q, &c) in &t.children {
            for _ in 0..c {
                kids.push(q.to_string());
            }
        }
        out.push_str(&format!(
            "trans {} {} -> {} : {}\n",
            t.letter,
            if kids.is_empty() { "-".into() } else { kids.join(" ") },
            t.state,
            t.weight
        ));
    }
    out.push_str("end\n");
    out
}

pub fn parse_wta(text: &str) -> Result<WeightedTreeAutomaton> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("wta") {
        return Err(Error::Parse("expected 'wta' header".into()));
    }
    let mut a = WeightedTreeAutomaton {
        alphabet: Vec::new(),
        states: 0,
        initial: BTreeSet::new(),
        transitions: Vec::new(),
    };
    let num = |w: &str| -> Result<usize> {
        w.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad number '{w}'")))
    };
    let mut ended = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            "alphabet" => {
                a.alphabet = words[1..].iter().map(|s| s.to_string()).collect();
                if !a.alphabet.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::Parse("alphabet must be sorted and duplicate-free".into()));
                }
            }
            "states" if words.len() == 2 => a.states = num(words[1])?,
            "initial" => {
                a.initial = words[1..]
                    .iter()
                    .map(|w| num(w))
                    .collect::<Result<BTreeSet<usize>>>()?;
            }
            "trans" => {
                let arrow = words
                    .iter()
                    .position(|&w| w == "->")
                    .ok_or_else(|| Error::Parse(format!("missing '->' in '{line}'")))?;
                let colon = words
                    .iter()
                    .position(|&w| w == ":")
                    .ok_or_else(|| Error::Parse(format!("missing ':' in '{line}'")))?;
                if arrow < 2 || colon != arrow + 2 || words.len() != colon + 2 {
                    return Err(Error::Parse(format!("bad transition '{line}'")));
                }
                let letter = num(words[1])? as u64;
                let mut children: BTreeMap<usize, usize> = BTreeMap::new();
                for w in &words[2..arrow] {
                    if *w == "-" {
                        continue;
                    }
                    *children.entry(num(w)?).or_default() += 1;
                }
                a.transitions.push(WeightedTransition {
                    letter,
                    children,
                    state: num(words[arrow + 1])?,
                    weight: num(words[colon + 1])?,
                });
            }
            "end" if words.len() == 1 => {
                ended = true;
                break;
            }
            _ => return Err(Error::Parse(format!("bad line '{line}'"))),
        }
    }
    if !ended {
        return Err(Error::Parse("missing 'end' line".into()));
    }
    a.validate()?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::annotate;
    use crate::formula::parse_formula;
    use crate::tree::path_tree;
    use crate::types::shared_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis() -> &'static TypeBasis {
        shared_basis(1)
    }

    fn seeded_path(n: usize) -> TreeStructure {
        let mut t = path_tree(n);
        t.labels_mut(0).insert("P0".into());
        t
    }

    /// A one-state automaton over an empty alphabet that accepts every
    /// tree, paying `weight` at each vertex.
    fn unary_automaton(weight: usize) -> WeightedTreeAutomaton {
        let transitions = (0..=3)
            .map(|k| WeightedTransition {
                letter: 0,
                children: if k == 0 {
                    BTreeMap::new()
                } else {
                    BTreeMap::from([(0, k)])
                },
                state: 0,
                weight,
            })
            .collect();
        WeightedTreeAutomaton {
            alphabet: Vec::new(),
            states: 1,
            initial: BTreeSet::from([0]),
            transitions,
        }
    }

    /// Independent cost oracle: enumerate every state assignment outright,
    /// take the cheapest matching transition at each vertex, and fold
    /// max-over-branches by hand.
    fn oracle_cost(a: &WeightedTreeAutomaton, t: &TreeStructure) -> Option<usize> {
        let n = t.len();
        let root = input_root(t);
        let mut best: Option<usize> = None;
        let mut sigma = vec![0usize; n];
        loop {
            if a.initial.contains(&sigma[root]) {
                if let Some(c) = oracle_branch(a, t, &sigma, root, None) {
                    if best.map_or(true, |b| c < b) {
                        best = Some(c);
                    }
                }
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                sigma[i] += 1;
                if sigma[i] < a.states {
                    break;
                }
                sigma[i] = 0;
                i += 1;
            }
        }
    }

    fn oracle_branch(
        a: &WeightedTreeAutomaton,
        t: &TreeStructure,
        sigma: &[usize],
        v: Vertex,
        parent: Option<Vertex>,
    ) -> Option<usize> {
        let kids: Vec<Vertex> = DIRS
            .iter()
            .filter_map(|&d| t.neighbor(v, d))
            .filter(|&w| Some(w) != parent)
            .collect();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &w in &kids {
            *counts.entry(sigma[w]).or_default() += 1;
        }
        let letter = a.letter_at(t, v);
        let w_here = a
            .transitions
            .iter()
            .filter(|tr| tr.letter == letter && tr.state == sigma[v] && tr.children == counts)
            .map(|tr| tr.weight)
            .min()?;
        let mut deepest = 0usize;
        for &w in &kids {
            deepest = deepest.max(oracle_branch(a, t, sigma, w, Some(v))?);
        }
        Some(w_here + deepest)
    }

    /// Independent oracle for the path automaton over P/J labels.
    fn oracle_path(t: &TreeStructure) -> Option<usize> {
        let p: BTreeSet<Vertex> = (0..t.len())
            .filter(|&v| t.labels(v).contains("P"))
            .collect();
        let j: BTreeSet<Vertex> = (0..t.len())
            .filter(|&v| t.labels(v).contains("J"))
            .collect();
        if p.is_empty() || !j.is_subset(&p) {
            return None;
        }
        // P must induce one path: connected, every member with at most two
        // P-neighbours.
        let degree = |v: Vertex| {
            DIRS.iter()
                .filter(|&&d| t.neighbor(v, d).is_some_and(|w| p.contains(&w)))
                .count()
        };
        if p.iter().any(|&v| degree(v) > 2) {
            return None;
        }
        let start = *p.iter().next().unwrap();
        let mut seen = BTreeSet::from([start]);
        let mut queue = vec![start];
        while let Some(u) = queue.pop() {
            for d in DIRS {
                if let Some(w) = t.neighbor(u, d) {
                    if p.contains(&w) && seen.insert(w) {
                        queue.push(w);
                    }
                }
            }
        }
        if seen != p {
            return None;
        }
        Some(oracle_charge(t, &j, input_root(t), None))
    }

    fn oracle_charge(
        t: &TreeStructure,
        j: &BTreeSet<Vertex>,
        v: Vertex,
        parent: Option<Vertex>,
    ) -> usize {
        let kids: Vec<Vertex> = DIRS
            .iter()
            .filter_map(|&d| t.neighbor(v, d))
            .filter(|&w| Some(w) != parent)
            .collect();
        let has_jump = |w: Vertex| -> bool {
            let mut stack = vec![(w, v)];
            while let Some((u, from)) = stack.pop() {
                if j.contains(&u) {
                    return true;
                }
                for d in DIRS {
                    if let Some(x) = t.neighbor(u, d) {
                        if x != from {
                            stack.push((x, u));
                        }
                    }
                }
            }
            false
        };
        let active = kids.iter().filter(|&&w| has_jump(w)).count();
        let charge = usize::from(j.contains(&v) || active >= 2);
        charge
            + kids
                .iter()
                .map(|&w| oracle_charge(t, j, w, Some(v)))
                .max()
                .unwrap_or(0)
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (WeightedTreeAutomaton, TreeStructure) {
        let states = rng.gen_range(1..=4);
        let mut transitions = Vec::new();
        for letter in 0u64..2 {
            for q in 0..states {
                for _ in 0..rng.gen_range(1..=4) {
                    let mut children: BTreeMap<usize, usize> = BTreeMap::new();
                    for _ in 0..rng.gen_range(0..=3usize) {
                        *children.entry(rng.gen_range(0..states)).or_default() += 1;
                    }
                    transitions.push(WeightedTransition {
                        letter,
                        children,
                        state: q,
                        weight: rng.gen_range(0..=3),
                    });
                }
            }
        }
        let initial: BTreeSet<usize> = (0..states).filter(|_| rng.gen_bool(0.6)).collect();
        let a = WeightedTreeAutomaton {
            alphabet: vec!["a".into()],
            states,
            initial,
            transitions,
        };
        let size = rng.gen_range(1..=6);
        let t = crate::tree::random_tree(rng, size, &["a".to_string()]);
        (a, t)
    }

    #[test]
    fn zero_weight_runs_cost_nothing() {
        let a = unary_automaton(0);
        for t in enumerate_trees(4, &[], 4).unwrap() {
            assert_eq!(cost(&a, &t).unwrap(), Some(0));
        }
    }

    #[test]
    fn unit_weights_charge_the_depth() {
        let a = unary_automaton(1);
        for n in 1..=7 {
            assert_eq!(cost(&a, &path_tree(n)).unwrap(), Some(n));
        }
        // A star is shallow no matter how wide.
        let mut star = TreeStructure::default();
        let hub = star.add_vertex(Vec::<String>::new());
        for d in DIRS {
            let leaf = star.add_vertex(Vec::<String>::new());
            star.add_edge(hub, d, leaf, 1).unwrap();
        }
        assert_eq!(cost(&a, &star).unwrap(), Some(2));
    }

    #[test]
    fn dynamic_program_matches_the_assignment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57a7e5);
        let mut accepted = 0;
        for _ in 0..400 {
            let (a, t) = random_instance(&mut rng);
            let got = cost(&a, &t).unwrap();
            assert_eq!(got, oracle_cost(&a, &t));
            if got.is_some() {
                accepted += 1;
            }
        }
        assert!(accepted > 50, "corpus too degenerate: {accepted} accepted");
    }

    #[test]
    fn raising_weights_never_lowers_the_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
        for _ in 0..100 {
            let (a, t) = random_instance(&mut rng);
            let before = cost(&a, &t).unwrap();
            let mut b = a.clone();
            for tr in &mut b.transitions {
                tr.weight += rng.gen_range(0..=2);
            }
            let after = cost(&b, &t).unwrap();
            match (before, after) {
                (Some(x), Some(y)) => assert!(x <= y),
                (None, y) => assert_eq!(y, None),
                (Some(_), None) => panic!("weights must not change acceptance"),
            }
        }
    }

    #[test]
    fn probe_verdicts_separate_flat_and_growing_costs() {
        let flat = limitedness_probe(&unary_automaton(0), 5).unwrap();
        assert_eq!(flat.verdict, ProbeVerdict::LimitedUpTo(5, 0));
        let growing = limitedness_probe(&unary_automaton(1), 5).unwrap();
        assert!(matches!(growing.verdict, ProbeVerdict::GrowthSuspected(_)));
        // A weight-1 transition into a dead state never fires.
        let mut dead = unary_automaton(0);
        dead.states = 2;
        dead.transitions.push(WeightedTransition {
            letter: 0,
            children: BTreeMap::new(),
            state: 1,
            weight: 1,
        });
        let report = limitedness_probe(&dead, 4).unwrap();
        assert_eq!(report.verdict, ProbeVerdict::LimitedUpTo(4, 0));
    }

    #[test]
    fn path_automaton_agrees_with_the_marking_oracle() {
        let a = build_path_weight_automaton();
        let mut checked = 0;
        let mut accepted = 0;
        for t in enumerate_trees(4, &[], 4).unwrap() {
            for p in vertex_subsets(t.len()) {
                for jset in vertex_subsets(t.len()) {
                    if !jset.is_subset(&p) {
                        continue;
                    }
                    let mut m = t.clone();
                    for &v in &p {
                        m.labels_mut(v).insert("P".into());
                    }
                    for &v in &jset {
                        m.labels_mut(v).insert("J".into());
                    }
                    let got = cost(&a, &m).unwrap();
                    assert_eq!(got, oracle_path(&m), "tree {t:?} path {p:?} jumps {jset:?}");
                    checked += 1;
                    accepted += usize::from(got.is_some());
                }
            }
        }
        assert!(checked > 500 && accepted > 20);
    }

    #[test]
    fn ranks_sit_between_the_log_and_identity_bounds() {
        let phi = crate::fixpoint::seed_distance_formula();
        for n in 1..=6 {
            let a = annotate(&phi, &seeded_path(n), n + 1, basis()).unwrap();
            let checks = verify_log_bounds(&a, basis()).unwrap();
            assert_eq!(checks.len(), n);
            for c in &checks {
                assert!(c.ok, "vertex {} rank {} cost {:?}", c.vertex, c.rank, c.cost);
                assert!(c.note.is_none(), "no instance should be skipped here");
            }
            // The seeded chain jumps at every vertex, so the cheapest path
            // matches the rank exactly.
            assert!(checks.iter().any(|c| c.cost == Some(c.rank)));
        }
        let top = parse_formula("true").unwrap();
        for t in enumerate_trees(3, &[], 3).unwrap() {
            for c in verify_log_bounds(&annotate(&top, &t, 2, basis()).unwrap(), basis()).unwrap() {
                assert_eq!(c.rank, 1);
                assert!(c.ok && c.cost.map_or(false, |x| x <= 1));
            }
        }
    }

    #[test]
    fn a_faulty_weighting_breaks_the_upper_bound() {
        let mut faulty = build_path_weight_automaton();
        for tr in &mut faulty.transitions {
            tr.weight = 1;
        }
        let top = parse_formula("true").unwrap();
        let a = annotate(&top, &path_tree(4), 2, basis()).unwrap();
        let checks = verify_log_bounds_with(&a, basis(), &faulty).unwrap();
        assert!(
            checks.iter().any(|c| !c.ok),
            "charging every vertex must overshoot some rank"
        );
    }

    #[test]
    fn automaton_text_round_trips() {
        for a in [
            unary_automaton(1),
            build_path_weight_automaton(),
        ] {
            let text = print_wta(&a);
            let back = parse_wta(&text).unwrap();
            let mut left = a.clone();
            left.transitions.sort();
            let mut right = back.clone();
            right.transitions.sort();
            assert_eq!(left, right);
        }
        assert!(parse_wta("wta\nstates 1\ninitial 0\n").is_err());
        assert!(parse_wta("wta\nalphabet a\nstates 1\ninitial 3\nend\n").is_err());
    }
}
