//! Deterministic bottom-up tree automata over rooted, direction-indexed
//! encodings of labeled ternary trees.
//!
//! A tree is encoded by choosing a root; every node then carries a letter
//! `(bits, updir)` where `bits` is a bitmask over a sorted alphabet of unary
//! names (labels, set variables, marked constants) and `updir` is the
//! direction from the node back to its parent (0 at the root).  Children
//! occupy slots indexed by their direction at the parent.  An encoding is
//! well formed when a node's updir never collides with an occupied child
//! slot.  Automata built by the compiler accept or reject independently of
//! the chosen root, so they decide properties of the underlying tree.
//!
//! Transition maps are partial: a missing transition goes to an implicit
//! sink whose acceptance is a stored flag, which makes complementation a
//! constant-time flip.

use crate::tree::{TreeStructure, Vertex, DIRS};
use crate::{Error, Result};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// A child slot holds a state or is absent.
pub type Child = Option<usize>;

/// Transition key: letter bitmask, updir, and the three child slots.
pub type Key = (u64, u8, [Child; 3]);

/// Bound on the number of states any construction may reach.
pub const STATE_CAP: usize = 1_000_000;

/// Bound on alphabet bits (letters are enumerated as 2^bits masks).
pub const BIT_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeAutomaton {
    /// Sorted unary names; bit i of a letter corresponds to `alphabet[i]`.
    pub alphabet: Vec<String>,
    pub states: usize,
    pub transitions: BTreeMap<Key, usize>,
    pub accepting: BTreeSet<usize>,
    /// Whether the implicit sink (target of missing transitions) accepts.
    pub sink_accepting: bool,
    /// Whether the empty tree is in the language.
    pub accepts_empty: bool,
}

impl TreeAutomaton {
    pub fn letter_count(&self) -> u64 {
        1u64 << self.alphabet.len()
    }

    pub fn bit_of(&self, name: &str) -> Option<usize> {
        self.alphabet.iter().position(|n| n == name)
    }

    fn check_bits(alphabet: &[String]) -> Result<()> {
        if alphabet.len() > BIT_CAP {
            return Err(Error::Resource(format!(
                "alphabet of {} bits exceeds the cap of {BIT_CAP}",
                alphabet.len()
            )));
        }
        Ok(())
    }

    /// The automaton accepting every tree over `alphabet` (including the
    /// empty one).
    pub fn all(alphabet: Vec<String>) -> Result<TreeAutomaton> {
        Self::check_bits(&alphabet)?;
        let mut a = TreeAutomaton {
            alphabet,
            states: 1,
            transitions: BTreeMap::new(),
            accepting: [0].into(),
            sink_accepting: false,
            accepts_empty: true,
        };
        for bits in 0..a.letter_count() {
            for updir in 0..=3u8 {
                for mask in 0..8usize {
                    let children = mask_children(mask, 0);
                    a.transitions.insert((bits, updir, children), 0);
                }
            }
        }
        Ok(a)
    }

    /// The automaton accepting nothing.
    pub fn none(alphabet: Vec<String>) -> Result<TreeAutomaton> {
        Self::check_bits(&alphabet)?;
        Ok(TreeAutomaton {
            alphabet,
            states: 0,
            transitions: BTreeMap::new(),
            accepting: BTreeSet::new(),
            sink_accepting: false,
            accepts_empty: false,
        })
    }

    pub fn complement(&self) -> TreeAutomaton {
        let mut out = self.clone();
        out.accepting = (0..self.states)
            .filter(|q| !self.accepting.contains(q))
            .collect();
        out.sink_accepting = !self.sink_accepting;
        out.accepts_empty = !self.accepts_empty;
        out
    }

    /// Run the automaton on `t` rooted at `root`; `None` means the run hit
    /// the sink.
    fn run(&self, t: &TreeStructure, v: Vertex, updir: u8) -> Option<usize> {
        let mut children: [Child; 3] = [None, None, None];
        for d in DIRS {
            if d == updir {
                continue;
            }
            if let Some(w) = t.neighbor(v, d) {
                match self.run(t, w, t.direction_at(w, v).unwrap()) {
                    Some(q) => children[d as usize - 1] = Some(q),
                    None => return None,
                }
            }
        }
        let bits = self.letter_at(t, v);
        self.transitions.get(&(bits, updir, children)).copied()
    }

    fn letter_at(&self, t: &TreeStructure, v: Vertex) -> u64 {
        let mut bits = 0u64;
        for (i, name) in self.alphabet.iter().enumerate() {
            let set = match name.as_str() {
                "X" => t.in_x(v),
                _ => t.labels(v).contains(name) || t.constant(name) == Some(v),
            };
            if set {
                bits |= 1 << i;
            }
        }
        bits
    }

    /// Membership of the (unrooted) tree, rooting at vertex 0; compiled
    /// automata are root-invariant.
    pub fn accepts(&self, t: &TreeStructure) -> bool {
        if t.is_empty() {
            return self.accepts_empty;
        }
        self.accepts_at(t, 0)
    }

    /// Membership with an explicit root choice.
    pub fn accepts_at(&self, t: &TreeStructure, root: Vertex) -> bool {
        match self.run(t, root, 0) {
            Some(q) => self.accepting.contains(&q),
            None => self.sink_accepting,
        }
    }

    /// Insert a don't-care bit named `name` (must not be present yet),
    /// keeping the alphabet sorted.
    pub fn cylindrify(&self, name: &str) -> Result<TreeAutomaton> {
        if self.bit_of(name).is_some() {
            return Err(Error::Invalid(format!("bit {name} already present")));
        }
        let mut alphabet = self.alphabet.clone();
        alphabet.push(name.to_string());
        alphabet.sort();
        Self::check_bits(&alphabet)?;
        let pos = alphabet.iter().position(|n| n == name).unwrap();
        let widen = |bits: u64| -> u64 {
            let low = bits & ((1u64 << pos) - 1);
            let high = bits >> pos;
            low | (high << (pos + 1))
        };
        let mut transitions = BTreeMap::new();
        for (&(bits, updir, children), &q) in &self.transitions {
            let w = widen(bits);
            transitions.insert((w, updir, children), q);
            transitions.insert((w | (1 << pos), updir, children), q);
        }
        Ok(TreeAutomaton {
            alphabet,
            transitions,
            ..self.clone()
        })
    }
}

fn mask_children(mask: usize, q: usize) -> [Child; 3] {
    let mut c: [Child; 3] = [None, None, None];
    for (i, slot) in c.iter_mut().enumerate() {
        if mask & (1 << i) != 0 {
            *slot = Some(q);
        }
    }
    c
}

/// Enumerate all combinations of three child slots, each absent or drawn
/// from `pool`, with at least one slot drawn from `fresh` when `require_new`.
fn child_combos<'a, T: Copy + 'a>(
    pool: &'a [T],
    fresh_from: usize,
    require_new: bool,
) -> impl Iterator<Item = [Option<T>; 3]> + 'a {
    let n = pool.len() + 1; // index 0 = absent
    let total = n * n * n;
    (0..total).filter_map(move |code| {
        let idx = [code % n, (code / n) % n, code / (n * n)];
        if require_new && !idx.iter().any(|&i| i > fresh_from) {
            return None;
        }
        let mut out = [None, None, None];
        for (slot, &i) in out.iter_mut().zip(&idx) {
            if i > 0 {
                *slot = Some(pool[i - 1]);
            }
        }
        Some(out)
    })
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

/// Pair state: `None` in a component means that side's run has died.
type Pair = (Option<usize>, Option<usize>);

/// Boolean product: accepts T iff f(A accepts T, B accepts T).
pub fn product(
    a: &TreeAutomaton,
    b: &TreeAutomaton,
    f: impl Fn(bool, bool) -> bool,
) -> Result<TreeAutomaton> {
    if a.alphabet != b.alphabet {
        return Err(Error::Invalid(format!(
            "alphabet mismatch: {:?} vs {:?}",
            a.alphabet, b.alphabet
        )));
    }
    let step = |aut: &TreeAutomaton, bits: u64, updir: u8, children: [Child; 3], dead: bool| {
        if dead {
            None
        } else {
            aut.transitions.get(&(bits, updir, children)).copied()
        }
    };
    let mut index: BTreeMap<Pair, usize> = BTreeMap::new();
    let mut pairs: Vec<Pair> = Vec::new();
    let mut transitions: BTreeMap<Key, usize> = BTreeMap::new();
    let mut frontier_start = 0usize; // combos must include a pair index >= this on re-scan
    let mut first_pass = true;
    loop {
        let known = pairs.len();
        let mut added = false;
        let ids: Vec<usize> = (0..pairs.len()).collect();
        for bits in 0..a.letter_count() {
            for updir in 0..=3u8 {
                for combo in child_combos(&ids, frontier_start, !first_pass) {
                    let mut ca: [Child; 3] = [None, None, None];
                    let mut cb: [Child; 3] = [None, None, None];
                    let mut a_dead = false;
                    let mut b_dead = false;
                    for i in 0..3 {
                        if let Some(pi) = combo[i] {
                            let (pa, pb) = pairs[pi];
                            match pa {
                                Some(q) => ca[i] = Some(q),
                                None => a_dead = true,
                            }
                            match pb {
                                Some(q) => cb[i] = Some(q),
                                None => b_dead = true,
                            }
                        }
                    }
                    let ra = step(a, bits, updir, ca, a_dead);
                    let rb = step(b, bits, updir, cb, b_dead);
                    if ra.is_none() && rb.is_none() {
                        continue; // product sink
                    }
                    let target = (ra, rb);
                    let next = *index.entry(target).or_insert_with(|| {
                        pairs.push(target);
                        pairs.len() - 1
                    });
                    if pairs.len() > STATE_CAP {
                        return Err(Error::Resource("product state cap exceeded".into()));
                    }
                    transitions.insert((bits, updir, combo.map(|c| c)), next);
                }
            }
        }
        added |= pairs.len() > known;
        if !added && !first_pass {
            break;
        }
        frontier_start = known.saturating_sub(1);
        first_pass = false;
        if pairs.len() == known && known == 0 {
            break;
        }
        if pairs.len() == known {
            break;
        }
    }
    let acc = |p: Pair| -> bool {
        let av = p.0.map(|q| a.accepting.contains(&q)).unwrap_or(a.sink_accepting);
        let bv = p.1.map(|q| b.accepting.contains(&q)).unwrap_or(b.sink_accepting);
        f(av, bv)
    };
    let accepting = (0..pairs.len()).filter(|&i| acc(pairs[i])).collect();
    Ok(TreeAutomaton {
        alphabet: a.alphabet.clone(),
        states: pairs.len(),
        transitions,
        accepting,
        sink_accepting: f(a.sink_accepting, b.sink_accepting),
        accepts_empty: f(a.accepts_empty, b.accepts_empty),
    })
}

pub fn intersect(a: &TreeAutomaton, b: &TreeAutomaton) -> Result<TreeAutomaton> {
    product(a, b, |x, y| x && y)
}

pub fn union(a: &TreeAutomaton, b: &TreeAutomaton) -> Result<TreeAutomaton> {
    product(a, b, |x, y| x || y)
}

// ---------------------------------------------------------------------------
// Projection (existential quantification over one bit)
// ---------------------------------------------------------------------------

/// Erase `bit` from the alphabet; the result accepts T iff some assignment
/// of the bit makes A accept.  Determinized by subset construction; subsets
/// track the possibility of a dead branch explicitly so that an accepting
/// sink is respected.
pub fn project(a: &TreeAutomaton, bit: &str) -> Result<TreeAutomaton> {
    let pos = a
        .bit_of(bit)
        .ok_or_else(|| Error::Invalid(format!("bit {bit} not in the alphabet")))?;
    let sink = a.states; // pseudo-member marking a dead branch choice
    let narrow_alphabet: Vec<String> = a
        .alphabet
        .iter()
        .filter(|n| n.as_str() != bit)
        .cloned()
        .collect();
    let expand = |bits: u64| -> [u64; 2] {
        let low = bits & ((1u64 << pos) - 1);
        let high = (bits >> pos) << (pos + 1);
        [low | high, low | high | (1 << pos)]
    };
    let mut index: BTreeMap<BTreeSet<usize>, usize> = BTreeMap::new();
    let mut subsets: Vec<BTreeSet<usize>> = Vec::new();
    let mut transitions: BTreeMap<Key, usize> = BTreeMap::new();
    let mut first_pass = true;
    let mut frontier_start = 0usize;
    loop {
        let known = subsets.len();
        let ids: Vec<usize> = (0..subsets.len()).collect();
        for bits in 0..(1u64 << narrow_alphabet.len()) {
            for updir in 0..=3u8 {
                for combo in child_combos(&ids, frontier_start, !first_pass) {
                    let mut target: BTreeSet<usize> = BTreeSet::new();
                    // For every underlying letter and every choice of a
                    // member per child subset, collect the reached state.
                    for full in expand(bits) {
                        collect_choices(a, full, updir, &combo, &subsets, sink, &mut target);
                    }
                    let next = *index.entry(target.clone()).or_insert_with(|| {
                        subsets.push(target);
                        subsets.len() - 1
                    });
                    if subsets.len() > STATE_CAP {
                        return Err(Error::Resource("projection state cap exceeded".into()));
                    }
                    transitions.insert((bits, updir, combo), next);
                }
            }
        }
        if subsets.len() == known && !first_pass {
            break;
        }
        frontier_start = known.saturating_sub(1);
        first_pass = false;
    }
    let accepting = (0..subsets.len())
        .filter(|&i| {
            subsets[i]
                .iter()
                .any(|&q| (q == sink && a.sink_accepting) || a.accepting.contains(&q))
        })
        .collect();
    Ok(TreeAutomaton {
        alphabet: narrow_alphabet,
        states: subsets.len(),
        transitions,
        accepting,
        sink_accepting: false,
        accepts_empty: a.accepts_empty,
    })
}

fn collect_choices(
    a: &TreeAutomaton,
    bits: u64,
    updir: u8,
    combo: &[Option<usize>; 3],
    subsets: &[BTreeSet<usize>],
    sink: usize,
    out: &mut BTreeSet<usize>,
) {
    // Depth-3 choice loop over the members of each present child subset.
    let opts: Vec<Vec<Child>> = combo
        .iter()
        .map(|c| match c {
            None => vec![None],
            Some(i) => subsets[*i].iter().map(|&q| Some(q)).collect(),
        })
        .collect();
    for &c1 in &opts[0] {
        for &c2 in &opts[1] {
            for &c3 in &opts[2] {
                let dead = [c1, c2, c3].iter().any(|c| *c == Some(sink));
                let q = if dead {
                    sink
                } else {
                    a.transitions
                        .get(&(bits, updir, [c1, c2, c3]))
                        .copied()
                        .unwrap_or(sink)
                };
                out.insert(q);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trimming, minimization, canonical numbering
// ---------------------------------------------------------------------------

/// Drop malformed transitions (updir colliding with an occupied slot),
/// transitions whose children cannot arise below a root, and states that
/// are never produced; clear accepting bits of states never produced at a
/// root position.  This normal form makes minimization canonical.
fn trim(a: &TreeAutomaton) -> TreeAutomaton {
    let mut tx: Vec<(Key, usize)> = a
        .transitions
        .iter()
        .filter(|((_, updir, children), _)| {
            *updir == 0 || children[*updir as usize - 1].is_none()
        })
        .map(|(k, &v)| (*k, v))
        .collect();
    loop {
        // States producible as subtree roots (updir 1..3).
        let mut child_ok: BTreeSet<usize> = BTreeSet::new();
        loop {
            let before = child_ok.len();
            for ((_, updir, children), q) in &tx {
                if *updir != 0
                    && children
                        .iter()
                        .flatten()
                        .all(|c| child_ok.contains(c))
                {
                    child_ok.insert(*q);
                }
            }
            if child_ok.len() == before {
                break;
            }
        }
        let n = tx.len();
        tx.retain(|((_, _, children), _)| {
            children.iter().flatten().all(|c| child_ok.contains(c))
        });
        if tx.len() == n {
            // Root-producible states.
            let root_ok: BTreeSet<usize> = tx
                .iter()
                .filter(|((_, updir, _), _)| *updir == 0)
                .map(|(_, q)| *q)
                .collect();
            let live: BTreeSet<usize> = child_ok.union(&root_ok).copied().collect();
            let renum: BTreeMap<usize, usize> =
                live.iter().enumerate().map(|(i, &q)| (q, i)).collect();
            let transitions = tx
                .iter()
                .map(|(k, q)| {
                    let (bits, updir, children) = *k;
                    let children = children.map(|c| c.map(|q| renum[&q]));
                    ((bits, updir, children), renum[q])
                })
                .collect();
            let accepting = a
                .accepting
                .iter()
                .filter(|q| root_ok.contains(q))
                .map(|q| renum[q])
                .collect();
            return TreeAutomaton {
                alphabet: a.alphabet.clone(),
                states: live.len(),
                transitions,
                accepting,
                sink_accepting: a.sink_accepting,
                accepts_empty: a.accepts_empty,
            };
        }
    }
}

/// Minimize to the unique canonical form: trim, merge context-equivalent
/// states (partition refinement, sink included), drop the sink class, and
/// renumber states breadth-first along lexicographically sorted transitions.
pub fn minimize(a: &TreeAutomaton) -> TreeAutomaton {
    let a = trim(a);
    let sink = a.states;
    // class[q] for q in 0..=states (last = sink).
    let mut class: Vec<usize> = (0..=a.states)
        .map(|q| {
            let acc = if q == sink {
                a.sink_accepting
            } else {
                a.accepting.contains(&q)
            };
            usize::from(acc)
        })
        .collect();
    loop {
        // Signature entries: (letter, updir, position, other-child classes
        // where `usize::MAX` marks an absent slot) → result class, recorded
        // only when the result differs from the sink class.
        type Sig = BTreeSet<((u64, u8, usize, [usize; 3]), usize)>;
        let mut sigs: Vec<Sig> = vec![BTreeSet::new(); a.states + 1];
        for ((bits, updir, children), &q) in &a.transitions {
            if class[q] == class[sink] {
                continue;
            }
            for i in 0..3 {
                if let Some(c) = children[i] {
                    let mut ctx = [usize::MAX; 3];
                    for j in 0..3 {
                        if j != i {
                            ctx[j] = children[j].map(|w| class[w]).unwrap_or(usize::MAX);
                        }
                    }
                    sigs[c].insert(((*bits, *updir, i, ctx), class[q]));
                }
            }
        }
        let mut fresh: BTreeMap<(usize, Sig), usize> = BTreeMap::new();
        let mut next: Vec<usize> = Vec::with_capacity(a.states + 1);
        for q in 0..=a.states {
            let key = (class[q], sigs[q].clone());
            let n = fresh.len();
            next.push(*fresh.entry(key).or_insert(n));
        }
        if next == class {
            break;
        }
        class = next;
    }
    // Rebuild on representatives, dropping the sink class.
    let sink_class = class[sink];
    let mut reps: BTreeMap<usize, usize> = BTreeMap::new();
    for q in 0..a.states {
        if class[q] != sink_class {
            let n = reps.len();
            reps.entry(class[q]).or_insert(n);
        }
    }
    let mut transitions: BTreeMap<Key, usize> = BTreeMap::new();
    for ((bits, updir, children), &q) in &a.transitions {
        if class[q] == sink_class {
            continue;
        }
        let children = children.map(|c| c.map(|w| reps[&class[w]]));
        transitions.insert((*bits, *updir, children), reps[&class[q]]);
    }
    let accepting = a
        .accepting
        .iter()
        .filter(|&&q| class[q] != sink_class)
        .map(|q| reps[&class[*q]])
        .collect();
    let merged = TreeAutomaton {
        alphabet: a.alphabet.clone(),
        states: reps.len(),
        transitions,
        accepting,
        sink_accepting: a.sink_accepting,
        accepts_empty: a.accepts_empty,
    };
    let mut out = canonical_numbering(&trim(&merged));
    if !sink_reachable(&out) {
        out.sink_accepting = false;
    }
    out
}

/// States producible as subtree roots (letters with updir 1..3); assumes a
/// trimmed automaton, where this is a single scan over stored transitions.
fn child_producible(a: &TreeAutomaton) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    loop {
        let before = set.len();
        for ((_, updir, children), &q) in &a.transitions {
            if *updir != 0 && children.iter().flatten().all(|c| set.contains(c)) {
                set.insert(q);
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

/// Whether some well-formed reachable configuration has no stored
/// transition (so a run can actually fall into the implicit sink).
fn sink_reachable(a: &TreeAutomaton) -> bool {
    let pool: Vec<usize> = child_producible(a).into_iter().collect();
    for bits in 0..a.letter_count() {
        for updir in 0..=3u8 {
            for combo in child_combos(&pool, 0, false) {
                if updir != 0 && combo[updir as usize - 1].is_some() {
                    continue;
                }
                if !a.transitions.contains_key(&(bits, updir, combo)) {
                    return true;
                }
            }
        }
    }
    false
}

/// Totalize on the reachable configuration space, materializing the sink
/// as an explicit absorbing state.  Meant for small (minimized) automata.
pub fn complete(a: &TreeAutomaton) -> TreeAutomaton {
    let d = a.states;
    let mut out = a.clone();
    out.states += 1;
    if a.sink_accepting {
        out.accepting.insert(d);
    }
    out.sink_accepting = false;
    let mut pool: Vec<usize> = child_producible(a).into_iter().collect();
    pool.push(d);
    for bits in 0..a.letter_count() {
        for updir in 0..=3u8 {
            for combo in child_combos(&pool, 0, false) {
                if updir != 0 && combo[updir as usize - 1].is_some() {
                    continue;
                }
                out.transitions.entry((bits, updir, combo)).or_insert(d);
            }
        }
    }
    out
}

/// The fully canonical form: language-equal automata over the same
/// alphabet produce bit-identical results.
pub fn canonical(a: &TreeAutomaton) -> TreeAutomaton {
    minimize(&complete(&minimize(a)))
}

/// Renumber states in discovery order of the lexicographically smallest
/// transition producing them (children already numbered first).
fn canonical_numbering(a: &TreeAutomaton) -> TreeAutomaton {
    let mut order: BTreeMap<usize, usize> = BTreeMap::new();
    while order.len() < a.states {
        let mut best: Option<(Key, usize)> = None;
        for ((bits, updir, children), &q) in &a.transitions {
            if order.contains_key(&q) {
                continue;
            }
            let mapped: Option<Vec<Option<usize>>> = children
                .iter()
                .map(|c| match c {
                    None => Some(None),
                    Some(w) => order.get(w).copied().map(Some),
                })
                .collect();
            if let Some(m) = mapped {
                let key = (*bits, *updir, [m[0], m[1], m[2]]);
                if best.as_ref().map(|(b, _)| key < *b).unwrap_or(true) {
                    best = Some((key, q));
                }
            }
        }
        match best {
            Some((_, q)) => {
                let n = order.len();
                order.insert(q, n);
            }
            None => break, // unreachable states (none after trim)
        }
    }
    let transitions = a
        .transitions
        .iter()
        .filter(|(( _, _, children), q)| {
            order.contains_key(q) && children.iter().flatten().all(|c| order.contains_key(c))
        })
        .map(|((bits, updir, children), q)| {
            (
                (*bits, *updir, children.map(|c| c.map(|w| order[&w]))),
                order[q],
            )
        })
        .collect();
    TreeAutomaton {
        alphabet: a.alphabet.clone(),
        states: order.len(),
        transitions,
        accepting: a
            .accepting
            .iter()
            .filter(|q| order.contains_key(q))
            .map(|q| order[q])
            .collect(),
        sink_accepting: a.sink_accepting,
        accepts_empty: a.accepts_empty,
    }
}

// ---------------------------------------------------------------------------
// Emptiness, witnesses, equivalence
// ---------------------------------------------------------------------------

/// Decode a letter into labels / X / x flags using the alphabet names.
fn apply_letter(t: &mut TreeStructure, v: Vertex, alphabet: &[String], bits: u64, x_set: &mut BTreeSet<Vertex>, x_vertex: &mut Option<Vertex>) {
    for (i, name) in alphabet.iter().enumerate() {
        if bits & (1 << i) == 0 {
            continue;
        }
        match name.as_str() {
            "X" => {
                x_set.insert(v);
            }
            "x" => *x_vertex = Some(v),
            _ if name.starts_with(|c: char| c.is_ascii_lowercase()) => {
                t.set_constant(name, v);
            }
            _ => {
                t.labels_mut(v).insert(name.clone());
            }
        }
    }
}

/// If the language is nonempty, return a size-minimal member; `None` means
/// empty.  The empty tree counts as size 0.
pub fn find_witness(a: &TreeAutomaton) -> Option<TreeStructure> {
    if a.accepts_empty {
        return Some(TreeStructure::empty());
    }
    let a = trim(a);
    // Minimal encoding size per state when produced as a subtree root
    // (updir 1..3); Bellman-Ford style relaxation.
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    let mut via: BTreeMap<usize, Key> = BTreeMap::new();
    loop {
        let mut changed = false;
        for ((bits, updir, children), &q) in &a.transitions {
            if *updir == 0 {
                continue;
            }
            let s: Option<usize> = children
                .iter()
                .flatten()
                .map(|c| size.get(c).copied())
                .try_fold(1usize, |acc, s| s.map(|s| acc + s));
            if let Some(s) = s {
                if size.get(&q).map(|&old| s < old).unwrap_or(true) {
                    size.insert(q, s);
                    via.insert(q, (*bits, *updir, *children));
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Best accepting root transition.
    let mut best: Option<(usize, Key)> = None;
    for ((bits, updir, children), q) in &a.transitions {
        if *updir != 0 || !a.accepting.contains(q) {
            continue;
        }
        let s: Option<usize> = children
            .iter()
            .flatten()
            .map(|c| size.get(c).copied())
            .try_fold(1usize, |acc, s| s.map(|s| acc + s));
        if let Some(s) = s {
            if best.as_ref().map(|(b, _)| s < *b).unwrap_or(true) {
                best = Some((s, (*bits, *updir, *children)));
            }
        }
    }
    let (_, root_key) = best?;
    // Rebuild the tree from the chosen transitions.
    let mut t = TreeStructure::empty();
    let mut x_set = BTreeSet::new();
    let mut x_vertex = None;
    let mut queue: VecDeque<(Vertex, Key)> = VecDeque::new();
    let root = t.add_vertex(Vec::<String>::new());
    queue.push_back((root, root_key));
    while let Some((v, (bits, _updir, children))) = queue.pop_front() {
        apply_letter(&mut t, v, &a.alphabet, bits, &mut x_set, &mut x_vertex);
        for d in DIRS {
            if let Some(c) = children[d as usize - 1] {
                let key = via[&c];
                let w = t.add_vertex(Vec::<String>::new());
                t.add_edge(v, d, w, key.1).expect("well-formed witness");
                queue.push_back((w, key));
            }
        }
    }
    if a.alphabet.iter().any(|n| n == "X") {
        t.set_x_set(Some(x_set));
    }
    if let Some(v) = x_vertex {
        t = t.with_x_vertex(v);
    }
    Some(t)
}

pub fn is_empty(a: &TreeAutomaton) -> bool {
    find_witness(a).is_none()
}

/// `Ok(None)` when the languages agree; otherwise a minimal separating tree.
pub fn separating_tree(a: &TreeAutomaton, b: &TreeAutomaton) -> Result<Option<TreeStructure>> {
    let xor = product(a, b, |x, y| x != y)?;
    Ok(find_witness(&xor))
}

pub fn equivalent(a: &TreeAutomaton, b: &TreeAutomaton) -> Result<bool> {
    Ok(separating_tree(a, b)?.is_none())
}

// ---------------------------------------------------------------------------
// The .ta dump format
// ---------------------------------------------------------------------------

pub fn print_automaton(a: &TreeAutomaton) -> String {
    let mut out = String::new();
    out.push_str(&format!("alphabet {}\n", a.alphabet.join(" ")));
    out.push_str(&format!("states {}\n", a.states));
    out.push_str(&format!(
        "accepting{}\n",
        a.accepting
            .iter()
            .map(|q| format!(" {q}"))
            .collect::<String>()
    ));
    out.push_str(&format!("sink_accepting {}\n", a.sink_accepting));
    out.push_str(&format!("accepts_empty {}\n", a.accepts_empty));
    for ((bits, updir, children), q) in &a.transitions {
        let cs = children
            .iter()
            .map(|c| match c {
                None => "-".to_string(),
                Some(w) => w.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!("t {bits:b} {updir} {cs} -> {q}\n"));
    }
    out
}

pub fn parse_automaton(text: &str) -> Result<TreeAutomaton> {
    let mut a = TreeAutomaton {
        alphabet: Vec::new(),
        states: 0,
        transitions: BTreeMap::new(),
        accepting: BTreeSet::new(),
        sink_accepting: false,
        accepts_empty: false,
    };
    let bad = |l: &str| Error::Parse(format!("bad automaton line: {l}"));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next().unwrap() {
            "alphabet" => a.alphabet = it.map(str::to_string).collect(),
            "states" => {
                a.states = it.next().ok_or_else(|| bad(line))?.parse().map_err(|_| bad(line))?
            }
            "accepting" => {
                for w in it {
                    a.accepting.insert(w.parse().map_err(|_| bad(line))?);
                }
            }
            "sink_accepting" => {
                a.sink_accepting = it.next() == Some("true");
            }
            "accepts_empty" => {
                a.accepts_empty = it.next() == Some("true");
            }
            "t" => {
                let bits = u64::from_str_radix(it.next().ok_or_else(|| bad(line))?, 2)
                    .map_err(|_| bad(line))?;
                let updir: u8 = it.next().ok_or_else(|| bad(line))?.parse().map_err(|_| bad(line))?;
                let mut children: [Child; 3] = [None, None, None];
                for slot in children.iter_mut() {
                    let w = it.next().ok_or_else(|| bad(line))?;
                    if w != "-" {
                        *slot = Some(w.parse().map_err(|_| bad(line))?);
                    }
                }
                if it.next() != Some("->") {
                    return Err(bad(line));
                }
                let q: usize = it.next().ok_or_else(|| bad(line))?.parse().map_err(|_| bad(line))?;
                a.transitions.insert((bits, updir, children), q);
            }
            _ => return Err(bad(line)),
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::enumerate_trees;

    fn voc(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn all_and_none_behave() {
        let all = TreeAutomaton::all(voc(&["P0"])).unwrap();
        let none = TreeAutomaton::none(voc(&["P0"])).unwrap();
        for t in enumerate_trees(4, &voc(&["P0"]), 100_000).unwrap() {
            assert!(all.accepts(&t));
            assert!(!none.accepts(&t));
        }
        assert!(all.accepts(&TreeStructure::empty()));
        assert!(is_empty(&none));
        assert!(!is_empty(&all));
    }

    #[test]
    fn complement_involution_and_disjointness() {
        let all = TreeAutomaton::all(voc(&["P0"])).unwrap();
        let c = all.complement();
        assert!(is_empty(&c));
        assert!(equivalent(&all, &c.complement()).unwrap());
        assert!(is_empty(&intersect(&all, &c).unwrap()));
    }

    #[test]
    fn minimize_all_has_one_state() {
        let all = TreeAutomaton::all(voc(&["P0", "P1"])).unwrap();
        let m = minimize(&all);
        assert_eq!(m.states, 1);
        assert!(equivalent(&all, &m).unwrap());
    }

    #[test]
    fn minimize_is_idempotent_and_canonical() {
        let all = TreeAutomaton::all(voc(&["P0"])).unwrap();
        let roundabout = union(&all, &all.complement()).unwrap();
        assert!(equivalent(&minimize(&roundabout), &minimize(&all)).unwrap());
        assert_eq!(canonical(&roundabout), canonical(&all));
        assert_eq!(minimize(&minimize(&roundabout)), minimize(&roundabout));
        assert_eq!(canonical(&canonical(&roundabout)), canonical(&roundabout));
    }

    #[test]
    fn canonical_resolves_accepting_sinks() {
        // The complement of the empty language accepts everything through
        // its sink; the canonical form materializes that as a real state
        // and coincides with the canonical all-accepting automaton.
        let none = TreeAutomaton::none(voc(&["P0"])).unwrap();
        let all = TreeAutomaton::all(voc(&["P0"])).unwrap();
        assert_eq!(canonical(&none.complement()), canonical(&all));
        assert_eq!(canonical(&all.complement()), canonical(&none));
    }

    #[test]
    fn projection_of_unused_bit_preserves_language() {
        let all = TreeAutomaton::all(voc(&["P0", "Y"])).unwrap();
        let p = project(&all, "Y").unwrap();
        assert!(equivalent(&minimize(&p), &minimize(&TreeAutomaton::all(voc(&["P0"])).unwrap())).unwrap());
    }

    #[test]
    fn cylindrify_then_project_roundtrip() {
        let all = TreeAutomaton::all(voc(&["P0"])).unwrap();
        let c = all.cylindrify("Q").unwrap();
        assert_eq!(c.alphabet, voc(&["P0", "Q"]));
        assert!(equivalent(&minimize(&project(&c, "Q").unwrap()), &minimize(&all)).unwrap());
    }

    #[test]
    fn witness_is_minimal() {
        // Accept trees with at least two vertices: states count min(model, 2).
        let mut a = TreeAutomaton::none(voc(&[])).unwrap();
        a.states = 2;
        for updir in 0..=3u8 {
            for mask in 0..8usize {
                for assign in 0..8usize {
                    let mut children: [Child; 3] = [None, None, None];
                    let mut count = 1usize;
                    let mut ok = true;
                    for i in 0..3 {
                        if mask & (1 << i) != 0 {
                            if updir as usize == i + 1 {
                                ok = false;
                            }
                            let cq = usize::from(assign & (1 << i) != 0);
                            children[i] = Some(cq);
                            count += cq + 1;
                        }
                    }
                    if ok {
                        a.transitions.insert((0, updir, children), count.min(2) - 1);
                    }
                }
            }
        }
        a.accepting = [1].into();
        let w = find_witness(&a).unwrap();
        assert_eq!(w.len(), 2);
        assert!(a.accepts(&w));
    }

    #[test]
    fn dump_roundtrip() {
        let all = minimize(&TreeAutomaton::all(voc(&["P0"])).unwrap());
        let text = print_automaton(&all);
        assert_eq!(parse_automaton(&text).unwrap(), all);
    }
}
