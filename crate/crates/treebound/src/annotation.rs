//! Tiles, tilings, histories, annotated trees, sections, jumps, and ranks.
//!
//! A tile records, at one vertex, the X-positive types of the surrounding
//! pieces of a tree: the vertex itself (`t_i0`), the three neighbouring
//! subtrees rooted at the neighbour (`t_i1..t_i3`), the three complements
//! rooted at the vertex (`t_o1..t_o3`), and the whole tree seen from the
//! vertex (`t_o4`). The output components are determined from the inputs by
//! the tile equations, e.g. `t_o3 = t_i0 ⊞ t_i1 ⊞ t_i2`.
//!
//! A history condenses the tile sequence of a vertex along the fixpoint
//! stages φ⁰ ⊆ φ¹ ⊆ … into its strictly increasing subsequence. An
//! annotated tree pairs a history per vertex with a synchronisation map
//! `s(v,i,d)` that aligns adjacent histories; the annotation `A_β` picks the
//! alignment whose stage is closest to β. Sections reconstruct one whole
//! tiling from an annotation, jumps mark the step where a vertex enters the
//! fixpoint, and the rank of a jump is its dependency distance to a base
//! jump — the quantity that ties boundedness to weighted-automaton costs.
//!
//! Edges here carry an independent direction at each endpoint, so every
//! consistency condition reads the output component of a neighbour `u` of
//! `w` at the direction `u` has for `w` (a tree with one shared colour per
//! edge is the special case where both endpoints agree).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::fixpoint::{boundedness_search, evaluate_stages, BoundednessStatus, StageTrace};
use crate::formula::{Formula, Term};
use crate::structure::model_check;
use crate::tree::{enumerate_trees, TreeStructure, Vertex, DIRS};
use crate::types::{compose_add, compute_type, PositiveType, TypeBasis};
use crate::{Error, Result};

/// Largest tree on which the closure-membership formula is cross-checked by
/// brute-force MSO evaluation (the set quantifier enumerates 2^|T| subsets).
const MSO_CROSS_CHECK_CAP: usize = 12;

// ---------------------------------------------------------------------------
// Tiles
// ---------------------------------------------------------------------------

/// The 8-tuple of X-positive types around one vertex. Input components may
/// be the empty-tree type △; `t_i0` is the type of the vertex alone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tile {
    pub t_i0: PositiveType,
    pub t_i1: PositiveType,
    pub t_i2: PositiveType,
    pub t_i3: PositiveType,
    pub t_o1: PositiveType,
    pub t_o2: PositiveType,
    pub t_o3: PositiveType,
    pub t_o4: PositiveType,
}

impl Tile {
    /// Input component for d ∈ {0,1,2,3}.
    pub fn input(&self, d: u8) -> &PositiveType {
        match d {
            0 => &self.t_i0,
            1 => &self.t_i1,
            2 => &self.t_i2,
            3 => &self.t_i3,
            _ => panic!("input direction out of range"),
        }
    }

    /// Output component for d ∈ {1,2,3,4}.
    pub fn output(&self, d: u8) -> &PositiveType {
        match d {
            1 => &self.t_o1,
            2 => &self.t_o2,
            3 => &self.t_o3,
            4 => &self.t_o4,
            _ => panic!("output direction out of range"),
        }
    }

    /// Component-wise type inclusion.
    pub fn le(&self, other: &Tile) -> bool {
        self.components()
            .into_iter()
            .zip(other.components())
            .all(|(a, b)| PositiveType::le(a, b))
    }

    fn components(&self) -> [&PositiveType; 8] {
        [
            &self.t_i0, &self.t_i1, &self.t_i2, &self.t_i3, &self.t_o1, &self.t_o2, &self.t_o3,
            &self.t_o4,
        ]
    }

    /// Whether the output components equal the ⊞-combinations of the inputs
    /// required of every tile.
    pub fn check_equations(&self, basis: &TypeBasis) -> Result<bool> {
        if self.t_i0 == PositiveType::Empty {
            return Ok(false);
        }
        let add = |parts: [&PositiveType; 2]| -> Result<PositiveType> {
            let mut acc = self.t_i0.clone();
            for p in parts {
                acc = compose_add(&acc, p, basis)?;
            }
            Ok(acc)
        };
        let o4 = compose_add(&add([&self.t_i1, &self.t_i2])?, &self.t_i3, basis)?;
        Ok(self.t_o1 == add([&self.t_i2, &self.t_i3])?
            && self.t_o2 == add([&self.t_i1, &self.t_i3])?
            && self.t_o3 == add([&self.t_i1, &self.t_i2])?
            && self.t_o4 == o4)
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components().iter().map(|t| type_token(t)).collect();
        f.write_str(&parts.join("|"))
    }
}

fn type_token(t: &PositiveType) -> String {
    match t {
        PositiveType::Empty => "^".into(),
        PositiveType::Bits(b) if b.is_empty() => "-".into(),
        PositiveType::Bits(b) => b
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

fn parse_type_token(s: &str) -> Result<PositiveType> {
    match s {
        "^" => Ok(PositiveType::Empty),
        "-" => Ok(PositiveType::Bits(BTreeSet::new())),
        _ => {
            let bits = s
                .split(',')
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad type bit '{p}'")))
                })
                .collect::<std::result::Result<BTreeSet<usize>, Error>>()?;
            Ok(PositiveType::Bits(bits))
        }
    }
}

/// The atom `X x`, deciding the `t_i0 = 1` side of a letter type.
fn x_atom() -> Formula {
    Formula::Pred("X".into(), Term::Const("x".into()))
}

fn in_x_component(t: &PositiveType, basis: &TypeBasis) -> Result<bool> {
    basis.formula_holds(&x_atom(), t)
}

// ---------------------------------------------------------------------------
// Canonical tilings and consistency
// ---------------------------------------------------------------------------

/// The canonical tile of a tree with interpreted X at `v`: each component is
/// computed directly as the type of the corresponding subtree.
pub fn canonical_tile(t: &TreeStructure, v: Vertex, basis: &TypeBasis) -> Result<Tile> {
    if t.x_set().is_none() {
        return Err(Error::Invalid(
            "canonical tiles need a tree with an interpreted X".into(),
        ));
    }
    let whole = t.clone().with_x_vertex(v);
    Ok(Tile {
        t_i0: compute_type(&t.restrict_to_vertex(v), basis)?,
        t_i1: compute_type(&t.subtree_toward(v, 1), basis)?,
        t_i2: compute_type(&t.subtree_toward(v, 2), basis)?,
        t_i3: compute_type(&t.subtree_toward(v, 3), basis)?,
        t_o1: compute_type(&t.subtree_away(v, 1), basis)?,
        t_o2: compute_type(&t.subtree_away(v, 2), basis)?,
        t_o3: compute_type(&t.subtree_away(v, 3), basis)?,
        t_o4: compute_type(&whole, basis)?,
    })
}

/// The canonical tiling: one canonical tile per vertex.
pub fn canonical_tiling(t: &TreeStructure, basis: &TypeBasis) -> Result<BTreeMap<Vertex, Tile>> {
    t.vertices().map(|v| Ok((v, canonical_tile(t, v, basis)?))).collect()
}

/// The orientation towards `v`: v ↦ 4, and every other vertex to the
/// direction of its neighbour on the path to `v`.
pub fn orientation(t: &TreeStructure, v: Vertex) -> Result<BTreeMap<Vertex, u8>> {
    let mut o = BTreeMap::new();
    o.insert(v, 4u8);
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        for d in DIRS {
            if let Some(w) = t.neighbor(u, d) {
                if !o.contains_key(&w) {
                    o.insert(w, t.direction_at(w, u).expect("adjacent"));
                    queue.push_back(w);
                }
            }
        }
    }
    if o.len() != t.len() {
        return Err(Error::Invalid("tree is not connected".into()));
    }
    Ok(o)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMode {
    Local,
    Global,
}

/// A failed consistency equation: the input component of `vertex` in
/// direction `direction` differs from the reference value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyFault {
    pub vertex: Vertex,
    pub direction: u8,
    pub expected: PositiveType,
    pub found: PositiveType,
}

/// Check a tiling towards `v`. Local mode compares each input component
/// with the matching output of the neighbour; global mode recomputes the
/// true types of the subtrees of (T, P), where P is read off the `t_i0`
/// components. Returns the first violated equation, if any.
pub fn check_consistency(
    c: &BTreeMap<Vertex, Tile>,
    t: &TreeStructure,
    v: Vertex,
    mode: ConsistencyMode,
    basis: &TypeBasis,
) -> Result<Option<ConsistencyFault>> {
    for u in t.vertices() {
        if !c.contains_key(&u) {
            return Err(Error::Invalid(format!("tiling misses vertex {u}")));
        }
    }
    let o = orientation(t, v)?;
    let expansion = match mode {
        ConsistencyMode::Local => None,
        ConsistencyMode::Global => {
            let mut p = BTreeSet::new();
            for u in t.vertices() {
                if in_x_component(&c[&u].t_i0, basis)? {
                    p.insert(u);
                }
            }
            Some(t.clone().with_x_set(p))
        }
    };
    for w in t.vertices() {
        for d in DIRS {
            if o[&w] == d {
                continue;
            }
            let found = c[&w].input(d).clone();
            let expected = match t.neighbor(w, d) {
                None => PositiveType::Empty,
                Some(u) => match &expansion {
                    None => {
                        let e = t.direction_at(u, w).expect("adjacent");
                        c[&u].output(e).clone()
                    }
                    Some(tp) => compute_type(&tp.subtree_toward(w, d), basis)?,
                },
            };
            if found != expected {
                return Ok(Some(ConsistencyFault {
                    vertex: w,
                    direction: d,
                    expected,
                    found,
                }));
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Histories
// ---------------------------------------------------------------------------

/// A strictly increasing tile sequence h⁰ ⊊ … ⊊ h^m. The paper-style
/// `length` is m, one less than the number of tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    pub tiles: Vec<Tile>,
}

impl History {
    pub fn length(&self) -> usize {
        self.tiles.len() - 1
    }

    pub fn index_of(&self, t: &Tile) -> Option<usize> {
        self.tiles.iter().position(|u| u == t)
    }

    /// The unique index i with h^i_i0 = 0 and h^{i+1}_i0 = 1, if any.
    pub fn jump_index(&self, basis: &TypeBasis) -> Result<Option<usize>> {
        let bits = self
            .tiles
            .iter()
            .map(|t| in_x_component(&t.t_i0, basis))
            .collect::<Result<Vec<bool>>>()?;
        for k in 1..bits.len() {
            if bits[k - 1] && !bits[k] {
                return Err(Error::Invalid(
                    "history leaves X again; not a valid history".into(),
                ));
            }
        }
        Ok(match bits.iter().position(|&b| b) {
            Some(p) if p >= 1 => Some(p - 1),
            _ => None,
        })
    }
}

/// Verify the defining invariants of a history for the fixpoint formula
/// `phi`: strict component-wise increase, tile equations, a 0-letter start,
/// and the jump rule h^{i+1}_i0 = 1 iff φ ∈ h^i_o4. Returns the first
/// violation as a message.
pub fn check_history(h: &History, phi: &Formula, basis: &TypeBasis) -> Result<Option<String>> {
    if h.tiles.is_empty() {
        return Ok(Some("history has no tiles".into()));
    }
    for (k, tile) in h.tiles.iter().enumerate() {
        if !tile.check_equations(basis)? {
            return Ok(Some(format!("tile {k} violates the tile equations")));
        }
    }
    for k in 1..h.tiles.len() {
        if !(h.tiles[k - 1].le(&h.tiles[k]) && h.tiles[k - 1] != h.tiles[k]) {
            return Ok(Some(format!("tiles {} and {k} do not strictly increase", k - 1)));
        }
    }
    if in_x_component(&h.tiles[0].t_i0, basis)? {
        return Ok(Some("history starts with the 1-letter".into()));
    }
    for i in 0..h.length() {
        let next_in = in_x_component(&h.tiles[i + 1].t_i0, basis)?;
        let phi_now = basis.formula_holds(phi, &h.tiles[i].t_o4)?;
        if next_in != phi_now {
            return Ok(Some(format!("jump rule fails between indices {i} and {}", i + 1)));
        }
    }
    Ok(None)
}

/// The canonical tilings of (T, φ^α) for every stage α up to the closure
/// ordinal, together with the stage trace.
pub struct StageTilings {
    pub trace: StageTrace,
    pub tilings: Vec<BTreeMap<Vertex, Tile>>,
}

impl StageTilings {
    /// The tiling of stage α; stages beyond the closure repeat the last one.
    pub fn at(&self, alpha: usize) -> &BTreeMap<Vertex, Tile> {
        &self.tilings[alpha.min(self.tilings.len() - 1)]
    }
}

pub fn stage_tilings(
    phi: &Formula,
    t: &TreeStructure,
    basis: &TypeBasis,
) -> Result<StageTilings> {
    let trace = evaluate_stages(phi, t)?;
    let gamma = trace.closure_ordinal();
    let tilings = (0..=gamma)
        .map(|a| canonical_tiling(&t.clone().with_x_set(trace.stages[a].clone()), basis))
        .collect::<Result<Vec<_>>>()?;
    Ok(StageTilings { trace, tilings })
}

fn history_from_stages(st: &StageTilings, v: Vertex) -> Result<History> {
    let mut tiles: Vec<Tile> = Vec::new();
    for tiling in &st.tilings {
        let tile = &tiling[&v];
        if tiles.last() == Some(tile) {
            continue;
        }
        if let Some(last) = tiles.last() {
            if !last.le(tile) {
                return Err(Error::Internal(
                    "stage tiles are not increasing along the fixpoint".into(),
                ));
            }
        }
        tiles.push(tile.clone());
    }
    Ok(History { tiles })
}

/// The history of `t` at `v`: the stage tiles with duplicates removed.
pub fn history_of(
    phi: &Formula,
    t: &TreeStructure,
    v: Vertex,
    basis: &TypeBasis,
) -> Result<History> {
    if v >= t.len() {
        return Err(Error::Invalid(format!("vertex {v} is not in the tree")));
    }
    history_from_stages(&stage_tilings(phi, t, basis)?, v)
}

// ---------------------------------------------------------------------------
// Annotated trees
// ---------------------------------------------------------------------------

/// A tree with a history per vertex and a synchronisation map aligning
/// adjacent histories: `s[(v,i,d)]` is the index into the history of the
/// d-neighbour of `v` matching index `i` of the history of `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedTree {
    pub tree: TreeStructure,
    pub h: BTreeMap<Vertex, History>,
    pub s: BTreeMap<(Vertex, usize, u8), usize>,
}

/// Build the annotation A_β: histories from the stage tiles and the
/// synchronisation choosing the stage closest to β. For each (v, i, d) the
/// reference stage α is β itself when h(v)^i is the β-stage tile, otherwise
/// the maximal α ≤ β (below) or minimal α ≥ β (above) whose tiling solves
/// the local-consistency equation at the edge. Over a finite tree the
/// stages stabilize, so such an α always exists; a miss is reported as an
/// internal error rather than clamped.
pub fn annotate(
    phi: &Formula,
    t: &TreeStructure,
    beta: usize,
    basis: &TypeBasis,
) -> Result<AnnotatedTree> {
    if t.x_set().is_some() {
        return Err(Error::Invalid(
            "annotation expects a tree without an X interpretation".into(),
        ));
    }
    let st = stage_tilings(phi, t, basis)?;
    let gamma = st.tilings.len() - 1;
    let mut h = BTreeMap::new();
    for v in t.vertices() {
        h.insert(v, history_from_stages(&st, v)?);
    }
    let mut s = BTreeMap::new();
    for v in t.vertices() {
        for i in 0..=h[&v].length() {
            for d in DIRS {
                let Some(w) = t.neighbor(v, d) else { continue };
                let e = t.direction_at(w, v).expect("adjacent");
                let here = &h[&v].tiles[i];
                let at_beta = &st.at(beta)[&v];
                let alpha = if here == at_beta {
                    beta
                } else if here.le(at_beta) {
                    (0..=beta)
                        .rev()
                        .find(|&a| st.at(a)[&w].output(e) == here.input(d))
                        .ok_or_else(|| {
                            Error::Internal(
                                "no stage at or below beta solves the synchronisation equation"
                                    .into(),
                            )
                        })?
                } else if at_beta.le(here) {
                    (beta..=gamma.max(beta))
                        .find(|&a| st.at(a)[&w].output(e) == here.input(d))
                        .ok_or_else(|| {
                            Error::Internal(
                                "no stage at or above beta solves the synchronisation equation"
                                    .into(),
                            )
                        })?
                } else {
                    return Err(Error::Internal(
                        "history tile incomparable with the beta-stage tile".into(),
                    ));
                };
                let j = h[&w]
                    .index_of(&st.at(alpha)[&w])
                    .expect("stage tiles occur in the history");
                s.insert((v, i, d), j);
            }
        }
    }
    Ok(AnnotatedTree {
        tree: t.clone(),
        h,
        s,
    })
}

/// The section at (v, i): the tiling obtained by fixing h(v)^i at `v` and
/// following the synchronisation outward.
pub fn section(a: &AnnotatedTree, v: Vertex, i: usize) -> Result<BTreeMap<Vertex, Tile>> {
    let hv = a
        .h
        .get(&v)
        .ok_or_else(|| Error::Invalid(format!("vertex {v} has no history")))?;
    if i > hv.length() {
        return Err(Error::Invalid(format!(
            "section index {i} exceeds the history length {}",
            hv.length()
        )));
    }
    let mut c = BTreeMap::new();
    c.insert(v, hv.tiles[i].clone());
    let mut queue = VecDeque::from([v]);
    let mut seen = BTreeSet::from([v]);
    while let Some(u) = queue.pop_front() {
        let j = a.h[&u]
            .index_of(&c[&u])
            .ok_or_else(|| Error::Invalid(format!("section tile at {u} is not in its history")))?;
        for d in DIRS {
            let Some(w) = a.tree.neighbor(u, d) else { continue };
            if !seen.insert(w) {
                continue;
            }
            let idx = *a
                .s
                .get(&(u, j, d))
                .ok_or_else(|| Error::Invalid(format!("synchronisation undefined at ({u},{j},{d})")))?;
            if idx > a.h[&w].length() {
                return Err(Error::Invalid(format!(
                    "synchronisation at ({u},{j},{d}) points past the history of {w}"
                )));
            }
            c.insert(w, a.h[&w].tiles[idx].clone());
            queue.push_back(w);
        }
    }
    Ok(c)
}

/// Local consistency of an annotated tree: the synchronisation is total and
/// in range, and every (v, i, d) satisfies the edge equation, with absent
/// neighbours matched by the empty-tree type. Returns the first violation.
pub fn check_local_annotated(a: &AnnotatedTree) -> Result<Option<String>> {
    for v in a.tree.vertices() {
        if !a.h.contains_key(&v) {
            return Ok(Some(format!("vertex {v} has no history")));
        }
    }
    for (&(v, i, d), &j) in &a.s {
        if v >= a.tree.len() || i > a.h[&v].length() || a.tree.neighbor(v, d).is_none() {
            return Ok(Some(format!("synchronisation key ({v},{i},{d}) is out of shape")));
        }
        let w = a.tree.neighbor(v, d).unwrap();
        if j > a.h[&w].length() {
            return Ok(Some(format!(
                "synchronisation at ({v},{i},{d}) points past the history of {w}"
            )));
        }
    }
    for v in a.tree.vertices() {
        for i in 0..=a.h[&v].length() {
            for d in DIRS {
                match a.tree.neighbor(v, d) {
                    None => {
                        if a.h[&v].tiles[i].input(d) != &PositiveType::Empty {
                            return Ok(Some(format!(
                                "input {d} of history index {i} at {v} is not the empty type"
                            )));
                        }
                    }
                    Some(w) => {
                        let Some(&j) = a.s.get(&(v, i, d)) else {
                            return Ok(Some(format!(
                                "synchronisation undefined at ({v},{i},{d})"
                            )));
                        };
                        let e = a.tree.direction_at(w, v).expect("adjacent");
                        if a.h[&v].tiles[i].input(d) != a.h[&w].tiles[j].output(e) {
                            return Ok(Some(format!(
                                "edge equation fails at ({v},{i},{d}) against index {j} of {w}"
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(None)
}

/// Global consistency: local consistency plus global consistency of every
/// section towards its base vertex.
pub fn check_global_annotated(a: &AnnotatedTree, basis: &TypeBasis) -> Result<Option<String>> {
    if let Some(msg) = check_local_annotated(a)? {
        return Ok(Some(msg));
    }
    for v in a.tree.vertices() {
        for i in 0..=a.h[&v].length() {
            let c = section(a, v, i)?;
            if let Some(fault) =
                check_consistency(&c, &a.tree, v, ConsistencyMode::Global, basis)?
            {
                return Ok(Some(format!(
                    "section at ({v},{i}) is globally inconsistent at vertex {} direction {}",
                    fault.vertex, fault.direction
                )));
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Jumps and ranks
// ---------------------------------------------------------------------------

/// All vertices with a jump, mapped to the jump index.
pub fn jumps(a: &AnnotatedTree, basis: &TypeBasis) -> Result<BTreeMap<Vertex, usize>> {
    let mut out = BTreeMap::new();
    for (&v, h) in &a.h {
        if let Some(i) = h.jump_index(basis)? {
            out.insert(v, i);
        }
    }
    Ok(out)
}

/// The jumps each non-base jump depends on: a jump at `v` with index i
/// depends on every other jump vertex whose `t_i0` still reads 0 in the
/// section at (v, i−1) — a potential trigger, taken without pruning. Base
/// jumps map to the empty set.
pub fn dependencies(
    a: &AnnotatedTree,
    basis: &TypeBasis,
) -> Result<BTreeMap<Vertex, BTreeSet<Vertex>>> {
    let jump_map = jumps(a, basis)?;
    let mut out: BTreeMap<Vertex, BTreeSet<Vertex>> = BTreeMap::new();
    for (&v, &i) in &jump_map {
        let deps = out.entry(v).or_default();
        if i == 0 {
            continue;
        }
        let c = section(a, v, i - 1)?;
        for &w in jump_map.keys() {
            if w != v && !in_x_component(&c[&w].t_i0, basis)? {
                deps.insert(w);
            }
        }
    }
    Ok(out)
}

/// The rank of every jump: a base jump (index 0) has rank 1; a non-base
/// jump's rank is one more than the minimal rank among the jumps it
/// depends on. Vertices whose jump reaches no base jump are absent
/// (rank ∞).
pub fn ranks(a: &AnnotatedTree, basis: &TypeBasis) -> Result<BTreeMap<Vertex, usize>> {
    let jump_map = jumps(a, basis)?;
    let deps = dependencies(a, basis)?;
    // triggers[w] = the non-base jumps that depend on w.
    let mut triggers: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    let mut dist: BTreeMap<Vertex, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for (&v, &i) in &jump_map {
        if i == 0 {
            dist.insert(v, 1);
            queue.push_back(v);
            continue;
        }
        for &w in &deps[&v] {
            triggers.entry(w).or_default().push(v);
        }
    }
    while let Some(w) = queue.pop_front() {
        let next = dist[&w] + 1;
        for &v in triggers.get(&w).map(|t| t.as_slice()).unwrap_or(&[]) {
            if !dist.contains_key(&v) {
                dist.insert(v, next);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

/// The rank of the jump at `v`; `None` encodes an infinite rank. Errors
/// when `v` has no jump.
pub fn rank(a: &AnnotatedTree, v: Vertex, basis: &TypeBasis) -> Result<Option<usize>> {
    let jump_map = jumps(a, basis)?;
    if !jump_map.contains_key(&v) {
        return Err(Error::Invalid(format!("no jump at vertex {v}")));
    }
    Ok(ranks(a, basis)?.get(&v).copied())
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

/// The MSO sentence-with-free-x defining membership in φ^∞:
/// ψ(x) = ∀X[∀y(φ(X,y) → Xy) → Xx].
pub fn closure_membership_formula(phi: &Formula) -> Formula {
    let names = phi.all_names();
    let mut y = "y".to_string();
    while names.contains(&y) {
        y.push('q');
    }
    let phi_y = phi.substitute_const("x", &Term::Var(y.clone()));
    let prefixed = Formula::AllFo(
        y.clone(),
        Box::new(Formula::Or(vec![
            phi_y.not(),
            Formula::Pred("X".into(), Term::Var(y)),
        ])),
    );
    Formula::AllSo(
        "X".into(),
        Box::new(Formula::Or(vec![
            prefixed.not(),
            Formula::Pred("X".into(), Term::Const("x".into())),
        ])),
    )
}

#[derive(Debug, Clone)]
pub struct ProposalReport {
    pub well_formed: bool,
    pub locally_consistent: bool,
    pub globally_consistent: bool,
    pub jump_consistent: bool,
    pub vertex_in_fixpoint: bool,
    /// Rank of the jump at the distinguished vertex, when it has one.
    pub rank: Option<usize>,
    pub diagnostics: Vec<String>,
}

impl ProposalReport {
    pub fn is_proposal(&self) -> bool {
        self.well_formed
            && self.locally_consistent
            && self.globally_consistent
            && self.jump_consistent
            && self.vertex_in_fixpoint
    }
}

/// Check whether (T, h, s, v) is a proposal for `phi`: histories satisfy
/// their invariants, the annotation is locally and globally consistent, the
/// jump set equals φ^∞ (computed by stage iteration and, on small trees,
/// cross-checked against the defining MSO formula), and v ∈ φ^∞.
pub fn check_proposal(
    phi: &Formula,
    a: &AnnotatedTree,
    v: Vertex,
    basis: &TypeBasis,
) -> Result<ProposalReport> {
    let mut diagnostics = Vec::new();
    let mut well_formed = true;
    for u in a.tree.vertices() {
        match a.h.get(&u) {
            None => {
                well_formed = false;
                diagnostics.push(format!("vertex {u} has no history"));
            }
            Some(h) => {
                if let Some(msg) = check_history(h, phi, basis)? {
                    well_formed = false;
                    diagnostics.push(format!("history at {u}: {msg}"));
                }
            }
        }
    }
    let locally_consistent = match check_local_annotated(a)? {
        None => true,
        Some(msg) => {
            diagnostics.push(format!("local consistency: {msg}"));
            false
        }
    };
    let globally_consistent = if locally_consistent {
        match check_global_annotated(a, basis)? {
            None => true,
            Some(msg) => {
                diagnostics.push(format!("global consistency: {msg}"));
                false
            }
        }
    } else {
        false
    };
    let fixpoint = evaluate_stages(phi, &a.tree)?.fixpoint().clone();
    if a.tree.len() <= MSO_CROSS_CHECK_CAP {
        let psi = closure_membership_formula(phi);
        let mut by_formula = BTreeSet::new();
        for u in a.tree.vertices() {
            if model_check(&a.tree.clone().with_x_vertex(u), &psi)? {
                by_formula.insert(u);
            }
        }
        if by_formula != fixpoint {
            return Err(Error::Internal(
                "closure-membership formula disagrees with the stage iteration".into(),
            ));
        }
    }
    let jump_set: BTreeSet<Vertex> = jumps(a, basis)?.into_keys().collect();
    let jump_consistent = jump_set == fixpoint;
    if !jump_consistent {
        diagnostics.push(format!(
            "jump set {jump_set:?} differs from the fixpoint {fixpoint:?}"
        ));
    }
    let vertex_in_fixpoint = fixpoint.contains(&v);
    if !vertex_in_fixpoint {
        diagnostics.push(format!("vertex {v} is not in the fixpoint"));
    }
    let rank = if a.h.get(&v).map_or(false, |h| {
        h.jump_index(basis).ok().flatten().is_some()
    }) {
        ranks(a, basis)?.get(&v).copied()
    } else {
        None
    };
    Ok(ProposalReport {
        well_formed,
        locally_consistent,
        globally_consistent,
        jump_consistent,
        vertex_in_fixpoint,
        rank,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Boundedness–rank correspondence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CorrespondenceReport {
    pub status: BoundednessStatus,
    pub trees_checked: usize,
    pub proposals_checked: usize,
    /// Largest finite rank among the corpus proposals.
    pub max_rank: Option<usize>,
    pub ranks_seen: BTreeSet<usize>,
    /// Proposals whose rank exceeds the claimed bound, if BOUNDED(N).
    pub violations: Vec<String>,
}

/// Empirical check of the correspondence between boundedness and proposal
/// ranks: builds A_{β_cap+1} over every tree of the basis vocabulary with
/// at most `corpus_cap` vertices and compares the observed proposal ranks
/// with the verdict of the stage-difference search.
pub fn boundedness_rank_correspondence(
    phi: &Formula,
    corpus_cap: usize,
    beta_cap: usize,
    basis: &TypeBasis,
) -> Result<CorrespondenceReport> {
    let verdict = boundedness_search(phi, beta_cap)?;
    let trees = enumerate_trees(corpus_cap, &basis.predicates, corpus_cap)?;
    let mut proposals_checked = 0;
    let mut ranks_seen = BTreeSet::new();
    let mut violations = Vec::new();
    for t in &trees {
        let a = annotate(phi, t, beta_cap + 1, basis)?;
        let fixpoint = evaluate_stages(phi, t)?.fixpoint().clone();
        let rank_map = ranks(&a, basis)?;
        for v in fixpoint {
            proposals_checked += 1;
            match rank_map.get(&v) {
                Some(&r) => {
                    ranks_seen.insert(r);
                    if let BoundednessStatus::Bounded(n) = verdict.status {
                        if r > n {
                            violations.push(format!(
                                "rank {r} at vertex {v} exceeds the bound {n}"
                            ));
                        }
                    }
                }
                None => violations.push(format!("vertex {v} has infinite rank")),
            }
        }
    }
    Ok(CorrespondenceReport {
        status: verdict.status,
        trees_checked: trees.len(),
        proposals_checked,
        max_rank: ranks_seen.iter().max().copied(),
        ranks_seen,
        violations,
    })
}

// ---------------------------------------------------------------------------
// Serialization (.ann)
// ---------------------------------------------------------------------------

/// Print an annotated tree in the line-based `.ann` format. Vertex ids are
/// explicit, so the tree round-trips with its numbering intact.
pub fn print_annotated(a: &AnnotatedTree) -> String {
    let mut out = String::from("annotation\n");
    out.push_str(&format!("vertices {}\n", a.tree.len()));
    for v in a.tree.vertices() {
        if !a.tree.labels(v).is_empty() {
            let ls: Vec<&str> = a.tree.labels(v).iter().map(|s| s.as_str()).collect();
            out.push_str(&format!("labels {v} {}\n", ls.join(" ")));
        }
    }
    for (v, dv, w, dw) in a.tree.edges() {
        out.push_str(&format!("edge {v} {dv} {w} {dw}\n"));
    }
    for (v, h) in &a.h {
        for (i, tile) in h.tiles.iter().enumerate() {
            out.push_str(&format!("tile {v} {i} {tile}\n"));
        }
    }
    for (&(v, i, d), &j) in &a.s {
        out.push_str(&format!("sync {v} {i} {d} {j}\n"));
    }
    out.push_str("end\n");
    out
}

/// Parse the `.ann` format produced by [`print_annotated`].
pub fn parse_annotated(text: &str) -> Result<AnnotatedTree> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("annotation") {
        return Err(Error::Parse("expected 'annotation' header".into()));
    }
    let mut tree = TreeStructure::empty();
    let mut n = 0usize;
    let mut tiles: BTreeMap<Vertex, BTreeMap<usize, Tile>> = BTreeMap::new();
    let mut s = BTreeMap::new();
    let mut ended = false;
    let parse_num = |w: &str| -> Result<usize> {
        w.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad number '{w}'")))
    };
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            "vertices" if words.len() == 2 => {
                n = parse_num(words[1])?;
                for _ in 0..n {
                    tree.add_vertex(Vec::<String>::new());
                }
            }
            "labels" if words.len() >= 3 => {
                let v = parse_num(words[1])?;
                if v >= n {
                    return Err(Error::Parse(format!("labels for unknown vertex {v}")));
                }
                for l in &words[2..] {
                    tree.labels_mut(v).insert((*l).to_string());
                }
            }
            "edge" if words.len() == 5 => {
                let (v, dv, w, dw) = (
                    parse_num(words[1])?,
                    parse_num(words[2])? as u8,
                    parse_num(words[3])?,
                    parse_num(words[4])? as u8,
                );
                if v >= n || w >= n {
                    return Err(Error::Parse(format!("edge {v}-{w} out of range")));
                }
                tree.add_edge(v, dv, w, dw)?;
            }
            "tile" if words.len() == 4 => {
                let v = parse_num(words[1])?;
                let i = parse_num(words[2])?;
                let fields: Vec<&str> = words[3].split('|').collect();
                if fields.len() != 8 {
                    return Err(Error::Parse(format!("tile needs 8 fields, got {}", fields.len())));
                }
                let ts = fields
                    .iter()
                    .map(|f| parse_type_token(f))
                    .collect::<Result<Vec<_>>>()?;
                let tile = Tile {
                    t_i0: ts[0].clone(),
                    t_i1: ts[1].clone(),
                    t_i2: ts[2].clone(),
                    t_i3: ts[3].clone(),
                    t_o1: ts[4].clone(),
                    t_o2: ts[5].clone(),
                    t_o3: ts[6].clone(),
                    t_o4: ts[7].clone(),
                };
                if tiles.entry(v).or_default().insert(i, tile).is_some() {
                    return Err(Error::Parse(format!("duplicate tile {v} {i}")));
                }
            }
            "sync" if words.len() == 5 => {
                let key = (
                    parse_num(words[1])?,
                    parse_num(words[2])?,
                    parse_num(words[3])? as u8,
                );
                s.insert(key, parse_num(words[4])?);
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
    tree.validate()?;
    let mut h = BTreeMap::new();
    for v in 0..n {
        let per = tiles
            .remove(&v)
            .ok_or_else(|| Error::Parse(format!("vertex {v} has no tiles")))?;
        let m = per.len();
        let mut seq = Vec::with_capacity(m);
        for i in 0..m {
            seq.push(
                per.get(&i)
                    .cloned()
                    .ok_or_else(|| Error::Parse(format!("tile indices at {v} are not contiguous")))?,
            );
        }
        h.insert(v, History { tiles: seq });
    }
    if let Some(v) = tiles.keys().next() {
        return Err(Error::Parse(format!("tiles for unknown vertex {v}")));
    }
    Ok(AnnotatedTree { tree, h, s })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{nine_path_both_ends_seeded, seed_distance_formula};
    use crate::formula::parse_formula;
    use crate::tree::{path_tree, vertex_subsets};
    use crate::types::shared_basis;

    fn basis() -> &'static TypeBasis {
        shared_basis(1)
    }

    fn seeded_path(n: usize) -> TreeStructure {
        let mut t = path_tree(n);
        t.labels_mut(0).insert("P0".into());
        t
    }

    /// All trees with ≤ 3 vertices over {P0}, expanded by every X-subset.
    fn small_marked_corpus() -> Vec<TreeStructure> {
        let mut out = Vec::new();
        for t in enumerate_trees(3, &["P0".to_string()], 3).unwrap() {
            for xs in vertex_subsets(t.len()) {
                out.push(t.clone().with_x_set(xs));
            }
        }
        out
    }

    fn small_plain_corpus() -> Vec<TreeStructure> {
        let mut out = enumerate_trees(3, &["P0".to_string()], 3).unwrap();
        out.push(seeded_path(5));
        out
    }

    #[test]
    fn single_vertex_tiles_have_empty_inputs() {
        for xs in [BTreeSet::new(), BTreeSet::from([0])] {
            let t = TreeStructure::singleton(["P0"]).with_x_set(xs);
            let tile = canonical_tile(&t, 0, basis()).unwrap();
            for d in DIRS {
                assert_eq!(tile.input(d), &PositiveType::Empty);
                assert_eq!(tile.output(d), &tile.t_i0);
            }
            assert_eq!(tile.t_o4, tile.t_i0);
            assert!(tile.check_equations(basis()).unwrap());
        }
    }

    #[test]
    fn tile_equations_hold_on_the_small_corpus() {
        for t in small_marked_corpus() {
            for (_, tile) in canonical_tiling(&t, basis()).unwrap() {
                assert!(tile.check_equations(basis()).unwrap(), "tile {tile} in {t:?}");
            }
        }
    }

    #[test]
    fn canonical_tilings_are_locally_and_globally_consistent() {
        for t in small_marked_corpus() {
            let c = canonical_tiling(&t, basis()).unwrap();
            let reduct = {
                let mut r = t.clone();
                r.set_x_set(None);
                r
            };
            for v in t.vertices() {
                for mode in [ConsistencyMode::Global, ConsistencyMode::Local] {
                    let fault = check_consistency(&c, &reduct, v, mode, basis()).unwrap();
                    assert_eq!(fault, None, "mode {mode:?} towards {v} in {t:?}");
                }
            }
        }
    }

    #[test]
    fn corrupted_tile_is_reported_with_its_edge() {
        let t = path_tree(3).with_x_set(BTreeSet::new());
        let mut c = canonical_tiling(&t, basis()).unwrap();
        // Vertex 0 is an endpoint: some direction has no neighbour, so its
        // input there must be the empty type. Plant a non-empty one.
        let free = DIRS.into_iter().find(|&d| t.neighbor(0, d).is_none()).unwrap();
        let planted = c[&0].t_o4.clone();
        match free {
            1 => c.get_mut(&0).unwrap().t_i1 = planted.clone(),
            2 => c.get_mut(&0).unwrap().t_i2 = planted.clone(),
            _ => c.get_mut(&0).unwrap().t_i3 = planted.clone(),
        }
        let mut reduct = t.clone();
        reduct.set_x_set(None);
        let fault = check_consistency(&c, &reduct, 2, ConsistencyMode::Local, basis())
            .unwrap()
            .expect("corruption must be detected");
        assert_eq!((fault.vertex, fault.direction), (0, free));
        assert_eq!(fault.expected, PositiveType::Empty);
        assert_eq!(fault.found, planted);
    }

    #[test]
    fn trivial_fixpoints_have_trivial_histories() {
        let t = TreeStructure::singleton(Vec::<String>::new());
        let top = parse_formula("true").unwrap();
        let h = history_of(&top, &t, 0, basis()).unwrap();
        assert_eq!(h.length(), 1);
        assert_eq!(h.jump_index(basis()).unwrap(), Some(0));
        assert_eq!(check_history(&h, &top, basis()).unwrap(), None);

        let xx = parse_formula("(X x)").unwrap();
        let h = history_of(&xx, &t, 0, basis()).unwrap();
        assert_eq!(h.length(), 0);
        assert_eq!(h.jump_index(basis()).unwrap(), None);
        assert_eq!(check_history(&h, &xx, basis()).unwrap(), None);
    }

    #[test]
    fn seeded_path_histories_match_the_stage_pattern() {
        let phi = seed_distance_formula();
        let t = nine_path_both_ends_seeded();
        let st = stage_tilings(&phi, &t, basis()).unwrap();
        let endpoint = history_from_stages(&st, 0).unwrap();
        let middle = history_from_stages(&st, 4).unwrap();
        // The endpoint enters at stage 1 and stabilizes early; the middle
        // vertex keeps changing until the wave from both seeds meets it.
        assert!(endpoint.tiles.len() < middle.tiles.len());
        for v in t.vertices() {
            let h = history_from_stages(&st, v).unwrap();
            assert_eq!(check_history(&h, &phi, basis()).unwrap(), None, "vertex {v}");
            assert!(h.jump_index(basis()).unwrap().is_some(), "vertex {v}");
        }
    }

    #[test]
    fn annotations_are_globally_consistent() {
        let phi = seed_distance_formula();
        for t in small_plain_corpus() {
            for beta in [0, 1, 3] {
                let a = annotate(&phi, &t, beta, basis()).unwrap();
                assert_eq!(
                    check_global_annotated(&a, basis()).unwrap(),
                    None,
                    "beta {beta} on {t:?}"
                );
                let fixpoint = evaluate_stages(&phi, &t).unwrap().fixpoint().clone();
                let jump_set: BTreeSet<Vertex> =
                    jumps(&a, basis()).unwrap().into_keys().collect();
                assert_eq!(jump_set, fixpoint, "beta {beta} on {t:?}");
            }
        }
    }

    #[test]
    fn section_at_the_beta_index_recovers_the_stage_tiling() {
        let phi = seed_distance_formula();
        let t = nine_path_both_ends_seeded();
        let beta = 3;
        let a = annotate(&phi, &t, beta, basis()).unwrap();
        let st = stage_tilings(&phi, &t, basis()).unwrap();
        for v in t.vertices() {
            let i = a.h[&v].index_of(&st.at(beta)[&v]).unwrap();
            let c = section(&a, v, i).unwrap();
            assert_eq!(&c, st.at(beta), "section at ({v},{i})");
        }
    }

    /// The subtree of `w` pointing away from `v` (w itself included).
    fn downstream(t: &TreeStructure, v: Vertex, w: Vertex) -> BTreeSet<Vertex> {
        let o = orientation(t, v).unwrap();
        let mut out = BTreeSet::from([w]);
        let mut queue = VecDeque::from([w]);
        while let Some(u) = queue.pop_front() {
            for d in DIRS {
                if o[&u] == d {
                    continue;
                }
                if let Some(n) = t.neighbor(u, d) {
                    if out.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sections_are_monotone() {
        let phi = seed_distance_formula();
        let t = nine_path_both_ends_seeded();
        let beta = 4;
        let a = annotate(&phi, &t, beta, basis()).unwrap();
        let st = stage_tilings(&phi, &t, basis()).unwrap();
        for v in t.vertices() {
            for i in 0..=a.h[&v].length() {
                let c = section(&a, v, i).unwrap();
                for w in t.vertices() {
                    let below = downstream(&t, v, w);
                    if c[&w] == st.at(beta)[&w] {
                        for &u in &below {
                            assert_eq!(c[&u], st.at(beta)[&u], "clause (a) at ({v},{i},{w})");
                        }
                    }
                    for alpha in 0..beta {
                        if st.at(alpha)[&w].le(&c[&w]) {
                            for &u in &below {
                                assert!(
                                    st.at(alpha)[&u].le(&c[&u]),
                                    "clause (b) at ({v},{i},{w},{alpha})"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ranks_equal_stages_under_a_late_beta() {
        let phi = seed_distance_formula();
        let beta = 7;
        let mut corpus = enumerate_trees(3, &["P0".to_string()], 3).unwrap();
        corpus.extend((1..=6).map(seeded_path));
        for t in corpus {
            let a = annotate(&phi, &t, beta, basis()).unwrap();
            let trace = evaluate_stages(&phi, &t).unwrap();
            let rank_map = ranks(&a, basis()).unwrap();
            for v in t.vertices() {
                match trace.stage_of(v) {
                    None => assert!(!rank_map.contains_key(&v), "vertex {v} in {t:?}"),
                    Some(s0) => {
                        // stage_of is the least α with v ∈ φ^{α+1}; the
                        // sandwich lemmas pin the rank to exactly the stage.
                        assert_eq!(rank_map.get(&v), Some(&(s0 + 1)), "vertex {v} in {t:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn proposals_accept_canonical_annotations_and_reject_corruption() {
        let phi = seed_distance_formula();
        let t = seeded_path(4);
        let a = annotate(&phi, &t, 3, basis()).unwrap();
        for v in t.vertices() {
            let report = check_proposal(&phi, &a, v, basis()).unwrap();
            assert!(report.is_proposal(), "vertex {v}: {:?}", report.diagnostics);
            assert_eq!(report.rank, Some(v + 1));
        }
        // Deleting one middle history entry must be detected.
        let mut broken = a.clone();
        let h = broken.h.get_mut(&1).unwrap();
        assert!(h.tiles.len() > 2);
        h.tiles.remove(1);
        let report = check_proposal(&phi, &broken, 0, basis()).unwrap();
        assert!(!report.is_proposal());
        assert!(!report.diagnostics.is_empty());
        // A vertex outside the fixpoint is rejected for that reason.
        let px = parse_formula("(P0 x)").unwrap();
        let a = annotate(&px, &t, 2, basis()).unwrap();
        let report = check_proposal(&px, &a, 3, basis()).unwrap();
        assert!(!report.vertex_in_fixpoint);
        assert!(report.well_formed && report.globally_consistent && report.jump_consistent);
    }

    #[test]
    fn correspondence_report_matches_the_search() {
        let top = parse_formula("true").unwrap();
        let r = boundedness_rank_correspondence(&top, 3, 2, basis()).unwrap();
        assert_eq!(r.status, BoundednessStatus::Bounded(1));
        assert_eq!(r.ranks_seen, BTreeSet::from([1]));
        assert!(r.violations.is_empty());
        assert!(r.proposals_checked > 0);

        let px = parse_formula("(P0 x)").unwrap();
        let r = boundedness_rank_correspondence(&px, 3, 2, basis()).unwrap();
        assert_eq!(r.status, BoundednessStatus::Bounded(1));
        assert_eq!(r.ranks_seen, BTreeSet::from([1]));
        assert!(r.violations.is_empty());

        let phi = seed_distance_formula();
        let r = boundedness_rank_correspondence(&phi, 4, 2, basis()).unwrap();
        assert_eq!(r.status, BoundednessStatus::NotBoundedBy(2));
        assert!(r.max_rank.unwrap() >= 3);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn annotation_text_round_trips() {
        let phi = seed_distance_formula();
        let t = seeded_path(4);
        let a = annotate(&phi, &t, 2, basis()).unwrap();
        let text = print_annotated(&a);
        let back = parse_annotated(&text).unwrap();
        assert_eq!(a, back);
        assert!(parse_annotated("annotation\nvertices 1\nend\n").is_err());
    }
}
