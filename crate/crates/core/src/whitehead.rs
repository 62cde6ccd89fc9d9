//! Whitehead graphs, the cutpoint test, and Whitehead's primitivity
//! algorithm.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use petgraph::algo::articulation_points::articulation_points;
use petgraph::graph::UnGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freegroup::{whitehead_automorphisms, ConjClass, FreeGroupError, Letter, WhiteheadAutomorphism, WhiteheadMove, Word};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WhiteheadError {
    #[error(transparent)]
    FreeGroup(#[from] FreeGroupError),
    #[error("the trivial word is not primitive and has no Whitehead minimization")]
    TrivialWord,
    #[error("budget exhausted after {spent} automorphism applications")]
    BudgetExhausted { spent: usize },
    #[error("enumeration exceeded {limit} classes")]
    TooManyClasses { limit: usize },
}

/// Unordered graph on a set of letters; edges are kept with multiplicity but
/// every structural query uses the underlying simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhiteheadGraph {
    rank: usize,
    vertices: BTreeSet<Letter>,
    edges: BTreeMap<(Letter, Letter), usize>,
}

fn edge_key(a: Letter, b: Letter) -> (Letter, Letter) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl WhiteheadGraph {
    /// Graph with all `2n` vertices and no edges.
    pub fn empty(rank: usize) -> WhiteheadGraph {
        WhiteheadGraph { rank, vertices: Letter::all(rank).collect(), edges: BTreeMap::new() }
    }

    /// `Wh(A, X)`: for every cyclically adjacent pair `c d` in a word of `A`
    /// add the edge `{c, d⁻¹}`. A length-one word `a` contributes `{a, a⁻¹}`.
    /// Words are cyclically reduced first.
    pub fn build(words: &[Word], rank: usize) -> Result<WhiteheadGraph, WhiteheadError> {
        let mut g = WhiteheadGraph::empty(rank);
        for w in words {
            w.check_rank(rank)?;
            g.add_word(w);
        }
        Ok(g)
    }

    pub fn of_word(w: &Word) -> WhiteheadGraph {
        let mut g = WhiteheadGraph::empty(w.rank());
        g.add_word(w);
        g
    }

    fn add_word(&mut self, w: &Word) {
        let core = w.cyclic_core();
        let letters = core.letters();
        let n = letters.len();
        for k in 0..n {
            let c = letters[k];
            let d = letters[(k + 1) % n];
            *self.edges.entry(edge_key(c, d.inverse())).or_insert(0) += 1;
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn vertices(&self) -> impl Iterator<Item = Letter> + '_ {
        self.vertices.iter().copied()
    }

    /// Edges with multiplicity.
    pub fn edges(&self) -> impl Iterator<Item = ((Letter, Letter), usize)> + '_ {
        self.edges.iter().map(|(&e, &m)| (e, m))
    }

    pub fn simple_edges(&self) -> BTreeSet<(Letter, Letter)> {
        self.edges.keys().copied().collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// The subgraph induced on the letters of the given generators.
    pub fn restrict(&self, generators: &[usize]) -> WhiteheadGraph {
        let keep = |l: &Letter| generators.contains(&l.index());
        WhiteheadGraph {
            rank: self.rank,
            vertices: self.vertices.iter().copied().filter(keep).collect(),
            edges: self.edges.iter().filter(|((a, b), _)| keep(a) && keep(b)).map(|(&e, &m)| (e, m)).collect(),
        }
    }

    /// Union of vertex sets and edge multisets. In the simple view this is
    /// the union with duplicate edges identified.
    pub fn union(&self, other: &WhiteheadGraph) -> Result<WhiteheadGraph, WhiteheadError> {
        if self.rank != other.rank {
            return Err(FreeGroupError::RankMismatch { expected: self.rank, found: other.rank }.into());
        }
        let mut out = self.clone();
        out.vertices.extend(other.vertices.iter().copied());
        for (&e, &m) in &other.edges {
            *out.edges.entry(e).or_insert(0) += m;
        }
        Ok(out)
    }

    /// Same vertex set and same simple edge set.
    pub fn simple_eq(&self, other: &WhiteheadGraph) -> bool {
        self.vertices == other.vertices && self.edges.keys().eq(other.edges.keys())
    }

    /// Simple edges of `sub` not present in `self`.
    pub fn missing_edges(&self, sub: &WhiteheadGraph) -> Vec<(Letter, Letter)> {
        sub.edges.keys().filter(|e| !self.edges.contains_key(e)).copied().collect()
    }

    pub fn contains(&self, sub: &WhiteheadGraph) -> bool {
        sub.edges.keys().all(|e| self.edges.contains_key(e))
    }

    fn adjacency(&self) -> BTreeMap<Letter, Vec<Letter>> {
        let mut adj: BTreeMap<Letter, Vec<Letter>> = self.vertices.iter().map(|&v| (v, Vec::new())).collect();
        for &(a, b) in self.edges.keys() {
            if a != b && self.vertices.contains(&a) && self.vertices.contains(&b) {
                adj.get_mut(&a).unwrap().push(b);
                adj.get_mut(&b).unwrap().push(a);
            }
        }
        adj
    }

    /// Connectivity over every vertex; an isolated vertex disconnects.
    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let Some(&start) = self.vertices.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in &adj[&v] {
                if seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.len() == self.vertices.len()
    }

    /// Articulation vertices of the simple graph.
    pub fn cutpoints(&self) -> BTreeSet<Letter> {
        let verts: Vec<Letter> = self.vertices.iter().copied().collect();
        let mut g: UnGraph<Letter, ()> = UnGraph::default();
        let idx: BTreeMap<Letter, _> = verts.iter().map(|&v| (v, g.add_node(v))).collect();
        for &(a, b) in self.edges.keys() {
            if a != b {
                if let (Some(&ia), Some(&ib)) = (idx.get(&a), idx.get(&b)) {
                    g.add_edge(ia, ib, ());
                }
            }
        }
        articulation_points(&g).into_iter().map(|n| g[n]).collect()
    }

    pub fn is_connected_without_cutpoints(&self) -> bool {
        self.is_connected() && self.cutpoints().is_empty()
    }

    /// Graphviz rendering; `x1'` is the vertex of `x1^-1`.
    pub fn to_dot(&self) -> String {
        let label = |l: Letter| {
            if l.is_inverse() {
                format!("x{}'", l.index())
            } else {
                format!("x{}", l.index())
            }
        };
        let mut out = String::from("graph whitehead {\n");
        for &v in &self.vertices {
            let _ = writeln!(out, "  \"{}\";", label(v));
        }
        for (&(a, b), &m) in &self.edges {
            if m > 1 {
                let _ = writeln!(out, "  \"{}\" -- \"{}\" [label=\"{}\"];", label(a), label(b), m);
            } else {
                let _ = writeln!(out, "  \"{}\" -- \"{}\";", label(a), label(b));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Necessary condition for primitivity: the Whitehead graph of the cyclic
/// core is disconnected or has a cutpoint. `false` proves the word is not
/// primitive.
pub fn basic_lemma_filter(w: &Word) -> bool {
    let g = WhiteheadGraph::of_word(w);
    !g.is_connected_without_cutpoints()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitivityStatus {
    Primitive,
    NotPrimitive,
}

/// Outcome of Whitehead minimization. For a primitive word, `chain` carries
/// the word to a conjugate of a single letter. Otherwise `terminal` is a
/// Whitehead-minimal word of cyclic length at least 2.
#[derive(Debug, Clone, Serialize)]
pub struct PrimitivityVerdict {
    pub status: PrimitivityStatus,
    pub word: Word,
    pub chain: Vec<WhiteheadMove>,
    pub terminal: Word,
}

impl PrimitivityVerdict {
    pub fn is_primitive(&self) -> bool {
        self.status == PrimitivityStatus::Primitive
    }

    /// Replays the chain through [`crate::freegroup::FreeAutomorphism::apply`]
    /// and checks the claimed terminal word. For `NotPrimitive`, also checks
    /// that no Whitehead automorphism shortens the terminal word.
    pub fn verify(&self) -> Result<bool, WhiteheadError> {
        let rank = self.word.rank();
        let mut cur = self.word.cyclic_core();
        for mv in &self.chain {
            let next = mv.to_automorphism(rank)?.apply(&cur)?.cyclic_core();
            if next.len() >= cur.len() {
                return Ok(false);
            }
            cur = next;
        }
        if ConjClass::of(&cur) != ConjClass::of(&self.terminal) {
            return Ok(false);
        }
        match self.status {
            PrimitivityStatus::Primitive => Ok(cur.len() == 1),
            PrimitivityStatus::NotPrimitive => {
                if cur.len() <= 1 {
                    return Ok(false);
                }
                let moves = whitehead_automorphisms(rank)?;
                Ok(moves.iter().all(|m| m.automorphism.apply(&cur).map(|w| w.cyclic_length() >= cur.len()).unwrap_or(false)))
            }
        }
    }
}

/// Caps for Whitehead minimization and enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WhiteheadBudget {
    pub max_applications: usize,
    pub max_classes: usize,
}

impl Default for WhiteheadBudget {
    fn default() -> Self {
        WhiteheadBudget { max_applications: 50_000_000, max_classes: 20_000_000 }
    }
}

/// Whitehead automorphisms of a fixed rank, reused across many queries.
pub struct WhiteheadMoves {
    rank: usize,
    moves: Vec<WhiteheadAutomorphism>,
    first_kind: usize,
}

impl WhiteheadMoves {
    pub fn new(rank: usize) -> Result<WhiteheadMoves, WhiteheadError> {
        let moves = whitehead_automorphisms(rank)?;
        let first_kind = moves.iter().take_while(|m| matches!(m.kind, WhiteheadMove::Permutation { .. })).count();
        Ok(WhiteheadMoves { rank, moves, first_kind })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn all(&self) -> &[WhiteheadAutomorphism] {
        &self.moves
    }

    /// Greedy descent: repeatedly apply the first Whitehead automorphism that
    /// strictly shortens the cyclic word. First-kind moves preserve cyclic
    /// length, so only second-kind moves are tried.
    pub fn decide(&self, w: &Word, budget: &WhiteheadBudget) -> Result<PrimitivityVerdict, WhiteheadError> {
        w.check_rank(self.rank)?;
        if w.is_empty() {
            return Err(WhiteheadError::TrivialWord);
        }
        let mut cur = w.cyclic_core();
        let mut chain = Vec::new();
        let mut spent = 0usize;
        'descent: while cur.len() > 1 {
            for m in &self.moves[self.first_kind..] {
                spent += 1;
                if spent > budget.max_applications {
                    return Err(WhiteheadError::BudgetExhausted { spent });
                }
                let next = m.automorphism.apply(&cur)?;
                if next.cyclic_length() < cur.len() {
                    cur = next.cyclic_core();
                    chain.push(m.kind.clone());
                    continue 'descent;
                }
            }
            return Ok(PrimitivityVerdict { status: PrimitivityStatus::NotPrimitive, word: w.clone(), chain, terminal: cur });
        }
        Ok(PrimitivityVerdict { status: PrimitivityStatus::Primitive, word: w.clone(), chain, terminal: cur })
    }

    /// Conjugacy classes (up to inversion) of primitive elements with cyclic
    /// length at most `max_len`: breadth-first search from `x1` over all
    /// Whitehead automorphisms, dropping anything longer than `max_len`.
    /// Peak reduction guarantees a length-nondecreasing path from `x1` to
    /// every primitive class, so the cap does not lose any class.
    pub fn enumerate_primitive_classes(
        &self,
        max_len: usize,
        budget: &WhiteheadBudget,
    ) -> Result<BTreeSet<ConjClass>, WhiteheadError> {
        let start = ConjClass::of(&Word::generator(self.rank, 1));
        let mut seen: HashSet<ConjClass> = HashSet::from([start.clone()]);
        let mut frontier = vec![start];
        while !frontier.is_empty() {
            let found: HashSet<ConjClass> = frontier
                .par_iter()
                .fold(HashSet::new, |mut acc, c| {
                    for m in &self.moves {
                        let img = m.automorphism.apply(c.canonical()).expect("rank checked");
                        if img.cyclic_length() <= max_len {
                            let class = ConjClass::of(&img);
                            if !seen.contains(&class) {
                                acc.insert(class);
                            }
                        }
                    }
                    acc
                })
                .reduce(HashSet::new, |a, b| {
                    let (mut a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
                    a.extend(b);
                    a
                });
            if seen.len() + found.len() > budget.max_classes {
                return Err(WhiteheadError::TooManyClasses { limit: budget.max_classes });
            }
            let mut next: Vec<ConjClass> = found.into_iter().collect();
            seen.extend(next.iter().cloned());
            next.sort();
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }
    /// Representatives of primitive classes of cyclic length at most
    /// `max_len` up to signed permutations of the generators, in the form of
    /// [`relabel_canonical`]. Both primitivity and the Whitehead-graph
    /// properties are invariant under relabelling, and a relabelled
    /// second-kind move is again a second-kind move, so the search only
    /// applies second-kind moves to one representative per orbit.
    pub fn enumerate_primitive_orbits(&self, max_len: usize, budget: &WhiteheadBudget) -> Result<BTreeSet<Word>, WhiteheadError> {
        let start = relabel_canonical(&Word::generator(self.rank, 1));
        let mut seen: HashSet<Word> = HashSet::from([start.clone()]);
        let mut frontier = vec![start];
        while !frontier.is_empty() {
            let found: HashSet<Word> = frontier
                .par_iter()
                .fold(HashSet::new, |mut acc, w| {
                    for m in &self.moves[self.first_kind..] {
                        let img = m.automorphism.apply(w).expect("rank checked");
                        if img.cyclic_length() <= max_len {
                            let rep = relabel_canonical(&img);
                            if !seen.contains(&rep) {
                                acc.insert(rep);
                            }
                        }
                    }
                    acc
                })
                .reduce(HashSet::new, |a, b| {
                    let (mut a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
                    a.extend(b);
                    a
                });
            if seen.len() + found.len() > budget.max_classes {
                return Err(WhiteheadError::TooManyClasses { limit: budget.max_classes });
            }
            let mut next: Vec<Word> = found.into_iter().collect();
            seen.extend(next.iter().cloned());
            next.sort();
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }
}

/// Canonical cyclic word up to rotation, inversion and signed permutation of
/// the generators: over every rotation of the word and its inverse, rename
/// generators in order of first appearance with the first occurrence
/// positive, and keep the lexicographically least result.
pub fn relabel_canonical(w: &Word) -> Word {
    let core = w.cyclic_core();
    let n = core.len();
    let rank = w.rank();
    let inv = core.inverse();
    let mut best: Option<Vec<Letter>> = None;
    let mut cur: Vec<Letter> = Vec::with_capacity(n);
    let mut names: Vec<Option<(usize, bool)>> = vec![None; rank + 1];
    for src in [core.letters(), inv.letters()] {
        for s in 0..n {
            cur.clear();
            names.iter_mut().for_each(|x| *x = None);
            let mut next = 1;
            let mut worse = false;
            let mut tie = best.is_some();
            for (k, &l) in src[s..].iter().chain(&src[..s]).enumerate() {
                let (idx, flip) = *names[l.index()].get_or_insert_with(|| {
                    next += 1;
                    (next - 1, l.is_inverse())
                });
                let out = Letter::new(idx, l.is_inverse() != flip);
                if tie {
                    let b = best.as_ref().expect("tie implies a best");
                    if out > b[k] {
                        worse = true;
                        break;
                    }
                    tie = out == b[k];
                }
                cur.push(out);
            }
            if !worse && best.as_ref().is_none_or(|b| cur < *b) {
                best = Some(cur.clone());
            }
        }
    }
    crate::freegroup::reduce(rank, best.unwrap_or_default()).expect("relabelling keeps the rank")
}

/// Whitehead minimization of a single word. See [`WhiteheadMoves::decide`].
pub fn decide_primitive(w: &Word, budget: &WhiteheadBudget) -> Result<PrimitivityVerdict, WhiteheadError> {
    WhiteheadMoves::new(w.rank())?.decide(w, budget)
}

/// See [`WhiteheadMoves::enumerate_primitive_classes`].
pub fn enumerate_primitive_classes(
    rank: usize,
    max_len: usize,
    budget: &WhiteheadBudget,
) -> Result<BTreeSet<ConjClass>, WhiteheadError> {
    WhiteheadMoves::new(rank)?.enumerate_primitive_classes(max_len, budget)
}

/// Every freely reduced word of length at most `max_len`, shortest first.
pub fn reduced_words(rank: usize, max_len: usize) -> Vec<Word> {
    let mut out = vec![Word::identity(rank)];
    let mut sphere = vec![Word::identity(rank)];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(sphere.len() * (2 * rank - 1).max(1));
        for w in &sphere {
            for l in Letter::all(rank) {
                if w.letters().last() != Some(&l.inverse()) {
                    next.push(w.mul_letter(l));
                }
            }
        }
        out.extend(next.iter().cloned());
        sphere = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freegroup::{nielsen_generators, FreeAutomorphism};
    use proptest::prelude::*;

    fn w(text: &str, rank: usize) -> Word {
        Word::parse(text, rank).unwrap()
    }

    fn l(s: i32) -> Letter {
        Letter::from_signed(s)
    }

    fn simple(edges: &[(i32, i32)]) -> BTreeSet<(Letter, Letter)> {
        edges.iter().map(|&(a, b)| edge_key(l(a), l(b))).collect()
    }

    #[test]
    fn orbit_search_matches_relabelled_classes() {
        for (rank, len) in [(2, 8), (3, 6)] {
            let moves = WhiteheadMoves::new(rank).unwrap();
            let full = moves.enumerate_primitive_classes(len, &WhiteheadBudget::default()).unwrap();
            let reps: BTreeSet<Word> = full.iter().map(|c| relabel_canonical(c.canonical())).collect();
            assert_eq!(moves.enumerate_primitive_orbits(len, &WhiteheadBudget::default()).unwrap(), reps);
        }
    }

    #[test]
    fn relabel_examples() {
        assert_eq!(relabel_canonical(&w("x3^-1", 3)), w("x1", 3));
        assert_eq!(relabel_canonical(&w("x2 x3 x2^-1 x3^-1", 3)), w("x1 x2 x1^-1 x2^-1", 3));
        assert_eq!(relabel_canonical(&w("x1 x2^-1 x1", 2)), w("x1 x1 x2", 2));
        assert!(relabel_canonical(&Word::identity(2)).is_empty());
    }

    #[test]
    fn single_letter_gives_loop_pair() {
        let g = WhiteheadGraph::build(&[w("x1", 2)], 2).unwrap();
        assert_eq!(g.simple_edges(), simple(&[(1, -1)]));
    }

    #[test]
    fn empty_set_gives_no_edges() {
        let g = WhiteheadGraph::build(&[], 2).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(!g.is_connected());
    }

    #[test]
    fn commutator_graph_is_a_four_cycle() {
        let g = WhiteheadGraph::build(&[w("x1 x2 x1^-1 x2^-1", 2)], 2).unwrap();
        // hand enumeration of the cyclic length-2 subwords
        assert_eq!(g.simple_edges(), simple(&[(1, -2), (1, 2), (-1, 2), (-1, -2)]));
        assert!(g.is_connected());
        assert!(g.cutpoints().is_empty());
    }

    #[test]
    fn rank_mismatch_is_reported() {
        assert!(WhiteheadGraph::build(&[w("x1", 2), w("x1", 3)], 2).is_err());
        assert!(WhiteheadGraph::empty(2).union(&WhiteheadGraph::empty(3)).is_err());
    }

    #[test]
    fn union_examples() {
        let g = WhiteheadGraph::build(&[w("x1 x2 x2", 2)], 2).unwrap();
        assert!(g.union(&WhiteheadGraph::empty(2)).unwrap().simple_eq(&g));
        assert!(g.union(&g).unwrap().simple_eq(&g));

        let a = WhiteheadGraph::of_word(&w("x2 x3 x2^-1 x3^-1", 3));
        let b = WhiteheadGraph::of_word(&w("x1 x3 x1^-1 x3^-1", 3));
        let u = a.union(&b).unwrap();
        // two 4-cycles on {x2±, x3±} and {x1±, x3±}
        assert_eq!(
            u.simple_edges(),
            simple(&[(2, -3), (2, 3), (-2, 3), (-2, -3), (1, -3), (1, 3), (-1, 3), (-1, -3)])
        );
        assert!(u.is_connected());
        assert!(u.cutpoints().is_empty());
    }

    #[test]
    fn path_with_isolated_vertex() {
        let mut g = WhiteheadGraph::empty(2);
        g.edges.insert(edge_key(l(1), l(2)), 1);
        g.edges.insert(edge_key(l(2), l(-1)), 1);
        assert!(!g.is_connected());
        assert_eq!(g.cutpoints(), BTreeSet::from([l(2)]));
    }

    /// Articulation vertices by deletion: a vertex is a cutpoint when
    /// removing it increases the number of components.
    fn brute_cutpoints(g: &WhiteheadGraph) -> BTreeSet<Letter> {
        fn components(g: &WhiteheadGraph, skip: Option<Letter>) -> usize {
            let verts: Vec<Letter> = g.vertices().filter(|&v| Some(v) != skip).collect();
            let mut parent: BTreeMap<Letter, Letter> = verts.iter().map(|&v| (v, v)).collect();
            fn find(p: &mut BTreeMap<Letter, Letter>, v: Letter) -> Letter {
                let up = p[&v];
                if up == v {
                    v
                } else {
                    let r = find(p, up);
                    p.insert(v, r);
                    r
                }
            }
            for (a, b) in g.simple_edges() {
                if Some(a) == skip || Some(b) == skip {
                    continue;
                }
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent.insert(ra, rb);
            }
            let roots: BTreeSet<Letter> = verts.iter().map(|&v| find(&mut parent, v)).collect();
            roots.len()
        }
        let base = components(g, None);
        g.vertices().filter(|&v| components(g, Some(v)) > base).collect()
    }

    #[test]
    fn basic_lemma_examples() {
        assert!(basic_lemma_filter(&w("x1", 2)));
        assert!(!basic_lemma_filter(&w("x1 x2 x1^-1 x2^-1", 2)));
        assert!(basic_lemma_filter(&w("x1 x2", 2)));
    }

    #[test]
    fn decide_examples() {
        let budget = WhiteheadBudget::default();
        let v = decide_primitive(&w("x1", 2), &budget).unwrap();
        assert!(v.is_primitive() && v.chain.is_empty());

        // x1 x2 x2 is primitive: {x1 x2 x2, x2} is a basis of F2
        let v = decide_primitive(&w("x1 x2 x2", 2), &budget).unwrap();
        assert!(v.is_primitive());
        assert!(v.verify().unwrap());
        let basis = FreeAutomorphism::new(
            vec![w("x1 x2 x2", 2), w("x2", 2)],
            vec![w("x1 x2^-1 x2^-1", 2), w("x2", 2)],
        );
        assert!(basis.is_ok());

        let v = decide_primitive(&w("x1 x2 x1^-1 x2^-1", 2), &budget).unwrap();
        assert_eq!(v.status, PrimitivityStatus::NotPrimitive);
        assert_eq!(v.terminal.len(), 4);
        assert!(v.verify().unwrap());

        let v = decide_primitive(&w("x1 x1", 2), &budget).unwrap();
        assert_eq!(v.status, PrimitivityStatus::NotPrimitive);

        assert_eq!(decide_primitive(&Word::identity(2), &budget).unwrap_err(), WhiteheadError::TrivialWord);
    }

    #[test]
    fn budget_exhaustion_is_distinct() {
        let tight = WhiteheadBudget { max_applications: 3, max_classes: 10 };
        let r = decide_primitive(&w("x1 x2 x1 x2 x2 x1^-1 x2", 2), &tight);
        assert!(matches!(r, Err(WhiteheadError::BudgetExhausted { .. })));
        let r = enumerate_primitive_classes(3, 6, &tight);
        assert!(matches!(r, Err(WhiteheadError::TooManyClasses { .. })));
    }

    #[test]
    fn tampered_certificate_fails_replay() {
        let budget = WhiteheadBudget::default();
        let mut v = decide_primitive(&w("x1 x2 x1 x2 x2", 2), &budget).unwrap();
        assert!(v.is_primitive());
        assert!(v.verify().unwrap());
        v.chain.pop();
        assert!(!v.verify().unwrap());
    }

    #[test]
    fn enumeration_small_cases() {
        let budget = WhiteheadBudget::default();
        let one = enumerate_primitive_classes(2, 1, &budget).unwrap();
        let expect: BTreeSet<ConjClass> = [w("x1", 2), w("x2", 2)].iter().map(ConjClass::of).collect();
        assert_eq!(one, expect);

        let two = enumerate_primitive_classes(2, 2, &budget).unwrap();
        assert!(two.contains(&ConjClass::of(&w("x1 x2", 2))));
        assert!(two.contains(&ConjClass::of(&w("x1 x2^-1", 2))));
        assert!(!two.contains(&ConjClass::of(&w("x1 x1", 2))));
        assert!(two.iter().all(|c| c.length() <= 2));
    }

    /// Independent oracle for tiny cases: primitive classes are the
    /// conjugacy classes of images of x1 under products of Nielsen generators.
    #[test]
    fn enumeration_matches_nielsen_orbit_search() {
        let gens = nielsen_generators(2).unwrap();
        let mut autos = vec![FreeAutomorphism::identity(2)];
        let mut classes: BTreeSet<ConjClass> = BTreeSet::new();
        for _ in 0..5 {
            let mut next = Vec::new();
            for a in &autos {
                for g in &gens {
                    next.push(a.compose(g).unwrap());
                }
            }
            next.sort_by_key(|a| a.to_string());
            next.dedup();
            for a in &next {
                let c = ConjClass::of(&a.images()[0]);
                if c.length() <= 3 {
                    classes.insert(c);
                }
            }
            autos = next;
        }
        let bfs = enumerate_primitive_classes(2, 3, &WhiteheadBudget::default()).unwrap();
        assert!(classes.is_subset(&bfs));
        assert_eq!(classes, bfs);
    }

    #[test]
    fn enumeration_matches_decide_exhaustively_rank2() {
        let budget = WhiteheadBudget::default();
        let classes = enumerate_primitive_classes(2, 5, &budget).unwrap();
        let moves = WhiteheadMoves::new(2).unwrap();
        let mut by_decide = BTreeSet::new();
        for word in reduced_words(2, 5).into_iter().skip(1) {
            if moves.decide(&word, &budget).unwrap().is_primitive() {
                by_decide.insert(ConjClass::of(&word));
            }
        }
        assert_eq!(classes, by_decide);
    }

    #[test]
    fn dot_export_is_deterministic() {
        let g = WhiteheadGraph::of_word(&w("x1 x2 x1^-1 x2^-1", 2));
        let dot = g.to_dot();
        assert_eq!(dot, g.clone().to_dot());
        assert_eq!(dot.matches(" -- ").count(), 4);
        assert!(dot.contains("\"x1'\""));
        let lines: Vec<&str> = dot.lines().collect();
        assert_eq!(lines[1], "  \"x1\";");
        assert_eq!(lines[2], "  \"x1'\";");
    }

    #[test]
    fn restriction_keeps_only_selected_generators() {
        let g = WhiteheadGraph::of_word(&w("x2 x3 x2^-1 x3^-1", 3));
        assert!(!g.is_connected());
        let r = g.restrict(&[2, 3]);
        assert_eq!(r.vertices().count(), 4);
        assert!(r.is_connected_without_cutpoints());
    }

    fn arb_word(rank: usize, max_len: usize) -> impl Strategy<Value = Word> {
        prop::collection::vec((0..2 * rank).prop_map(Letter::from_code), 1..max_len)
            .prop_map(move |v| crate::freegroup::reduce(rank, v).unwrap())
    }

    proptest! {
        #[test]
        fn relabel_ignores_signed_permutations(w in arb_word(3, 12), perm in Just(vec![1usize, 2, 3]).prop_shuffle(),
                                               signs in prop::collection::vec(any::<bool>(), 3), r in 0usize..12) {
            let moved: Vec<Letter> = w.letters().iter().map(|l| Letter::new(perm[l.index() - 1], l.is_inverse() != signs[l.index() - 1])).collect();
            let moved = crate::freegroup::reduce(3, moved).unwrap().cyclic_core();
            let moved = if moved.is_empty() { moved } else { moved.rotate(r % moved.len()) };
            prop_assert_eq!(relabel_canonical(&moved), relabel_canonical(&w));
            prop_assert_eq!(relabel_canonical(&w.inverse()), relabel_canonical(&w));
        }

        #[test]
        fn build_is_a_union_homomorphism(a in prop::collection::vec(arb_word(3, 10), 0..4),
                                         b in prop::collection::vec(arb_word(3, 10), 0..4)) {
            let joint: Vec<Word> = a.iter().chain(&b).cloned().collect();
            let lhs = WhiteheadGraph::build(&joint, 3).unwrap();
            let rhs = WhiteheadGraph::build(&a, 3).unwrap().union(&WhiteheadGraph::build(&b, 3).unwrap()).unwrap();
            prop_assert!(lhs.simple_eq(&rhs));
        }

        #[test]
        fn cutpoints_match_deletion_oracle(words in prop::collection::vec(arb_word(3, 7), 0..3)) {
            let g = WhiteheadGraph::build(&words, 3).unwrap();
            prop_assert_eq!(g.cutpoints(), brute_cutpoints(&g));
        }

        #[test]
        fn graph_is_conjugation_invariant(word in arb_word(3, 12), u in arb_word(3, 5)) {
            let a = WhiteheadGraph::of_word(&word);
            let b = WhiteheadGraph::of_word(&word.conjugate_by(&u));
            prop_assert_eq!(a, b);
        }
    }
}
