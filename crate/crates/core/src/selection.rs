//! Candidate selection: for every node, a capped sample of its combined
//! forward and reverse neighborhood `N(u)`, split by the new/old flag of the
//! edge that produced each candidate.
//!
//! Three interchangeable strategies are provided:
//!
//! * [`Strategy::Naive`] materializes the reverse graph, forms the union per
//!   node, then samples each union down to the cap. Three passes over the
//!   graph with dynamically sized intermediates.
//! * [`Strategy::Fused`] makes a single pass over all edges. Every edge draws
//!   one uniform weight and offers each endpoint to the other's bounded
//!   weight-keyed heap, so each node keeps the lowest-weight `cap` members of
//!   its neighborhood: a uniform random subset.
//! * [`Strategy::Turbo`] makes the same single pass without heaps: each
//!   endpoint is accepted with probability `cap / |N(u)|`, using the
//!   neighborhood sizes the graph maintains on every update.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;

use crate::graph::{KnnGraph, NeighborView};
use crate::rng::{self, Rng};

/// Default cap on candidates per node and flag.
pub const DEFAULT_MAX_CANDIDATES: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Strategy {
    Naive,
    Fused,
    #[default]
    Turbo,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Fused, Strategy::Turbo];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Fused => "fused",
            Strategy::Turbo => "turbo",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected naive, fused or turbo)"))
    }
}

/// Per-node sampled neighborhoods for one iteration.
///
/// Each node has a `new` and an `old` list, both capped at `cap`; an id
/// appears at most once across a node's two lists and never names the node
/// itself.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    n: usize,
    cap: usize,
    new_ids: Vec<u32>,
    new_len: Vec<u32>,
    old_ids: Vec<u32>,
    old_len: Vec<u32>,
}

impl CandidateSet {
    pub fn new(n: usize, cap: usize) -> Self {
        Self {
            n,
            cap,
            new_ids: vec![0; n * cap],
            new_len: vec![0; n],
            old_ids: vec![0; n * cap],
            old_len: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn clear(&mut self) {
        self.new_len.fill(0);
        self.old_len.fill(0);
    }

    #[inline]
    pub fn new_ids(&self, u: usize) -> &[u32] {
        &self.new_ids[u * self.cap..u * self.cap + self.new_len[u] as usize]
    }

    #[inline]
    pub fn old_ids(&self, u: usize) -> &[u32] {
        &self.old_ids[u * self.cap..u * self.cap + self.old_len[u] as usize]
    }

    /// Total candidates of node `u`.
    pub fn len_of(&self, u: usize) -> usize {
        (self.new_len[u] + self.old_len[u]) as usize
    }

    #[inline]
    fn contains(&self, u: usize, id: u32) -> bool {
        self.new_ids(u).contains(&id) || self.old_ids(u).contains(&id)
    }

    #[inline]
    fn list_len(&self, u: usize, is_new: bool) -> usize {
        (if is_new { self.new_len[u] } else { self.old_len[u] }) as usize
    }

    #[inline]
    fn list_mut(&mut self, u: usize, is_new: bool) -> (&mut [u32], &mut u32) {
        let range = u * self.cap..(u + 1) * self.cap;
        if is_new {
            (&mut self.new_ids[range], &mut self.new_len[u])
        } else {
            (&mut self.old_ids[range], &mut self.old_len[u])
        }
    }

    fn set_list(&mut self, u: usize, is_new: bool, ids: impl IntoIterator<Item = u32>) {
        let (slots, len) = self.list_mut(u, is_new);
        let mut count = 0;
        for (slot, id) in slots.iter_mut().zip(ids) {
            *slot = id;
            count += 1;
        }
        *len = count;
    }
}

/// Reverse, union and sample as three separate passes.
pub fn select_naive<G: NeighborView>(graph: &G, cap: usize, seed: u64) -> CandidateSet {
    let mut out = CandidateSet::new(graph.num_nodes(), cap);
    fill_naive(graph, &mut out, &mut rng::seeded(seed));
    out
}

/// Single pass with bounded weight heaps.
pub fn select_fused<G: NeighborView>(graph: &G, cap: usize, seed: u64) -> CandidateSet {
    let mut out = CandidateSet::new(graph.num_nodes(), cap);
    let mut weights = Weights::new(graph.num_nodes(), cap);
    fill_fused(graph, &mut out, &mut weights, &mut rng::seeded(seed));
    out
}

/// Single pass with probabilistic acceptance and no heaps.
pub fn select_turbo<G: NeighborView>(graph: &G, cap: usize, seed: u64) -> CandidateSet {
    let mut out = CandidateSet::new(graph.num_nodes(), cap);
    fill_turbo(graph, &mut out, &mut Stamp::new(graph.num_nodes()), &mut rng::seeded(seed));
    out
}

pub(crate) fn fill_naive<G: NeighborView>(graph: &G, out: &mut CandidateSet, rng: &mut Rng) {
    let n = graph.num_nodes();
    out.clear();

    // reverse
    let mut reverse: Vec<Vec<(u32, bool)>> = vec![Vec::new(); n];
    for u in 0..n {
        for e in graph.neighbors(u) {
            reverse[e.id as usize].push((u as u32, e.is_new));
        }
    }

    // union
    let mut union: Vec<Vec<(u32, bool)>> = Vec::with_capacity(n);
    for (u, rev) in reverse.iter().enumerate() {
        let mut all: Vec<(u32, bool)> = graph.neighbors(u).iter().map(|e| (e.id, e.is_new)).collect();
        for &(w, is_new) in rev {
            if !all.iter().any(|&(id, _)| id == w) {
                all.push((w, is_new));
            }
        }
        union.push(all);
    }
    drop(reverse);

    // sample
    let cap = out.cap;
    for (u, all) in union.iter().enumerate() {
        for flag in [true, false] {
            let pool: Vec<u32> = all.iter().filter(|e| e.1 == flag).map(|e| e.0).collect();
            if pool.len() <= cap {
                out.set_list(u, flag, pool);
            } else {
                out.set_list(u, flag, index::sample(rng, pool.len(), cap).into_iter().map(|i| pool[i]));
            }
        }
    }
}

/// Heap keys for the fused strategy, laid out like the candidate lists.
#[derive(Clone, Debug)]
pub(crate) struct Weights {
    new: Vec<f32>,
    old: Vec<f32>,
}

impl Weights {
    pub(crate) fn new(n: usize, cap: usize) -> Self {
        Self { new: vec![0.0; n * cap], old: vec![0.0; n * cap] }
    }
}

/// Pushes `id` into `u`'s bounded max-heap on weight, keeping the `cap`
/// smallest weights. An id already present in either list is not added again.
#[inline]
fn heap_push(out: &mut CandidateSet, weights: &mut Weights, u: usize, id: u32, w: f32, is_new: bool) {
    let cap = out.cap;
    let full = out.list_len(u, is_new) == cap;
    let keys = if is_new { &mut weights.new } else { &mut weights.old };
    let keys = &mut keys[u * cap..(u + 1) * cap];
    if (full && w >= keys[0]) || out.contains(u, id) {
        return;
    }
    let (ids, len) = out.list_mut(u, is_new);
    if !full {
        let mut pos = *len as usize;
        *len += 1;
        ids[pos] = id;
        keys[pos] = w;
        while pos > 0 {
            let parent = (pos - 1) / 2;
            if keys[parent] >= keys[pos] {
                break;
            }
            keys.swap(parent, pos);
            ids.swap(parent, pos);
            pos = parent;
        }
    } else {
        ids[0] = id;
        keys[0] = w;
        let mut pos = 0;
        loop {
            let left = 2 * pos + 1;
            if left >= cap {
                break;
            }
            let right = left + 1;
            let child = if right < cap && keys[right] > keys[left] { right } else { left };
            if keys[child] <= keys[pos] {
                break;
            }
            keys.swap(child, pos);
            ids.swap(child, pos);
            pos = child;
        }
    }
}

pub(crate) fn fill_fused<G: NeighborView>(graph: &G, out: &mut CandidateSet, weights: &mut Weights, rng: &mut Rng) {
    out.clear();
    for u in 0..graph.num_nodes() {
        for e in graph.neighbors(u) {
            let w: f32 = rng.random();
            heap_push(out, weights, u, e.id, w, e.is_new);
            heap_push(out, weights, e.id as usize, u as u32, w, e.is_new);
        }
    }
}

/// Appends `id` to `u`'s flat list; a full list overwrites a random slot.
#[inline]
fn flat_push(out: &mut CandidateSet, rng: &mut Rng, u: usize, id: u32, is_new: bool) {
    let cap = out.cap;
    let (ids, len) = out.list_mut(u, is_new);
    if (*len as usize) < cap {
        ids[*len as usize] = id;
        *len += 1;
    } else {
        ids[rng.random_range(0..cap)] = id;
    }
}

#[inline]
fn accept(rng: &mut Rng, cap: usize, size: usize) -> bool {
    size <= cap || rng.random::<f32>() * (size as f32) < cap as f32
}

/// Per-node membership marks over node ids, reset lazily.
#[derive(Clone, Debug)]
pub(crate) struct Stamp {
    marks: Vec<u32>,
    mark: u32,
}

impl Stamp {
    pub(crate) fn new(n: usize) -> Self {
        Self { marks: vec![0; n], mark: 0 }
    }

    /// Starts a fresh, empty set.
    #[inline]
    fn next(&mut self) -> u32 {
        if self.mark == u32::MAX {
            self.marks.fill(0);
            self.mark = 0;
        }
        self.mark += 1;
        self.mark
    }

    /// Inserts `id`; false if it was already present.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        let fresh = *slot != self.mark;
        *slot = self.mark;
        fresh
    }
}

/// Drops repeated ids within each node's lists; the new list wins over old.
fn dedup(out: &mut CandidateSet, stamp: &mut Stamp) {
    for u in 0..out.n {
        stamp.next();
        for is_new in [true, false] {
            let (ids, len) = out.list_mut(u, is_new);
            let mut kept = 0;
            for i in 0..*len as usize {
                if stamp.insert(ids[i]) {
                    ids[kept] = ids[i];
                    kept += 1;
                }
            }
            *len = kept as u32;
        }
    }
}

pub(crate) fn fill_turbo<G: NeighborView>(graph: &G, out: &mut CandidateSet, stamp: &mut Stamp, rng: &mut Rng) {
    out.clear();
    let cap = out.cap;
    for u in 0..graph.num_nodes() {
        let size_u = graph.neighborhood_size(u);
        for e in graph.neighbors(u) {
            let v = e.id as usize;
            if accept(rng, cap, size_u) {
                flat_push(out, rng, u, e.id, e.is_new);
            }
            if accept(rng, cap, graph.neighborhood_size(v)) {
                flat_push(out, rng, v, u as u32, e.is_new);
            }
        }
    }
    dedup(out, stamp);
}

/// Reusable selection state for one run: fills a [`CandidateSet`] with the
/// configured strategy and then flags every graph entry that was offered as a
/// new candidate as old.
#[derive(Clone, Debug)]
pub struct Selector {
    strategy: Strategy,
    weights: Option<Weights>,
    stamp: Stamp,
}

impl Selector {
    pub fn new(strategy: Strategy, n: usize, cap: usize) -> Self {
        Self {
            strategy,
            weights: (strategy == Strategy::Fused).then(|| Weights::new(n, cap)),
            stamp: Stamp::new(n),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn select(&mut self, graph: &mut KnnGraph, out: &mut CandidateSet, rng: &mut Rng) {
        match self.strategy {
            Strategy::Naive => fill_naive(graph, out, rng),
            Strategy::Fused => {
                let weights = self.weights.get_or_insert_with(|| Weights::new(out.n, out.cap));
                fill_fused(graph, out, weights, rng)
            }
            Strategy::Turbo => fill_turbo(graph, out, &mut self.stamp, rng),
        }
        self.flag_offered(graph, out);
    }

    fn flag_offered(&mut self, graph: &mut KnnGraph, out: &CandidateSet) {
        for u in 0..out.n {
            let mark = self.stamp.next();
            for &id in out.new_ids(u) {
                self.stamp.insert(id);
            }
            graph.flag_stamped(u, &self.stamp.marks, mark);
        }
    }
}
