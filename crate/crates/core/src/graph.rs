//! The mutable K-NN graph approximation.
//!
//! Each node owns a bounded max-heap of exactly `k` [`NeighborEntry`]s keyed
//! by distance, stored contiguously in one flat buffer. Alongside the heaps
//! the graph keeps `|N(u)|`, the size of each node's combined forward and
//! reverse neighborhood, which turbo sampling needs to set its acceptance
//! probability.

use std::io::{Read, Write};

use rand::seq::index;

use crate::dataset::Dataset;
use crate::distance::{l2_sq, EvalCounter};
use crate::error::{format, param, Result};
use crate::reorder::Permutation;
use crate::rng::{self, Rng};

/// One directed edge `u -> id` of the graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEntry {
    pub id: u32,
    /// Squared distance to the owning node.
    pub dist: f32,
    /// Set until the entry has been offered to a local join as a new
    /// candidate.
    pub is_new: bool,
}

/// Read access to a graph's adjacency, as used by selection and reordering.
///
/// Implemented by [`KnnGraph`]; tests wrap it to count accesses.
pub trait NeighborView {
    fn num_nodes(&self) -> usize;

    fn k(&self) -> usize;

    /// The `k` entries of node `u`, in heap order.
    fn neighbors(&self, u: usize) -> &[NeighborEntry];

    /// `|N(u)|`: entries naming `u` across all heaps, plus `k`.
    fn neighborhood_size(&self, u: usize) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    entries: Vec<NeighborEntry>,
    /// Mirror of each heap's root distance, compact for the insert test.
    max_dist: Vec<f32>,
    reverse_degree: Vec<u32>,
    changes: u64,
}

fn sift_down(heap: &mut [NeighborEntry], mut pos: usize) {
    let len = heap.len();
    loop {
        let left = 2 * pos + 1;
        if left >= len {
            return;
        }
        let right = left + 1;
        let child = if right < len && heap[right].dist > heap[left].dist {
            right
        } else {
            left
        };
        if heap[child].dist > heap[pos].dist {
            heap.swap(pos, child);
            pos = child;
        } else {
            return;
        }
    }
}

fn heapify(heap: &mut [NeighborEntry]) {
    for pos in (0..heap.len() / 2).rev() {
        sift_down(heap, pos);
    }
}

impl KnnGraph {
    /// Random initial graph: every node gets `k` distinct uniformly chosen
    /// neighbors other than itself, with their true distances.
    pub fn init_random(dataset: &Dataset, k: usize, seed: u64, counter: &mut EvalCounter) -> Result<Self> {
        Self::init_random_with(dataset, k, &mut rng::seeded(seed), counter)
    }

    pub(crate) fn init_random_with(
        dataset: &Dataset,
        k: usize,
        rng: &mut Rng,
        counter: &mut EvalCounter,
    ) -> Result<Self> {
        let n = dataset.n();
        if k < 2 {
            return Err(param(format!("k must be at least 2, got {k}")));
        }
        if k >= n {
            return Err(param(format!("k={k} must be smaller than n={n}")));
        }
        if n > u32::MAX as usize {
            return Err(param("too many points for 32-bit ids"));
        }
        let mut entries = Vec::with_capacity(n * k);
        let mut reverse_degree = vec![k as u32; n];
        for u in 0..n {
            let start = entries.len();
            for j in index::sample(rng, n - 1, k) {
                let v = if j >= u { j + 1 } else { j };
                let dist = l2_sq(dataset.row(u), dataset.row(v), counter);
                reverse_degree[v] += 1;
                entries.push(NeighborEntry { id: v as u32, dist, is_new: true });
            }
            heapify(&mut entries[start..]);
        }
        let max_dist = entries.chunks_exact(k).map(|h| h[0].dist).collect();
        Ok(Self { n, k, entries, max_dist, reverse_degree, changes: 0 })
    }

    /// Builds a graph from explicit `(id, dist)` lists, one per node, all
    /// flagged new.
    pub fn from_lists(lists: &[Vec<(u32, f32)>]) -> Result<Self> {
        let n = lists.len();
        let k = lists.first().map_or(0, Vec::len);
        if n < 2 || k == 0 || k >= n {
            return Err(param(format!("cannot build a graph with n={n}, k={k}")));
        }
        let mut entries = Vec::with_capacity(n * k);
        let mut reverse_degree = vec![k as u32; n];
        for (u, list) in lists.iter().enumerate() {
            if list.len() != k {
                return Err(param(format!("node {u} has {} neighbors, expected {k}", list.len())));
            }
            let start = entries.len();
            for &(id, dist) in list {
                let v = id as usize;
                if v >= n || v == u || !(dist >= 0.0) {
                    return Err(param(format!("invalid entry ({id}, {dist}) for node {u}")));
                }
                if entries[start..].iter().any(|e: &NeighborEntry| e.id == id) {
                    return Err(param(format!("duplicate neighbor {id} for node {u}")));
                }
                reverse_degree[v] += 1;
                entries.push(NeighborEntry { id, dist, is_new: true });
            }
            heapify(&mut entries[start..]);
        }
        let max_dist = entries.chunks_exact(k).map(|h| h[0].dist).collect();
        Ok(Self { n, k, entries, max_dist, reverse_degree, changes: 0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[NeighborEntry] {
        &self.entries[u * self.k..(u + 1) * self.k]
    }

    /// Node `u`'s entries ascending by distance, ties by lower id.
    pub fn sorted_neighbors(&self, u: usize) -> Vec<NeighborEntry> {
        let mut row = self.neighbors(u).to_vec();
        sort_entries(&mut row);
        row
    }

    /// Largest distance in `u`'s heap.
    #[inline]
    pub fn max_dist(&self, u: usize) -> f32 {
        self.max_dist[u]
    }

    pub fn reverse_degree(&self, u: usize) -> usize {
        self.reverse_degree[u] as usize
    }

    /// Offers `v` at distance `dist` to node `u`'s heap.
    ///
    /// Succeeds only for a strict improvement over the current maximum and
    /// when `v` is not already present; the evicted maximum and `v` have
    /// their neighborhood sizes updated immediately.
    #[inline]
    pub fn try_insert(&mut self, u: usize, v: usize, dist: f32) -> bool {
        if u == v || !(dist < self.max_dist[u]) {
            return false;
        }
        let k = self.k;
        let heap = &mut self.entries[u * k..(u + 1) * k];
        let id = v as u32;
        if heap.iter().fold(false, |hit, e| hit | (e.id == id)) {
            return false;
        }
        let evicted = heap[0].id as usize;
        heap[0] = NeighborEntry { id, dist, is_new: true };
        sift_down(heap, 0);
        self.max_dist[u] = heap[0].dist;
        self.reverse_degree[evicted] -= 1;
        self.reverse_degree[v] += 1;
        self.changes += 1;
        true
    }

    /// Marks the listed entries of `u` as no longer new. Ids not present are
    /// skipped.
    pub fn flag_consumed(&mut self, u: usize, ids: &[u32]) {
        let k = self.k;
        for e in &mut self.entries[u * k..(u + 1) * k] {
            if e.is_new && ids.contains(&e.id) {
                e.is_new = false;
            }
        }
    }

    /// Like [`KnnGraph::flag_consumed`], but membership is `stamp[id] == mark`.
    pub(crate) fn flag_stamped(&mut self, u: usize, stamp: &[u32], mark: u32) {
        let k = self.k;
        for e in &mut self.entries[u * k..(u + 1) * k] {
            if e.is_new && stamp[e.id as usize] == mark {
                e.is_new = false;
            }
        }
    }

    /// Successful inserts since the last [`KnnGraph::reset_changes`].
    pub fn changes_in_last_pass(&self) -> u64 {
        self.changes
    }

    pub fn reset_changes(&mut self) {
        self.changes = 0;
    }

    /// The graph relabeled through `perm`: row `σ(u)` holds node `u`'s heap
    /// and every stored id `v` becomes `σ(v)`.
    pub fn permuted(&self, perm: &Permutation) -> Result<Self> {
        if perm.len() != self.n {
            return Err(param(format!(
                "permutation of size {} applied to graph of {} nodes",
                perm.len(),
                self.n
            )));
        }
        let k = self.k;
        let mut entries = self.entries.clone();
        let mut reverse_degree = vec![0; self.n];
        let mut max_dist = vec![0.0; self.n];
        for u in 0..self.n {
            let dst = perm.forward(u);
            max_dist[dst] = self.max_dist[u];
            let out = &mut entries[dst * k..(dst + 1) * k];
            for (o, e) in out.iter_mut().zip(self.neighbors(u)) {
                *o = NeighborEntry { id: perm.forward(e.id as usize) as u32, ..*e };
            }
            reverse_degree[dst] = self.reverse_degree[u];
        }
        Ok(Self { entries, max_dist, reverse_degree, ..*self })
    }

    /// Full scan of the structural invariants. Returns a description of the
    /// first violation found.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut counted = vec![self.k as u32; self.n];
        for u in 0..self.n {
            let heap = self.neighbors(u);
            for (j, e) in heap.iter().enumerate() {
                let v = e.id as usize;
                if v >= self.n || v == u {
                    return Err(format!("node {u} has invalid neighbor {v}"));
                }
                if !(e.dist >= 0.0) {
                    return Err(format!("node {u} has negative distance {}", e.dist));
                }
                if heap[..j].iter().any(|p| p.id == e.id) {
                    return Err(format!("node {u} lists {v} twice"));
                }
                if j > 0 && heap[(j - 1) / 2].dist < e.dist {
                    return Err(format!("heap order violated at node {u} slot {j}"));
                }
                counted[v] += 1;
            }
            if heap[0].dist != self.max_dist[u] {
                return Err(format!("cached max distance of {u} is stale"));
            }
        }
        match (0..self.n).find(|&u| counted[u] != self.reverse_degree[u]) {
            Some(u) => Err(format!(
                "neighborhood size of {u} is {} but recount gives {}",
                self.reverse_degree[u], counted[u]
            )),
            None => Ok(()),
        }
    }

    /// Writes `node,neighbor,distance` rows sorted by node, then distance.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(w, (0..self.n).map(|u| {
            let row = self.sorted_neighbors(u);
            (u, row.into_iter().map(|e| (e.id, e.dist as f64)).collect())
        }))
    }
}

impl NeighborView for KnnGraph {
    fn num_nodes(&self) -> usize {
        self.n
    }

    fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn neighbors(&self, u: usize) -> &[NeighborEntry] {
        KnnGraph::neighbors(self, u)
    }

    #[inline]
    fn neighborhood_size(&self, u: usize) -> usize {
        self.reverse_degree[u] as usize
    }
}

pub(crate) fn sort_entries(row: &mut [NeighborEntry]) {
    row.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
}

pub(crate) fn write_rows_csv<W, I>(w: W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, Vec<(u32, f64)>)>,
{
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["node", "neighbor", "distance"])?;
    for (u, row) in rows {
        for (v, dist) in row {
            out.serialize((u, v, dist))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Neighbor id lists read back from a graph CSV.
///
/// Rows must be grouped by node in ascending order with the same number of
/// neighbors per node.
pub fn read_neighbor_csv<R: Read>(r: R) -> Result<Vec<Vec<u32>>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut lists: Vec<Vec<u32>> = Vec::new();
    for rec in reader.deserialize::<(usize, u32, f64)>() {
        let (u, v, _) = rec?;
        if u == lists.len() {
            lists.push(Vec::new());
        } else if u + 1 != lists.len() {
            return Err(format(format!("graph rows out of order at node {u}")));
        }
        lists[u].push(v);
    }
    let k = lists.first().map_or(0, Vec::len);
    if lists.is_empty() || lists.iter().any(|l| l.len() != k) {
        return Err(format("graph rows have uneven neighbor counts"));
    }
    if lists.iter().flatten().any(|&v| v as usize >= lists.len()) {
        return Err(format("neighbor id out of range"));
    }
    Ok(lists)
}
