//! Exact K-NN graphs by exhaustive search, recall, and scaling fits.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::dataset::Dataset;
use crate::error::{param, Result};
use crate::graph::{write_rows_csv, KnnGraph};

/// Largest dataset the brute-force oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 100_000;

/// Exact `k` nearest neighbors per node, ascending by distance with ties
/// broken by lower id. Distances are squared and computed in double
/// precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactGraph {
    n: usize,
    k: usize,
    ids: Vec<u32>,
    dists: Vec<f64>,
}

impl ExactGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.ids[u * self.k..(u + 1) * self.k]
    }

    pub fn distances(&self, u: usize) -> &[f64] {
        &self.dists[u * self.k..(u + 1) * self.k]
    }

    /// Writes the same `node,neighbor,distance` layout as
    /// [`KnnGraph::write_csv`].
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(
            w,
            (0..self.n).map(|u| (u, self.neighbors(u).iter().copied().zip(self.distances(u).iter().copied()).collect())),
        )
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn push_bounded(heap: &mut BinaryHeap<Candidate>, k: usize, c: Candidate) {
    if heap.len() < k {
        heap.push(c);
    } else if c < *heap.peek().unwrap() {
        *heap.peek_mut().unwrap() = c;
    }
}

fn l2_sq_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ac, at) = a.as_chunks::<4>();
    let (bc, bt) = b.as_chunks::<4>();
    for (x, y) in ac.iter().zip(bc) {
        for l in 0..4 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    for (x, y) in at.iter().zip(bt) {
        acc[0] += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Exhaustive K-NN graph over all `n(n-1)/2` pairs.
pub fn brute_force_knng(dataset: &Dataset, k: usize) -> Result<ExactGraph> {
    let (n, d) = (dataset.n(), dataset.d());
    if k == 0 || k >= n {
        return Err(param(format!("k={k} must lie in 1..{n}")));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(param(format!("brute force is limited to {BRUTE_FORCE_LIMIT} points, got {n}")));
    }
    let points: Vec<f64> = (0..n).flat_map(|i| dataset.point(i).iter().map(|&x| x as f64)).collect();
    let row = |i: usize| &points[i * d..(i + 1) * d];

    let mut heaps: Vec<BinaryHeap<Candidate>> = (0..n).map(|_| BinaryHeap::with_capacity(k + 1)).collect();
    for i in 0..n {
        let a = row(i);
        for j in i + 1..n {
            let dist = l2_sq_f64(a, row(j));
            push_bounded(&mut heaps[i], k, Candidate { dist, id: j as u32 });
            push_bounded(&mut heaps[j], k, Candidate { dist, id: i as u32 });
        }
    }

    let mut ids = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    for heap in heaps {
        for c in heap.into_sorted_vec() {
            ids.push(c.id);
            dists.push(c.dist);
        }
    }
    Ok(ExactGraph { n, k, ids, dists })
}

fn recall_by<'a, F>(n: usize, k: usize, exact: &ExactGraph, approx_row: F) -> Result<f64>
where
    F: Fn(usize) -> Box<dyn Iterator<Item = u32> + 'a>,
{
    if n != exact.n || k != exact.k {
        return Err(param(format!(
            "graph shape n={n}, k={k} does not match exact graph n={}, k={}",
            exact.n, exact.k
        )));
    }
    let hits: usize = (0..n)
        .map(|u| {
            let truth = exact.neighbors(u);
            approx_row(u).filter(|id| truth.contains(id)).count()
        })
        .sum();
    Ok(hits as f64 / (n * k) as f64)
}

/// Fraction of exact `(node, neighbor)` edges present in `approx`, matched by
/// id only.
pub fn recall(approx: &KnnGraph, exact: &ExactGraph) -> Result<f64> {
    recall_by(approx.n(), approx.k(), exact, |u| Box::new(approx.neighbors(u).iter().map(|e| e.id)))
}

/// [`recall`] for neighbor id lists, such as a graph read back from CSV.
pub fn recall_of_lists(approx: &[Vec<u32>], exact: &ExactGraph) -> Result<f64> {
    let k = approx.first().map_or(0, Vec::len);
    if approx.iter().any(|l| l.len() != k) {
        return Err(param("neighbor lists have uneven lengths"));
    }
    recall_by(approx.len(), k, exact, |u| Box::new(approx[u].iter().copied()))
}

/// Same-shape overlap between two id-list graphs, `reference` playing the
/// exact graph.
pub fn list_overlap(approx: &[Vec<u32>], reference: &[Vec<u32>]) -> Result<f64> {
    let k = reference.first().map_or(0, Vec::len);
    if approx.len() != reference.len() || approx.iter().chain(reference).any(|l| l.len() != k) || k == 0 {
        return Err(param("graphs differ in shape"));
    }
    let hits: usize = approx
        .iter()
        .zip(reference)
        .map(|(a, r)| a.iter().filter(|id| r.contains(id)).count())
        .sum();
    Ok(hits as f64 / (approx.len() * k) as f64)
}

/// Least-squares slope of `log(dist_evals)` against `log(n)`.
pub fn scaling_exponent(sizes: &[usize], dist_evals: &[u64]) -> Result<f64> {
    if sizes.len() != dist_evals.len() {
        return Err(param("sizes and counts differ in length"));
    }
    if sizes.len() < 3 {
        return Err(param(format!("need at least 3 points, got {}", sizes.len())));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(param("sizes must be strictly increasing"));
    }
    if sizes[0] == 0 || dist_evals.contains(&0) {
        return Err(param("sizes and counts must be positive"));
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let ys: Vec<f64> = dist_evals.iter().map(|&c| (c as f64).ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
