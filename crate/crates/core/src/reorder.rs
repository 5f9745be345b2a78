//! Greedy clustering heuristic for memory layout.
//!
//! After an early iteration the approximate graph already links most points to
//! neighbors from their own cluster. [`greedy_cluster`] walks the memory
//! positions once and, for each position `i`, pulls the closest not yet placed
//! neighbor of the node sitting there into position `i + 1`. Permuting the
//! dataset with the result places chains of data-space neighbors next to each
//! other, which improves locality for the remaining iterations.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::dataset::ClusterLabels;
use crate::error::{param, Result};
use crate::graph::{sort_entries, NeighborView};
use crate::rng;

/// A bijection `σ` on `0..n` stored together with its inverse.
///
/// `σ(i)` is the position node `i` moves to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    sigma: Vec<u32>,
    sigma_inv: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let sigma: Vec<u32> = (0..n as u32).collect();
        Self { sigma_inv: sigma.clone(), sigma }
    }

    /// Builds a permutation from its forward map, rejecting non-bijections.
    pub fn from_forward(sigma: Vec<u32>) -> Result<Self> {
        let n = sigma.len();
        let mut sigma_inv = vec![u32::MAX; n];
        for (i, &s) in sigma.iter().enumerate() {
            let s = s as usize;
            if s >= n || sigma_inv[s] != u32::MAX {
                return Err(param(format!("not a permutation: position {s} at index {i}")));
            }
            sigma_inv[s] = i as u32;
        }
        Ok(Self { sigma, sigma_inv })
    }

    /// A uniformly random permutation.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut sigma: Vec<u32> = (0..n as u32).collect();
        sigma.shuffle(&mut rng::seeded(seed));
        Self::from_forward(sigma).expect("shuffle is a bijection")
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `σ(i)`.
    #[inline]
    pub fn forward(&self, i: usize) -> usize {
        self.sigma[i] as usize
    }

    /// `σ⁻¹(p)`: the node placed at position `p`.
    #[inline]
    pub fn backward(&self, p: usize) -> usize {
        self.sigma_inv[p] as usize
    }

    pub fn forward_map(&self) -> &[u32] {
        &self.sigma
    }

    pub fn inverse(&self) -> Self {
        Self { sigma: self.sigma_inv.clone(), sigma_inv: self.sigma.clone() }
    }

    pub fn is_identity(&self) -> bool {
        self.sigma.iter().enumerate().all(|(i, &s)| i == s as usize)
    }

    /// `σ⁻¹(σ(i)) = i` for every `i`.
    pub fn is_consistent(&self) -> bool {
        self.sigma.len() == self.sigma_inv.len()
            && self
                .sigma
                .iter()
                .enumerate()
                .all(|(i, &s)| (s as usize) < self.sigma_inv.len() && self.sigma_inv[s as usize] as usize == i)
    }

    /// Applies `self` first, then `next`.
    pub fn then(&self, next: &Permutation) -> Result<Self> {
        if next.len() != self.len() {
            return Err(param("composing permutations of different sizes"));
        }
        Self::from_forward(self.sigma.iter().map(|&s| next.sigma[s as usize]).collect())
    }
}

/// Derives a locality-improving permutation from the current graph in a
/// single pass over its adjacency.
pub fn greedy_cluster<G: NeighborView>(graph: &G) -> Permutation {
    greedy_cluster_observed(graph, |_| {})
}

/// [`greedy_cluster`], calling `on_swap` with the permutation after every
/// swap.
pub fn greedy_cluster_observed<G, F>(graph: &G, mut on_swap: F) -> Permutation
where
    G: NeighborView,
    F: FnMut(&Permutation),
{
    let n = graph.num_nodes();
    let mut perm = Permutation::identity(n);
    let mut sorted = Vec::with_capacity(graph.k());
    for i in 0..n {
        let target = i + 1;
        let node = perm.backward(i);
        sorted.clear();
        sorted.extend_from_slice(graph.neighbors(node));
        sort_entries(&mut sorted);
        for e in &sorted {
            let a = e.id as usize;
            let spot = perm.forward(a);
            if spot < target {
                continue;
            }
            if spot > target {
                let occupant = perm.backward(target);
                perm.sigma.swap(a, occupant);
                perm.sigma_inv.swap(spot, target);
                on_swap(&perm);
            }
            break;
        }
    }
    perm
}

/// Upper bound on the probability that none of `k` uniformly drawn neighbors
/// shares a node's cluster, out of `c` balanced clusters: `((c-1)/c)^k`.
pub fn cluster_miss_bound(c: usize, k: usize) -> Result<f64> {
    if c < 2 {
        return Err(param(format!("need at least 2 clusters, got {c}")));
    }
    if k < 1 {
        return Err(param("k must be at least 1"));
    }
    Ok(((c - 1) as f64 / c as f64).powi(k as i32))
}

/// Cluster composition of one window of memory positions.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowFractions {
    pub start: usize,
    /// Fraction of the window occupied by each cluster; sums to 1.
    pub fractions: Vec<f64>,
}

impl WindowFractions {
    /// The largest single-cluster fraction.
    pub fn max_fraction(&self) -> f64 {
        self.fractions.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-cluster occupancy of `window`-sized windows of positions after
/// permuting by `perm`. Window starts advance by `window / 4`; the last window
/// always ends at position `n`.
pub fn window_cluster_fraction(
    labels: &ClusterLabels,
    perm: &Permutation,
    window: usize,
) -> Result<Vec<WindowFractions>> {
    let n = labels.len();
    if perm.len() != n {
        return Err(param(format!("{} labels but permutation of size {}", n, perm.len())));
    }
    if window == 0 || n < window {
        return Err(param(format!("window {window} does not fit {n} positions")));
    }
    let c = labels.clusters();
    let stride = (window / 4).max(1);
    let mut starts: Vec<usize> = (0..=n - window).step_by(stride).collect();
    if starts.last() != Some(&(n - window)) {
        starts.push(n - window);
    }
    let placed: Vec<u32> = (0..n).map(|p| labels.get(perm.backward(p))).collect();
    Ok(starts
        .into_iter()
        .map(|start| {
            let mut counts = vec![0usize; c];
            for &l in &placed[start..start + window] {
                counts[l as usize] += 1;
            }
            WindowFractions {
                start,
                fractions: counts.iter().map(|&x| x as f64 / window as f64).collect(),
            }
        })
        .collect())
}

/// Writes `window_start,cluster_id,fraction` rows.
pub fn write_window_csv<W: Write>(w: W, windows: &[WindowFractions]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["window_start", "cluster_id", "fraction"])?;
    for win in windows {
        for (c, f) in win.fractions.iter().enumerate() {
            out.serialize((win.start, c, f))?;
        }
    }
    out.flush()?;
    Ok(())
}
