//! The NN-Descent driver: random initialization, then repeated selection and
//! local join until the number of graph changes drops below
//! `termination_delta · n · k`.

use std::borrow::Cow;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::dataset::{apply_permutation, Dataset};
use crate::distance::{
    cross_block_distances, cross_scalar_distances, mutual_block_distances, mutual_scalar_distances,
    EvalCounter,
};
use crate::error::{param, Result};
use crate::graph::KnnGraph;
use crate::reorder::{greedy_cluster, Permutation};
use crate::rng;
use crate::selection::{CandidateSet, Selector, Strategy, DEFAULT_MAX_CANDIDATES};

/// Which distance path the local join uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Kernel {
    /// 5×5 tiles and diagonal triangles, scalar only for ragged edges.
    #[default]
    Blocked,
    /// One scalar evaluation per pair.
    Scalar,
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blocked" => Ok(Kernel::Blocked),
            "scalar" => Ok(Kernel::Scalar),
            _ => Err(format!("unknown kernel `{s}` (expected blocked or scalar)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunParams {
    pub k: usize,
    /// Cap on new and on old candidates per node.
    pub max_candidates: usize,
    /// Stop once an iteration changes fewer than `termination_delta · n · k`
    /// edges.
    pub termination_delta: f64,
    pub max_iterations: usize,
    pub strategy: Strategy,
    pub kernel: Kernel,
    pub reorder: bool,
    /// The greedy reordering runs after this iteration completes.
    pub reorder_after_iteration: usize,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            k: 20,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            termination_delta: 0.001,
            max_iterations: 30,
            strategy: Strategy::Turbo,
            kernel: Kernel::Blocked,
            reorder: false,
            reorder_after_iteration: 1,
            seed: 0,
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(param(format!("k must be at least 2, got {}", self.k)));
        }
        if self.max_candidates < self.k {
            return Err(param(format!(
                "max_candidates ({}) must be at least k ({})",
                self.max_candidates, self.k
            )));
        }
        if !(self.termination_delta > 0.0 && self.termination_delta < 1.0) {
            return Err(param(format!(
                "termination_delta must lie in (0, 1), got {}",
                self.termination_delta
            )));
        }
        if self.reorder && self.reorder_after_iteration == 0 {
            return Err(param("reorder_after_iteration must be at least 1"));
        }
        Ok(())
    }
}

/// Counters for one iteration. Iteration 0 is the random initialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub wall_time: Duration,
    pub selection_time: Duration,
    pub compute_time: Duration,
    /// Time spent deriving and applying the permutation, if it ran in this
    /// iteration.
    pub reorder_time: Duration,
    pub dist_evals: u64,
    pub changes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub iterations: Vec<IterationMetrics>,
    /// Recall against the exact graph, when the caller measured it.
    pub final_recall: Option<f64>,
}

impl RunMetrics {
    /// Iterations after initialization.
    pub fn iteration_count(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    pub fn total_dist_evals(&self) -> u64 {
        self.iterations.iter().map(|m| m.dist_evals).sum()
    }

    pub fn total_changes(&self) -> u64 {
        self.iterations.iter().map(|m| m.changes).sum()
    }

    pub fn total_time(&self) -> Duration {
        self.iterations.iter().map(|m| m.wall_time).sum()
    }

    pub fn total_selection_time(&self) -> Duration {
        self.iterations.iter().map(|m| m.selection_time).sum()
    }

    /// Writes `iteration,wall_time_s,dist_evals,changes` rows followed by a
    /// `total` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "wall_time_s", "dist_evals", "changes"])?;
        for m in &self.iterations {
            out.serialize((m.iteration, m.wall_time.as_secs_f64(), m.dist_evals, m.changes))?;
        }
        out.serialize((
            "total",
            self.total_time().as_secs_f64(),
            self.total_dist_evals(),
            self.total_changes(),
        ))?;
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// The final graph, in the dataset's original ids.
    pub graph: KnnGraph,
    pub metrics: RunMetrics,
    /// The layout permutation applied during the run, if reordering ran.
    pub permutation: Option<Permutation>,
}

/// Joins the candidates of every node with the blocked kernels.
pub fn compute_step(
    graph: &mut KnnGraph,
    candidates: &CandidateSet,
    dataset: &Dataset,
    counter: &mut EvalCounter,
) -> u64 {
    compute_step_with(graph, candidates, dataset, counter, Kernel::Blocked)
}

/// Local join: for each node, every unordered pair of new candidates and
/// every new × old pair is evaluated and offered to both endpoints' heaps.
/// Returns the number of successful inserts.
pub fn compute_step_with(
    graph: &mut KnnGraph,
    candidates: &CandidateSet,
    dataset: &Dataset,
    counter: &mut EvalCounter,
    kernel: Kernel,
) -> u64 {
    let mut changes = 0u64;
    let mut new_rows: Vec<&[f32]> = Vec::with_capacity(candidates.cap());
    let mut old_rows: Vec<&[f32]> = Vec::with_capacity(candidates.cap());
    for u in 0..candidates.n() {
        let new = candidates.new_ids(u);
        if new.is_empty() {
            continue;
        }
        let old = candidates.old_ids(u);
        new_rows.clear();
        new_rows.extend(new.iter().map(|&id| dataset.row(id as usize)));
        old_rows.clear();
        old_rows.extend(old.iter().map(|&id| dataset.row(id as usize)));

        let mut update = |a: u32, b: u32, dist: f32| {
            let (a, b) = (a as usize, b as usize);
            changes += graph.try_insert(a, b, dist) as u64;
            changes += graph.try_insert(b, a, dist) as u64;
        };
        match kernel {
            Kernel::Blocked => {
                mutual_block_distances(&new_rows, counter, |i, j, d| update(new[i], new[j], d));
                cross_block_distances(&new_rows, &old_rows, counter, |i, j, d| update(new[i], old[j], d));
            }
            Kernel::Scalar => {
                mutual_scalar_distances(&new_rows, counter, |i, j, d| update(new[i], new[j], d));
                cross_scalar_distances(&new_rows, &old_rows, counter, |i, j, d| update(new[i], old[j], d));
            }
        }
    }
    changes
}

/// Builds an approximate K-NN graph of `dataset`.
pub fn run(dataset: &Dataset, params: &RunParams) -> Result<RunOutput> {
    run_observed(dataset, params, |_, _| {})
}

/// [`run`], calling `observe(iteration, graph)` after initialization and
/// after every iteration with the graph in original ids.
pub fn run_observed<F>(dataset: &Dataset, params: &RunParams, mut observe: F) -> Result<RunOutput>
where
    F: FnMut(usize, &KnnGraph),
{
    params.validate()?;
    let n = dataset.n();
    if n <= params.k {
        return Err(param(format!("n={n} must exceed k={}", params.k)));
    }

    let mut rng = rng::seeded(params.seed);
    let mut counter = EvalCounter::new();
    let mut metrics = RunMetrics::default();

    let start = Instant::now();
    let mut graph = KnnGraph::init_random_with(dataset, params.k, &mut rng, &mut counter)?;
    metrics.iterations.push(IterationMetrics {
        iteration: 0,
        wall_time: start.elapsed(),
        dist_evals: counter.evals(),
        ..Default::default()
    });
    observe(0, &graph);

    let mut data = Cow::Borrowed(dataset);
    let mut permutation: Option<Permutation> = None;
    let mut candidates = CandidateSet::new(n, params.max_candidates);
    let mut selector = Selector::new(params.strategy, n, params.max_candidates);
    let threshold = params.termination_delta * (n * params.k) as f64;

    for iteration in 1..=params.max_iterations {
        let evals_before = counter.evals();
        let start = Instant::now();

        selector.select(&mut graph, &mut candidates, &mut rng);
        let selected = Instant::now();
        graph.reset_changes();
        let changes = compute_step_with(&mut graph, &candidates, &data, &mut counter, params.kernel);
        debug_assert_eq!(changes, graph.changes_in_last_pass());
        let computed = Instant::now();

        let mut reorder_time = Duration::ZERO;
        if params.reorder && iteration == params.reorder_after_iteration && permutation.is_none() {
            let perm = greedy_cluster(&graph);
            data = Cow::Owned(apply_permutation(&data, &perm)?);
            graph = graph.permuted(&perm)?;
            permutation = Some(perm);
            reorder_time = computed.elapsed();
        }

        metrics.iterations.push(IterationMetrics {
            iteration,
            wall_time: start.elapsed(),
            selection_time: selected - start,
            compute_time: computed - selected,
            reorder_time,
            dist_evals: counter.evals() - evals_before,
            changes,
        });
        match &permutation {
            Some(perm) => observe(iteration, &graph.permuted(&perm.inverse())?),
            None => observe(iteration, &graph),
        }

        if (changes as f64) < threshold {
            break;
        }
    }

    if let Some(perm) = &permutation {
        graph = graph.permuted(&perm.inverse())?;
    }
    debug_assert_eq!(metrics.total_dist_evals(), counter.evals());
    Ok(RunOutput { graph, metrics, permutation })
}
