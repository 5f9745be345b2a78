//! Approximate K-nearest-neighbor graph construction with NN-Descent.
//!
//! The crate builds a K-NN graph over a [`Dataset`] of 32-bit float points
//! under squared Euclidean distance. A run starts from a random graph and
//! repeats two steps until few edges change:
//!
//! 1. **selection** ([`selection`]): every node gathers a capped sample of its
//!    forward and reverse neighbors;
//! 2. **local join** ([`descent::compute_step`]): all admissible pairs inside
//!    each sample are evaluated with blocked distance kernels ([`distance`]),
//!    and closer pairs replace the worst entries of the bounded neighbor heaps
//!    ([`graph`]).
//!
//! Optionally, after the first iteration the greedy clustering heuristic in
//! [`reorder`] derives a permutation that places data-space neighbors next to
//! each other in memory, and the run continues on the permuted layout.
//!
//! [`oracle`] holds the brute-force exact graph used to measure recall.
//!
//! ```
//! use knn_descent::{dataset, descent::{self, RunParams}, oracle};
//!
//! let data = dataset::gen_gaussian(400, 8, false, 7)?;
//! let params = RunParams { k: 10, seed: 7, ..RunParams::default() };
//! let out = descent::run(&data, &params)?;
//!
//! let exact = oracle::brute_force_knng(&data, 10)?;
//! assert!(oracle::recall(&out.graph, &exact)? > 0.95);
//! # Ok::<(), knn_descent::Error>(())
//! ```

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod descent;
pub mod distance;
mod error;
pub mod graph;
pub mod oracle;
pub mod reorder;
pub mod rng;
pub mod selection;

pub use dataset::{ClusterLabels, Dataset};
pub use descent::{RunMetrics, RunOutput, RunParams};
pub use distance::EvalCounter;
pub use error::{Error, Result};
pub use graph::{KnnGraph, NeighborEntry};
pub use oracle::ExactGraph;
pub use reorder::Permutation;
pub use selection::{CandidateSet, Strategy};

// The guide under `book/` is compiled here so its snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/distance.md")]
    mod distance {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/descent.md")]
    mod descent {}
    #[doc = include_str!("../../../book/src/reorder.md")]
    mod reorder {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
