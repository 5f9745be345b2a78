//! Squared Euclidean distance kernels.
//!
//! Every kernel accumulates in [`LANES`] independent per-lane sums, one
//! 8-float chunk at a time, and folds the lanes with the same fixed tree at
//! the end. The blocked kernels evaluate up to a [`BLOCK`] × [`BLOCK`] tile of
//! pairs per pass over the data: each row chunk is loaded once and reused for
//! every pair it takes part in, instead of once per pair.
//!
//! Because the per-lane order of operations is the same in every path, the
//! scalar and blocked kernels agree bit for bit on the same inputs.

use crate::dataset::LANES;
use crate::error::{param, Result};

/// Rows per side of a distance tile.
pub const BLOCK: usize = 5;

/// Running count of squared-distance evaluations for one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalCounter {
    evals: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evals(&self) -> u64 {
        self.evals
    }

    #[inline]
    pub fn add(&mut self, evals: u64) {
        self.evals += evals;
    }

    /// Floating point operations implied by the evaluations at dimension `d`:
    /// `d` subtractions, `d` multiplications and `d - 1` additions each.
    pub fn flops(&self, d: usize) -> u64 {
        self.evals * (3 * d as u64 - 1)
    }
}

type Acc = [f32; LANES];

#[inline(always)]
fn fold(acc: Acc) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn accumulate(acc: &mut Acc, a: &[f32; LANES], b: &[f32; LANES]) {
    for l in 0..LANES {
        let t = a[l] - b[l];
        acc[l] += t * t;
    }
}

#[inline(always)]
fn accumulate_tail(acc: &mut Acc, a: &[f32], b: &[f32]) {
    for (l, (x, y)) in a.iter().zip(b).enumerate() {
        let t = x - y;
        acc[l] += t * t;
    }
}

/// `Σ (a_j - b_j)²` without touching any counter.
#[inline]
pub fn l2_sq_uncounted(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let (ac, at) = a.as_chunks::<LANES>();
    let (bc, bt) = b.as_chunks::<LANES>();
    let mut acc = [0.0; LANES];
    for (x, y) in ac.iter().zip(bc) {
        accumulate(&mut acc, x, y);
    }
    accumulate_tail(&mut acc, at, bt);
    fold(acc)
}

/// Squared Euclidean distance between two rows of equal length.
///
/// ```
/// use knn_descent::distance::{l2_sq, EvalCounter};
///
/// let mut counter = EvalCounter::new();
/// let a = [0.0; 8];
/// let b = [3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
/// assert_eq!(l2_sq(&a, &b, &mut counter), 25.0);
/// assert_eq!(counter.evals(), 1);
/// ```
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32], counter: &mut EvalCounter) -> f32 {
    counter.add(1);
    l2_sq_uncounted(a, b)
}

/// A tile of at most [`BLOCK`] × [`BLOCK`] squared distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tile {
    rows: usize,
    cols: usize,
    values: [[f32; BLOCK]; BLOCK],
}

impl Tile {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        assert!(i < self.rows && j < self.cols, "tile index out of range");
        self.values[i][j]
    }
}

/// Full 5×5 tile: ten row chunks are loaded per step for 25 accumulators.
#[inline]
fn tile5(a: &[&[f32]; BLOCK], b: &[&[f32]; BLOCK]) -> [[f32; BLOCK]; BLOCK] {
    let len = a[0].len();
    let chunks = len / LANES;
    let mut acc = [[[0.0f32; LANES]; BLOCK]; BLOCK];
    for c in 0..chunks {
        let lo = c * LANES;
        let ra: [&[f32; LANES]; BLOCK] =
            std::array::from_fn(|i| a[i][lo..lo + LANES].try_into().unwrap());
        let rb: [&[f32; LANES]; BLOCK] =
            std::array::from_fn(|j| b[j][lo..lo + LANES].try_into().unwrap());
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                accumulate(&mut acc[i][j], ra[i], rb[j]);
            }
        }
    }
    let tail = chunks * LANES;
    let mut out = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            if tail < len {
                accumulate_tail(&mut acc[i][j], &a[i][tail..], &b[j][tail..]);
            }
            out[i][j] = fold(acc[i][j]);
        }
    }
    out
}

const TRIANGLE: [(usize, usize); 10] =
    [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];

/// The ten mutual distances among five rows, in [`TRIANGLE`] order.
#[inline]
fn triangle5(r: &[&[f32]; BLOCK]) -> [f32; 10] {
    let len = r[0].len();
    let chunks = len / LANES;
    let mut acc = [[0.0f32; LANES]; 10];
    for c in 0..chunks {
        let lo = c * LANES;
        let rows: [&[f32; LANES]; BLOCK] =
            std::array::from_fn(|i| r[i][lo..lo + LANES].try_into().unwrap());
        for (p, &(i, j)) in TRIANGLE.iter().enumerate() {
            accumulate(&mut acc[p], rows[i], rows[j]);
        }
    }
    let tail = chunks * LANES;
    std::array::from_fn(|p| {
        let (i, j) = TRIANGLE[p];
        let mut a = acc[p];
        if tail < len {
            accumulate_tail(&mut a, &r[i][tail..], &r[j][tail..]);
        }
        fold(a)
    })
}

/// Any tile shape up to 5×5.
fn tile_any(a: &[&[f32]], b: &[&[f32]]) -> [[f32; BLOCK]; BLOCK] {
    let len = a[0].len();
    let chunks = len / LANES;
    let mut acc = [[[0.0f32; LANES]; BLOCK]; BLOCK];
    for c in 0..chunks {
        let lo = c * LANES;
        for (i, ra) in a.iter().enumerate() {
            let x: &[f32; LANES] = ra[lo..lo + LANES].try_into().unwrap();
            for (j, rb) in b.iter().enumerate() {
                accumulate(&mut acc[i][j], x, rb[lo..lo + LANES].try_into().unwrap());
            }
        }
    }
    let tail = chunks * LANES;
    let mut out = [[0.0; BLOCK]; BLOCK];
    for (i, ra) in a.iter().enumerate() {
        for (j, rb) in b.iter().enumerate() {
            accumulate_tail(&mut acc[i][j], &ra[tail..], &rb[tail..]);
            out[i][j] = fold(acc[i][j]);
        }
    }
    out
}

/// Distances between every row of `rows_a` and every row of `rows_b`,
/// each side holding 1 to 5 rows of equal length.
pub fn block_l2_sq(rows_a: &[&[f32]], rows_b: &[&[f32]], counter: &mut EvalCounter) -> Result<Tile> {
    let (ra, rb) = (rows_a.len(), rows_b.len());
    if !(1..=BLOCK).contains(&ra) || !(1..=BLOCK).contains(&rb) {
        return Err(param(format!("tile shape {ra}x{rb} outside 1..=5 x 1..=5")));
    }
    let values = match (<&[&[f32]; BLOCK]>::try_from(rows_a), <&[&[f32]; BLOCK]>::try_from(rows_b)) {
        (Ok(a), Ok(b)) => tile5(a, b),
        _ => tile_any(rows_a, rows_b),
    };
    counter.add((ra * rb) as u64);
    Ok(Tile { rows: ra, cols: rb, values })
}

/// Calls `consumer(i, j, dist)` once for every unordered pair `i < j` of
/// `rows`.
///
/// Whole groups of five rows are handled with diagonal triangles and 5×5
/// tiles; rows left over when the count is not a multiple of five go through
/// the scalar kernel.
pub fn mutual_block_distances<F>(rows: &[&[f32]], counter: &mut EvalCounter, mut consumer: F)
where
    F: FnMut(usize, usize, f32),
{
    let m = rows.len();
    if m < 2 {
        return;
    }
    let groups = m / BLOCK;
    for g in 0..groups {
        let base = g * BLOCK;
        let ga: &[&[f32]; BLOCK] = rows[base..base + BLOCK].try_into().unwrap();
        for (p, &(i, j)) in triangle5(ga).iter().zip(&TRIANGLE) {
            consumer(base + i, base + j, *p);
        }
        for h in g + 1..groups {
            let other = h * BLOCK;
            let gb: &[&[f32]; BLOCK] = rows[other..other + BLOCK].try_into().unwrap();
            let t = tile5(ga, gb);
            for (i, row) in t.iter().enumerate() {
                for (j, &d) in row.iter().enumerate() {
                    consumer(base + i, other + j, d);
                }
            }
        }
    }
    for i in groups * BLOCK..m {
        for j in 0..i {
            consumer(j, i, l2_sq_uncounted(rows[j], rows[i]));
        }
    }
    counter.add((m * (m - 1) / 2) as u64);
}

/// Calls `consumer(i, j, dist)` for every `i` in `rows_a` and `j` in
/// `rows_b`, tiling full 5×5 blocks and handling the ragged edges with the
/// scalar kernel.
pub fn cross_block_distances<F>(
    rows_a: &[&[f32]],
    rows_b: &[&[f32]],
    counter: &mut EvalCounter,
    mut consumer: F,
) where
    F: FnMut(usize, usize, f32),
{
    let (ma, mb) = (rows_a.len(), rows_b.len());
    if ma == 0 || mb == 0 {
        return;
    }
    let (ga, gb) = (ma / BLOCK, mb / BLOCK);
    for g in 0..ga {
        let base = g * BLOCK;
        let ta: &[&[f32]; BLOCK] = rows_a[base..base + BLOCK].try_into().unwrap();
        for h in 0..gb {
            let other = h * BLOCK;
            let tb: &[&[f32]; BLOCK] = rows_b[other..other + BLOCK].try_into().unwrap();
            let t = tile5(ta, tb);
            for (i, row) in t.iter().enumerate() {
                for (j, &d) in row.iter().enumerate() {
                    consumer(base + i, other + j, d);
                }
            }
        }
        for j in gb * BLOCK..mb {
            for i in base..base + BLOCK {
                consumer(i, j, l2_sq_uncounted(rows_a[i], rows_b[j]));
            }
        }
    }
    for i in ga * BLOCK..ma {
        for (j, b) in rows_b.iter().enumerate() {
            consumer(i, j, l2_sq_uncounted(rows_a[i], b));
        }
    }
    counter.add((ma * mb) as u64);
}

/// Reference pairwise evaluation with the scalar kernel only.
pub fn mutual_scalar_distances<F>(rows: &[&[f32]], counter: &mut EvalCounter, mut consumer: F)
where
    F: FnMut(usize, usize, f32),
{
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            consumer(i, j, l2_sq(rows[i], rows[j], counter));
        }
    }
}

/// Scalar counterpart of [`cross_block_distances`].
pub fn cross_scalar_distances<F>(
    rows_a: &[&[f32]],
    rows_b: &[&[f32]],
    counter: &mut EvalCounter,
    mut consumer: F,
) where
    F: FnMut(usize, usize, f32),
{
    for (i, a) in rows_a.iter().enumerate() {
        for (j, b) in rows_b.iter().enumerate() {
            consumer(i, j, l2_sq(a, b, counter));
        }
    }
}
