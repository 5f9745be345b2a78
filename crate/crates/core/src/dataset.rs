//! Point storage, synthetic generators, and the binary dataset format.
//!
//! Rows are stored with a stride padded up to a multiple of [`LANES`] and
//! every row starts on a 32-byte boundary, so distance kernels can always
//! consume whole 8-float chunks. Padding lanes hold `0.0` and therefore add
//! nothing to a squared distance.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{format, param, Error, Result};
use crate::reorder::Permutation;
use crate::rng;

/// Floats per kernel chunk; row strides are multiples of this.
pub const LANES: usize = 8;

const MAGIC: &[u8; 4] = b"KNNG";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 8;

#[derive(Clone, Copy, PartialEq)]
#[repr(C, align(32))]
struct Chunk([f32; LANES]);

/// `n` points in `d` dimensions, row-major, rows padded to `row_stride`.
#[derive(Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    row_stride: usize,
    chunks: Vec<Chunk>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("row_stride", &self.row_stride)
            .finish_non_exhaustive()
    }
}

/// Smallest multiple of [`LANES`] that is at least `d`.
pub fn padded_stride(d: usize) -> usize {
    d.div_ceil(LANES) * LANES
}

impl Dataset {
    /// Builds a dataset from `n * d` unpadded row-major values.
    pub fn from_rows(n: usize, d: usize, values: &[f32]) -> Result<Self> {
        let mut ds = Self::zeroed(n, d)?;
        if Some(values.len()) != n.checked_mul(d) {
            return Err(param(format!(
                "expected {} values for n={n}, d={d}, got {}",
                n * d,
                values.len()
            )));
        }
        for (i, row) in values.chunks_exact(d).enumerate() {
            ds.row_mut(i)[..d].copy_from_slice(row);
        }
        Ok(ds)
    }

    fn zeroed(n: usize, d: usize) -> Result<Self> {
        if n < 2 {
            return Err(param(format!("dataset needs at least 2 points, got n={n}")));
        }
        if d == 0 {
            return Err(param("dimension d must be at least 1"));
        }
        let row_stride = padded_stride(d);
        let total = n
            .checked_mul(row_stride / LANES)
            .ok_or_else(|| param("dataset size overflows"))?;
        Ok(Self {
            n,
            d,
            row_stride,
            chunks: vec![Chunk([0.0; LANES]); total],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Padded row length in floats.
    pub fn row_stride(&self) -> usize {
        self.row_stride
    }

    /// The whole padded buffer.
    pub fn as_slice(&self) -> &[f32] {
        // SAFETY: `Chunk` is `repr(C)` around `[f32; LANES]` with size
        // exactly `LANES * 4` bytes, so the chunk buffer is a contiguous run
        // of `chunks.len() * LANES` initialized floats.
        unsafe {
            std::slice::from_raw_parts(self.chunks.as_ptr().cast::<f32>(), self.chunks.len() * LANES)
        }
    }

    fn as_mut_slice(&mut self) -> &mut [f32] {
        // SAFETY: see `as_slice`.
        unsafe {
            std::slice::from_raw_parts_mut(
                self.chunks.as_mut_ptr().cast::<f32>(),
                self.chunks.len() * LANES,
            )
        }
    }

    /// Padded row `i` (length `row_stride`, 32-byte aligned).
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        let s = self.row_stride;
        &self.as_slice()[i * s..(i + 1) * s]
    }

    /// The first `d` values of row `i`.
    pub fn point(&self, i: usize) -> &[f32] {
        &self.row(i)[..self.d]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.row_stride;
        &mut self.as_mut_slice()[i * s..(i + 1) * s]
    }

    /// True when every padding lane is exactly `0.0`.
    pub fn padding_is_zero(&self) -> bool {
        (0..self.n).all(|i| self.row(i)[self.d..].iter().all(|&x| x.to_bits() == 0))
    }

    /// Rows copied so that output row `σ(i)` holds input row `i`.
    pub fn permuted(&self, perm: &Permutation) -> Result<Self> {
        apply_permutation(self, perm)
    }
}

/// Cluster membership for each point of a clustered dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<u32>,
    clusters: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<u32>, clusters: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= clusters) {
            return Err(param(format!("label {bad} out of range for {clusters} clusters")));
        }
        Ok(Self { labels, clusters })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Writes `point,label` rows.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["point", "label"])?;
        for (i, l) in self.labels.iter().enumerate() {
            w.serialize((i, l))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`ClusterLabels::save_csv`]. The cluster count is
    /// one more than the largest label.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut labels = Vec::new();
        for (expected, rec) in r.deserialize::<(usize, u32)>().enumerate() {
            let (point, label) = rec?;
            if point != expected {
                return Err(format(format!("labels out of order at row {expected}")));
            }
            labels.push(label);
        }
        let clusters = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(labels, clusters)
    }
}

/// Synthetic Gaussian data with covariance `2·I_d`.
///
/// With `single` every point is drawn around the origin. Otherwise point `i`
/// comes from the component centered on the canonical basis vector
/// `e_(i mod d)`.
pub fn gen_gaussian(n: usize, d: usize, single: bool, seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::zeroed(n, d)?;
    let mut rng = rng::seeded(seed);
    let std_dev = 2f32.sqrt();
    for i in 0..n {
        let row = ds.row_mut(i);
        for x in &mut row[..d] {
            let z: f32 = StandardNormal.sample(&mut rng);
            *x = std_dev * z;
        }
        if !single {
            row[i % d] += 1.0;
        }
    }
    Ok(ds)
}

/// Mean of cluster `j`: a scaled canonical basis vector. Clusters beyond the
/// first `d` reuse the axes at growing multiples of the scale.
fn cluster_mean(j: usize, d: usize) -> (usize, f32) {
    let scale = 10.0 * (d as f32).sqrt();
    (j % d, scale * (1 + j / d) as f32)
}

/// Synthetic clustered data: `c` unit-covariance Gaussians whose means are far
/// apart relative to their spread, emitted in a shuffled order.
///
/// Points are split evenly among clusters with the remainder going to the
/// last one.
pub fn gen_clustered(n: usize, d: usize, c: usize, seed: u64) -> Result<(Dataset, ClusterLabels)> {
    if c < 2 {
        return Err(param(format!("need at least 2 clusters, got {c}")));
    }
    if n < 2 * c {
        return Err(param(format!("need n >= 2c, got n={n}, c={c}")));
    }
    let mut ds = Dataset::zeroed(n, d)?;
    let mut rng = rng::seeded(seed);

    let per = n / c;
    let mut labels: Vec<u32> = (0..n).map(|i| (i / per).min(c - 1) as u32).collect();
    labels.shuffle(&mut rng);

    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    for (i, &label) in labels.iter().enumerate() {
        let row = ds.row_mut(i);
        for x in &mut row[..d] {
            *x = unit.sample(&mut rng);
        }
        let (axis, offset) = cluster_mean(label as usize, d);
        row[axis] += offset;
    }
    let labels = ClusterLabels::new(labels, c)?;
    Ok((ds, labels))
}

/// Output row `σ(i)` receives input row `i`.
pub fn apply_permutation(dataset: &Dataset, perm: &Permutation) -> Result<Dataset> {
    if perm.len() != dataset.n {
        return Err(param(format!(
            "permutation of size {} applied to {} rows",
            perm.len(),
            dataset.n
        )));
    }
    let per_row = dataset.row_stride / LANES;
    let mut chunks = vec![Chunk([0.0; LANES]); dataset.chunks.len()];
    for i in 0..dataset.n {
        let dst = perm.forward(i);
        chunks[dst * per_row..(dst + 1) * per_row]
            .copy_from_slice(&dataset.chunks[i * per_row..(i + 1) * per_row]);
    }
    Ok(Dataset { chunks, ..*dataset })
}

/// Writes the little-endian binary format: magic, version, `n`, `d`, then the
/// unpadded rows.
pub fn write_binary<W: Write>(dataset: &Dataset, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.n as u64).to_le_bytes())?;
    w.write_all(&(dataset.d as u64).to_le_bytes())?;
    for i in 0..dataset.n {
        for x in dataset.point(i) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

fn eof_as_format(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        format(format!("truncated {what}"))
    } else {
        Error::Io(e)
    }
}

/// Reads a dataset in the binary format written by [`write_binary`].
pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
    let mut header = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut header).map_err(|e| eof_as_format(e, "header"))?;
    if &header[..4] != MAGIC {
        return Err(format("bad magic bytes"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format(format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if n < 2 || d == 0 {
        return Err(format(format!("header declares n={n}, d={d}")));
    }
    let (n, d) = (
        usize::try_from(n).map_err(|_| format("n too large"))?,
        usize::try_from(d).map_err(|_| format("d too large"))?,
    );
    n.checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format("payload size overflows"))?;

    let mut ds = Dataset::zeroed(n, d)?;
    let mut buf = vec![0u8; d * 4];
    for i in 0..n {
        r.read_exact(&mut buf).map_err(|e| eof_as_format(e, "payload"))?;
        let row = ds.row_mut(i);
        for (x, b) in row.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(format("trailing bytes after payload"));
    }
    Ok(ds)
}

pub fn save_binary(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    write_binary(dataset, w)?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    if len >= HEADER_LEN {
        // Reject a header whose payload cannot fit before allocating for it.
        let mut header = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut header)?;
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let d = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let need = n.checked_mul(d).and_then(|v| v.checked_mul(4));
        if &header[..4] == MAGIC && need.is_some_and(|p| p > len - HEADER_LEN) {
            return Err(format("truncated payload"));
        }
        return read_binary(header.as_slice().chain(r));
    }
    read_binary(r)
}
