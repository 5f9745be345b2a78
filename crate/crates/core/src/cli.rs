//! The `knng` command line front end.
//!
//! Every subcommand is deterministic given its flags (timings aside), writes
//! CSV or the binary dataset format, and reports failures as a single line on
//! stderr with a nonzero exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{self, ClusterLabels, Dataset};
use crate::descent::{self, Kernel, RunOutput, RunParams};
use crate::graph::read_neighbor_csv;
use crate::oracle;
use crate::reorder::{self, greedy_cluster, window_cluster_fraction};
use crate::selection::{Strategy, DEFAULT_MAX_CANDIDATES};

#[derive(Debug, Parser)]
#[command(name = "knng", version, about = "Approximate K-NN graphs with NN-Descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in the binary format.
    Generate(GenerateArgs),
    /// Build a K-NN graph and write it with per-iteration metrics.
    Build(BuildArgs),
    /// Measure a graph's recall against the exact graph.
    Recall(RecallArgs),
    /// Reorder a clustered dataset and report per-window cluster fractions.
    ReorderEval(ReorderEvalArgs),
    /// Run builds over a grid of sizes or dimensions and concatenate metrics.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    /// One Gaussian component per dimension, centered on its basis vector.
    Gaussian,
    /// A single Gaussian centered on the origin.
    GaussianSingle,
    /// Well separated clusters in shuffled order, with a labels file.
    Clustered,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: DatasetKind,
    /// Number of points.
    #[arg(long, default_value_t = 16_384)]
    pub n: usize,
    /// Dimensionality.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Cluster count, clustered kind only [default: 8].
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,
    /// Labels CSV for the clustered kind [default: <out>.labels.csv].
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct TuningArgs {
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Candidate selection strategy.
    #[arg(long, default_value_t = Strategy::Turbo)]
    pub strategy: Strategy,
    /// Distance kernel used in the local join: blocked or scalar.
    #[arg(long, default_value = "blocked")]
    pub kernel: Kernel,
    /// Cap on new and on old candidates per node.
    #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
    pub max_candidates: usize,
    /// Stop when an iteration changes fewer than delta·n·k edges.
    #[arg(long, default_value_t = 0.001)]
    pub delta: f64,
    #[arg(long, default_value_t = 30)]
    pub max_iterations: usize,
    /// Reorder the data in memory with the greedy clustering heuristic.
    #[arg(long)]
    pub reorder: bool,
    /// Iteration after which reordering runs [default: 1].
    #[arg(long, requires = "reorder")]
    pub reorder_after: Option<usize>,
    #[arg(long)]
    pub seed: u64,
}

impl TuningArgs {
    fn params(&self) -> RunParams {
        RunParams {
            k: self.k,
            max_candidates: self.max_candidates,
            termination_delta: self.delta,
            max_iterations: self.max_iterations,
            strategy: self.strategy,
            kernel: self.kernel,
            reorder: self.reorder,
            reorder_after_iteration: self.reorder_after.unwrap_or(1),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Input dataset in the binary format.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Graph CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV output [default: <out>.metrics.csv].
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecallArgs {
    /// Graph CSV to evaluate.
    #[arg(long)]
    pub graph: PathBuf,
    /// Dataset the graph was built from; required unless --reference is given.
    #[arg(long, required_unless_present = "reference")]
    pub dataset: Option<PathBuf>,
    /// Neighbors per node expected in the graph.
    #[arg(long)]
    pub k: usize,
    /// Compare against this graph CSV instead of the brute-force oracle.
    #[arg(long, conflicts_with = "dataset")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReorderEvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Labels CSV written by `generate --kind clustered`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = Strategy::Turbo)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
    pub max_candidates: usize,
    /// NN-Descent iterations before the graph is used for reordering.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Window length in positions.
    #[arg(long, default_value_t = 2000)]
    pub window: usize,
    #[arg(long)]
    pub seed: u64,
    /// Window fraction CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    N,
    D,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Which parameter the grid varies.
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Point count when sweeping d.
    #[arg(long, default_value_t = 16_384)]
    pub n: usize,
    /// Dimensionality when sweeping n.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Synthetic data kind generated for every grid point.
    #[arg(long, value_enum, default_value_t = DatasetKind::Gaussian)]
    pub kind: DatasetKind,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Concatenated metrics CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the subcommand, writing normal output to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, stdout),
        Command::Build(a) => cmd_build(&a, stdout),
        Command::Recall(a) => cmd_recall(&a, stdout),
        Command::ReorderEval(a) => cmd_reorder_eval(&a, stdout),
        Command::Sweep(a) => cmd_sweep(&a, stdout),
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match run(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(clap_err) = err.downcast_ref::<clap::Error>() {
                if !clap_err.use_stderr() {
                    let _ = write!(stdout, "{clap_err}");
                    return ExitCode::SUCCESS;
                }
                let text = clap_err.to_string();
                let line = text.lines().next().unwrap_or("invalid arguments");
                eprintln!("{line}");
                return ExitCode::from(2);
            }
            eprintln!("error: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    dataset::load_binary(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn generate(kind: DatasetKind, n: usize, d: usize, c: usize, seed: u64) -> crate::Result<(Dataset, Option<ClusterLabels>)> {
    Ok(match kind {
        DatasetKind::Gaussian => (dataset::gen_gaussian(n, d, false, seed)?, None),
        DatasetKind::GaussianSingle => (dataset::gen_gaussian(n, d, true, seed)?, None),
        DatasetKind::Clustered => {
            let (ds, labels) = dataset::gen_clustered(n, d, c, seed)?;
            (ds, Some(labels))
        }
    })
}

pub fn cmd_generate(a: &GenerateArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    if a.kind != DatasetKind::Clustered && (a.c.is_some() || a.labels_out.is_some()) {
        bail!("--c and --labels-out only apply to --kind clustered");
    }
    let (ds, labels) = generate(a.kind, a.n, a.d, a.c.unwrap_or(8), a.seed)?;
    dataset::save_binary(&ds, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(labels) = labels {
        let path = a.labels_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".labels.csv"));
        labels.save_csv(&path).with_context(|| format!("cannot write {}", path.display()))?;
    }
    writeln!(stdout, "n={} d={} wrote {}", ds.n(), ds.d(), a.out.display())?;
    Ok(())
}

fn summary(ds: &Dataset, out: &RunOutput) -> String {
    format!(
        "n={} d={} iters={} dist_evals={} total_s={:.3}",
        ds.n(),
        ds.d(),
        out.metrics.iteration_count(),
        out.metrics.total_dist_evals(),
        out.metrics.total_time().as_secs_f64()
    )
}

pub fn cmd_build(a: &BuildArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let params = a.tuning.params();
    params.validate()?;
    let ds = load(&a.dataset)?;
    let out = descent::run(&ds, &params)?;

    let mut w = create(&a.out)?;
    out.graph.write_csv(&mut w)?;
    w.flush()?;
    let metrics_path = a.metrics_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.csv"));
    let mut w = create(&metrics_path)?;
    out.metrics.write_csv(&mut w)?;
    w.flush()?;

    writeln!(stdout, "{}", summary(&ds, &out))?;
    Ok(())
}

fn read_graph(path: &Path) -> anyhow::Result<Vec<Vec<u32>>> {
    let file = File::open(path).with_context(|| format!("cannot open graph {}", path.display()))?;
    read_neighbor_csv(std::io::BufReader::new(file)).with_context(|| format!("cannot read graph {}", path.display()))
}

pub fn cmd_recall(a: &RecallArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let approx = read_graph(&a.graph)?;
    if approx[0].len() != a.k {
        bail!("graph has {} neighbors per node but --k is {}", approx[0].len(), a.k);
    }
    let value = match (&a.reference, &a.dataset) {
        (Some(reference), _) => oracle::list_overlap(&approx, &read_graph(reference)?)?,
        (None, Some(path)) => {
            let ds = load(path)?;
            if ds.n() != approx.len() {
                bail!("graph has {} nodes but dataset has {}", approx.len(), ds.n());
            }
            let exact = oracle::brute_force_knng(&ds, a.k)?;
            oracle::recall_of_lists(&approx, &exact)?
        }
        (None, None) => bail!("either --dataset or --reference is required"),
    };
    writeln!(stdout, "recall={value:.6}")?;
    Ok(())
}

pub fn cmd_reorder_eval(a: &ReorderEvalArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let ds = load(&a.dataset)?;
    let labels = ClusterLabels::load_csv(&a.labels)
        .with_context(|| format!("cannot read labels {}", a.labels.display()))?;
    if labels.len() != ds.n() {
        bail!("{} labels for {} points", labels.len(), ds.n());
    }
    if a.iterations == 0 {
        bail!("--iterations must be at least 1");
    }
    let params = RunParams {
        k: a.k,
        max_candidates: a.max_candidates,
        max_iterations: a.iterations,
        strategy: a.strategy,
        seed: a.seed,
        ..RunParams::default()
    };
    let out = descent::run(&ds, &params)?;
    let perm = greedy_cluster(&out.graph);
    let windows = window_cluster_fraction(&labels, &perm, a.window)?;

    let mut w = create(&a.out)?;
    reorder::write_window_csv(&mut w, &windows)?;
    w.flush()?;

    let quarter = ds.n() / 4;
    let peak = windows
        .iter()
        .filter(|w| w.start < quarter)
        .map(|w| w.max_fraction())
        .fold(0.0, f64::max);
    let last = windows.last().map_or(0.0, |w| w.max_fraction());
    writeln!(stdout, "windows={} first_quarter_peak={peak:.4} last_window_max={last:.4}", windows.len())?;
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let params = a.tuning.params();
    params.validate()?;
    if a.values.windows(2).any(|w| w[0] >= w[1]) {
        bail!("--values must be strictly increasing");
    }
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["n", "d", "iteration", "wall_time_s", "dist_evals", "changes"])?;
    let mut totals = Vec::with_capacity(a.values.len());
    for &value in &a.values {
        let (n, d) = match a.axis {
            SweepAxis::N => (value, a.d),
            SweepAxis::D => (a.n, value),
        };
        let (ds, _) = generate(a.kind, n, d, 8, a.tuning.seed)?;
        let out = descent::run(&ds, &params)?;
        for m in &out.metrics.iterations {
            w.serialize((n, d, m.iteration, m.wall_time.as_secs_f64(), m.dist_evals, m.changes))?;
        }
        let metrics = &out.metrics;
        w.serialize((n, d, "total", metrics.total_time().as_secs_f64(), metrics.total_dist_evals(), metrics.total_changes()))?;
        writeln!(stdout, "{}", summary(&ds, &out))?;
        totals.push(metrics.total_dist_evals());
    }
    w.flush()?;
    if a.axis == SweepAxis::N && a.values.len() >= 3 {
        let slope = oracle::scaling_exponent(&a.values, &totals)?;
        writeln!(stdout, "exponent={slope:.4}")?;
    }
    Ok(())
}
