use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use relu_landscape::fixtures::{two_sample_dataset, two_sample_pattern, TwoSampleCell};
use relu_landscape::minima::{analyze_cell, CellReport};
use relu_landscape::model::{loss_grid, GridAxis};
use relu_landscape::nondiff::sweep_nondiff;
use relu_landscape::probability::{sweep, SweepSpec, Tracked};
use relu_landscape::{
    pattern_from_weights, sweep_saddles, ActivationPattern, Dataset, Error, Execution, GaussianClassModel,
    HStarSource, NetworkParams, ParallelWeightConfig, Tolerances,
};

/// Loss-landscape analysis for one-hidden-layer ReLU networks.
#[derive(Parser, Debug)]
#[command(name = "relu-landscape", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Relative singular-value cutoff for pseudoinverses.
    #[arg(long, global = true, default_value_t = Tolerances::default().rank_tol)]
    rank_tol: f64,

    /// Margin that models strict inequalities in the feasibility LP.
    #[arg(long, global = true, default_value_t = Tolerances::default().strict_eps)]
    strict_eps: f64,

    /// Cosine slack for the opposed one-sided gradient test.
    #[arg(long, global = true, default_value_t = Tolerances::default().parallel_cos_tol)]
    parallel_cos_tol: f64,

    /// Run every sweep on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cell minimum and genuineness of every sign branch.
    Minima(CellArgs),
    /// Saddle candidates for every proper subset of stationary neurons.
    Saddles {
        #[command(flatten)]
        cell: CellArgs,
        /// Examine only the first N subsets (required above K = 12).
        #[arg(long)]
        max_subsets: Option<usize>,
    },
    /// Minima pinned to one sample hyperplane, over every (neuron, sample) pair.
    Nondiff(CellArgs),
    /// Trapping-probability sweep as CSV.
    Prob {
        /// Sweep config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo trials per point; overrides the config.
        #[arg(long)]
        trials: Option<u64>,
        /// Where the Monte Carlo takes h* from.
        #[arg(long, value_enum)]
        mc_hstar: Option<HStar>,
    },
    /// Loss over a 2-D slice of one neuron's weight, as CSV `w1,w2,loss`.
    Grid {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Grid spec (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Do not append the homogeneous 1 to dataset rows.
        #[arg(long)]
        no_bias: bool,
    },
    /// Every cell of the two-sample example, original and flipped labels.
    ReproduceAppendixB,
}

#[derive(Args, Debug)]
struct CellArgs {
    /// CSV with header; feature columns then a ±1 label column.
    #[arg(long)]
    dataset: PathBuf,
    /// Activation pattern JSON `{"I": [[0,1,..], ..]}` (N rows, K columns).
    #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
    pattern: Option<PathBuf>,
    /// Hidden weights JSON `{"w": [[..], ..]}` (K rows, d columns); the pattern is read off them.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Do not append the homogeneous 1 to dataset rows.
    #[arg(long)]
    no_bias: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum HStar {
    Population,
    Empirical,
}

/// Exit 1: the analysis ran but found nothing feasible. Exit 2: bad input.
enum Failure {
    Input(String),
    Analysis(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) | Error::NotASaddle { .. } => Failure::Analysis(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Deserialize)]
struct WeightsJson {
    w: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbConfig {
    normals: Vec<i8>,
    offsets: Vec<f64>,
    /// Index of the weight that moves.
    #[serde(default)]
    swept: usize,
    sweep: GridAxis,
    #[serde(default)]
    model: GaussianClassModel,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_trials")]
    trials: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    tracked: Tracked,
    #[serde(default)]
    hstar: HStarSource,
    #[serde(default = "default_replicates")]
    loss_replicates: usize,
}

fn default_n() -> usize {
    100
}
fn default_trials() -> u64 {
    10_000
}
fn default_replicates() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    /// Output weights `z`; defaults to all ones.
    #[serde(default)]
    z: Option<Vec<f64>>,
    /// Hidden weights, K rows of length d; defaults to one zero row.
    #[serde(default)]
    w: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    neuron: usize,
    #[serde(default = "default_coords")]
    coords: (usize, usize),
    axes: (GridAxis, GridAxis),
    /// Use the two-sample example (`false`) or its flipped-label variant
    /// when no dataset is given.
    #[serde(default)]
    flipped: bool,
}

fn default_coords() -> (usize, usize) {
    (0, 1)
}

#[derive(Serialize)]
struct TwoSampleReport {
    original: Vec<NamedCell>,
    flipped: Vec<NamedCell>,
}

#[derive(Serialize)]
struct NamedCell {
    cell: &'static str,
    #[serde(flatten)]
    report: CellReport,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path, no_bias: bool) -> CliResult<Dataset> {
    Dataset::from_csv_path(path, !no_bias).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Failure::Input(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn load_cell(args: &CellArgs) -> CliResult<(Dataset, ActivationPattern)> {
    let data = load_dataset(&args.dataset, args.no_bias)?;
    let pattern = match (&args.pattern, &args.weights) {
        (Some(p), _) => ActivationPattern::from_json(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        (None, Some(w)) => {
            let wj: WeightsJson = parse_json(w)?;
            pattern_from_weights(&matrix(&wj.w, "w")?, &data)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if pattern.n() != data.n() {
        return Err(Failure::Input(format!("pattern has {} rows, dataset has {} samples", pattern.n(), data.n())));
    }
    Ok((data, pattern))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Analysis(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Analysis(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Output text and whether the analysis found what it looked for.
fn run(cli: &Cli) -> CliResult<(String, bool)> {
    let tol = Tolerances {
        rank_tol: cli.rank_tol,
        strict_eps: cli.strict_eps,
        parallel_cos_tol: cli.parallel_cos_tol,
        ..Tolerances::default()
    };
    for (name, v) in [("rank-tol", tol.rank_tol), ("strict-eps", tol.strict_eps), ("parallel-cos-tol", tol.parallel_cos_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Input(format!("--{name} must be positive")));
        }
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::available() };

    match &cli.cmd {
        Command::Minima(args) => {
            let (data, pattern) = load_cell(args)?;
            let rep = analyze_cell(&pattern, &data, &tol, exec)?;
            Ok((json(&rep), rep.any_genuine))
        }
        Command::Saddles { cell, max_subsets } => {
            let (data, pattern) = load_cell(cell)?;
            let rep = sweep_saddles(&pattern, &data, &tol, *max_subsets, exec)?;
            Ok((json(&rep), true))
        }
        Command::Nondiff(args) => {
            let (data, pattern) = load_cell(args)?;
            let (rep, _) = sweep_nondiff(&pattern, &data, &tol, exec)?;
            Ok((json(&rep), true))
        }
        Command::Prob { config, seed, trials, mc_hstar } => {
            let cfg: ProbConfig = parse_json(config)?;
            let spec = SweepSpec {
                base: ParallelWeightConfig::from_parts(&cfg.normals, &cfg.offsets)?,
                swept: cfg.swept,
                offsets: cfg.sweep.values()?,
                model: cfg.model,
                n: cfg.n,
                trials: trials.unwrap_or(cfg.trials),
                seed: seed.unwrap_or(cfg.seed),
                tracked: cfg.tracked,
                hstar: match mc_hstar {
                    Some(HStar::Population) => HStarSource::Population,
                    Some(HStar::Empirical) => HStarSource::Empirical,
                    None => cfg.hstar,
                },
                loss_replicates: cfg.loss_replicates,
                rank_tol: tol.rank_tol,
            };
            spec.model.validate()?;
            if spec.n == 0 || spec.trials == 0 {
                return Err(Failure::Input("n and trials must be positive".into()));
            }
            let rows = sweep(&spec, exec)?;
            Ok((csv_string(rows)?, true))
        }
        Command::Grid { dataset, config, no_bias } => {
            let cfg: GridConfig = parse_json(config)?;
            let data = match dataset {
                Some(p) => load_dataset(p, *no_bias)?,
                None => two_sample_dataset(cfg.flipped),
            };
            let w = match &cfg.w {
                Some(rows) => matrix(rows, "w")?,
                None => DMatrix::zeros(1, data.d()),
            };
            let z = match &cfg.z {
                Some(z) => DVector::from_column_slice(z),
                None => DVector::from_element(w.nrows(), 1.0),
            };
            let base = NetworkParams::new(z, w)?;
            let rows = loss_grid(&base, cfg.neuron, cfg.coords, cfg.axes, &data, exec)?;
            #[derive(Serialize)]
            struct Row {
                w1: f64,
                w2: f64,
                loss: f64,
            }
            Ok((csv_string(rows.into_iter().map(|(w1, w2, loss)| Row { w1, w2, loss }))?, true))
        }
        Command::ReproduceAppendixB => {
            let cells = |flipped: bool| -> CliResult<Vec<NamedCell>> {
                let data = two_sample_dataset(flipped);
                TwoSampleCell::ALL
                    .iter()
                    .map(|&c| {
                        Ok(NamedCell {
                            cell: c.name(),
                            report: analyze_cell(&two_sample_pattern(c), &data, &tol, exec)?,
                        })
                    })
                    .collect()
            };
            let rep = TwoSampleReport {
                original: cells(false)?,
                flipped: cells(true)?,
            };
            Ok((json(&rep), true))
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("RELU_LANDSCAPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Input(format!("RELU_LANDSCAPE_THREADS must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(&cli)).and_then(|(text, found)| {
        match &cli.out {
            Some(p) => fs::write(p, &text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
            None => match std::io::stdout().write_all(text.as_bytes()) {
                // reader went away (`| head`): nothing left to report
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r.map_err(|e| Failure::Input(e.to_string()))?,
            },
        }
        Ok(found)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("no genuine minimum in this cell");
            ExitCode::from(1)
        }
        Err(Failure::Analysis(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
