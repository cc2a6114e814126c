//! Command-line front end. [`run`] parses arguments, executes one command
//! and returns the process exit status: 0 on success, 1 on usage or input
//! errors, 2 on a numerical abort.
//!
//! Artifacts written by `train` into `--out`:
//!
//! | file              | content                                              |
//! |-------------------|------------------------------------------------------|
//! | `checkpoint.bin`  | full training state, see [`crate::checkpoint`]       |
//! | `history.txt`     | one epoch record per line                            |
//! | `manifest.txt`    | config snapshot, dataset sha256, version, timestamps |
//! | `predictions.txt` | one cluster index per sample                         |
//! | `report.txt`      | clustering report (only for labelled data)           |

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::baselines::{
    classical_spectral, kmeans_lloyd, Bandwidth, SpectralConfig, DEFAULT_K_NEIGHBOR,
};
use crate::checkpoint;
use crate::config::{load_config, to_text};
use crate::data::{gen_dataset, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::metrics::{evaluate, ClusteringReport};
use crate::trainer::{predict, OrthSetting, TrainConfig, Trainer};
use crate::transport::{exact_ot_oracle, sinkhorn_algorithm1, sinkhorn_marginal, TransportPlan};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const ETA_GRID: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];
pub const ITERS_GRID: [usize; 4] = [1, 3, 5, 10];
pub const LAMBDA_GRID: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const PENALTY_GRID: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Parser, Debug)]
#[command(
    name = "bootsc",
    version,
    about = "Deep spectral clustering with optimal-transport targets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic labelled dataset as CSV plus a `.meta` sidecar.
    GenDataset(GenArgs),
    /// Train a model and write checkpoint, history, manifest and report.
    Train(TrainArgs),
    /// Predict with a checkpoint and write the report.
    Eval(EvalArgs),
    /// Run k-means or classical spectral clustering.
    Baseline(BaselineArgs),
    /// Solve a transport problem read from a CSV matrix and print the plan.
    OtDebug(OtArgs),
    /// Retrain over one hyperparameter grid, one report line per point.
    Ablate(AblateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Moons,
    Rings,
    Blobs,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of blobs.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Blob dimension.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Minimum distance between blob centers.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    /// none | qr | procrustes | penalty(RHO)
    #[arg(long)]
    pub orth_mode: Option<OrthSetting>,
    #[arg(long)]
    pub keep_diagonal: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub num_clusters: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.sinkhorn_iters {
            cfg.sinkhorn_iters = v;
        }
        if let Some(v) = self.orth_mode {
            cfg.orth = v;
        }
        if self.keep_diagonal {
            cfg.keep_diagonal = true;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.num_clusters {
            cfg.num_clusters = v;
        }
        cfg.validate()
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint instead of initializing.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum BaselineMethod {
    Kmeans,
    Spectral,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of clusters; defaults to the number of distinct labels.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Fixed Gaussian bandwidth; self-tuning when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Neighbor rank for the self-tuning bandwidth.
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBOR)]
    pub neighbors: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum OtMode {
    /// Fixed-iteration row/column normalization of `exp(S/eta)`; the input
    /// is a score matrix.
    Algorithm1,
    /// Log-domain Sinkhorn to tolerance on a cost matrix.
    Marginal,
    /// Exact optimum on a cost matrix (≤ 256 cells).
    Exact,
}

#[derive(Args, Debug)]
pub struct OtArgs {
    /// CSV of numbers, one matrix row per line; a non-numeric first line is
    /// skipped as a header.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long, value_enum, default_value_t = OtMode::Marginal)]
    pub mode: OtMode,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 5)]
    pub sinkhorn_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum Sweep {
    Eta,
    Iters,
    Lambda,
    Orth,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NanLoss { .. } | Error::NonFinite(_) | Error::Underflow { .. } => 2,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenDataset(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::OtDebug(a) => ot_debug(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// Report record: the summary line followed by the contingency table
/// (`;`-separated rows) and the predicted→true matching.
pub fn report_text(r: &ClusteringReport) -> String {
    let table: Vec<String> = r
        .contingency
        .iter()
        .map(|row| {
            row.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let matching: Vec<String> = r.matching.iter().map(|(p, t)| format!("{p}:{t}")).collect();
    format!(
        "{}\ncontingency={}\nmatching={}\n",
        r.to_line(),
        table.join(";"),
        matching.join(",")
    )
}

fn labels_text(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

fn load_train_config(path: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn gen(a: GenArgs) -> Result<()> {
    if a.n < 10 {
        return Err(Error::InvalidArgument(format!(
            "n must be at least 10, got {}",
            a.n
        )));
    }
    let kind = match a.kind {
        Kind::Moons => DatasetKind::Moons,
        Kind::Rings => DatasetKind::Rings,
        Kind::Blobs => DatasetKind::Blobs {
            k: a.k,
            dim: a.dim,
            separation: a.separation,
        },
    };
    let ds = gen_dataset(kind, a.n, a.noise, a.seed)?;
    let mut extra = vec![("noise", format!("{:?}", a.noise))];
    if let DatasetKind::Blobs { k, dim, separation } = kind {
        extra.extend([
            ("k", k.to_string()),
            ("dim", dim.to_string()),
            ("separation", format!("{separation:?}")),
        ]);
    }
    ds.save(&a.out, &extra)
}

/// Trains on `ds` and writes every artifact; returns the report when the
/// dataset is labelled.
pub fn train_to_dir(
    cfg: &TrainConfig,
    ds: &Dataset,
    dataset_path: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Option<ClusteringReport>> {
    ensure_dir(out)?;
    let started = unix_now();
    let x = &ds.features;
    let mut trainer = match resume {
        Some(p) => {
            let mut t = checkpoint::load(p)?;
            // the stored config keeps its hyperparameters; only the target moves
            t.config.epochs = cfg.epochs;
            if t.model.input_dim() != x.cols() {
                return Err(Error::Dimension(format!(
                    "checkpoint expects {} features, dataset has {}",
                    t.model.input_dim(),
                    x.cols()
                )));
            }
            t
        }
        None => Trainer::new(cfg, x)?,
    };
    trainer.run_until(x, cfg.epochs)?;
    let (labels, _) = predict(&trainer.model, x)?;
    let report = ds
        .labels
        .as_ref()
        .map(|y| evaluate(y, &labels))
        .transpose()?;

    let paths = [
        "checkpoint.bin",
        "history.txt",
        "predictions.txt",
        "report.txt",
        "manifest.txt",
    ]
    .map(|f| out.join(f));
    checkpoint::save(&trainer, &paths[0])?;
    write(&paths[1], &trainer.history.to_text())?;
    write(&paths[2], &labels_text(&labels))?;
    if let Some(r) = &report {
        write(&paths[3], &report_text(r))?;
    }

    let mut manifest = String::new();
    writeln!(manifest, "version={VERSION}").unwrap();
    writeln!(manifest, "dataset={}", dataset_path.display()).unwrap();
    writeln!(manifest, "dataset_sha256={}", sha256_file(dataset_path)?).unwrap();
    writeln!(manifest, "started_unix={started}").unwrap();
    writeln!(manifest, "finished_unix={}", unix_now()).unwrap();
    if let Some(p) = resume {
        writeln!(manifest, "resumed_from={}", p.display()).unwrap();
    }
    let written = if report.is_some() {
        &paths[..4]
    } else {
        &paths[..3]
    };
    for p in written {
        writeln!(manifest, "output={}", p.display()).unwrap();
    }
    for line in to_text(&trainer.config).lines() {
        writeln!(manifest, "config.{}", line.replace(" = ", "=")).unwrap();
    }
    write(&paths[4], &manifest)?;
    Ok(report)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_train_config(a.config.as_deref(), &a.overrides)?;
    let ds = Dataset::load(&a.dataset)?;
    if let Some(r) = train_to_dir(&cfg, &ds, &a.dataset, &a.out, a.checkpoint.as_deref())? {
        print!("{}", report_text(&r));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let trainer = checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.dataset)?;
    ensure_dir(&a.out)?;
    let (labels, _) = predict(&trainer.model, &ds.features)?;
    write(&a.out.join("predictions.txt"), &labels_text(&labels))?;
    if let Some(y) = &ds.labels {
        let text = report_text(&evaluate(y, &labels)?);
        write(&a.out.join("report.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let k = match (a.k, &ds.labels) {
        (Some(k), _) => k,
        (None, Some(y)) => y
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "--k is required for unlabelled data".into(),
            ))
        }
    };
    let labels = match a.method {
        BaselineMethod::Kmeans => kmeans_lloyd(&ds.features, k, a.restarts, a.seed)?.labels,
        BaselineMethod::Spectral => {
            let bandwidth = a
                .sigma
                .map_or(Bandwidth::SelfTuning(a.neighbors), Bandwidth::Fixed);
            classical_spectral(
                &ds.features,
                &SpectralConfig {
                    bandwidth,
                    num_clusters: k,
                },
                a.seed,
            )?
            .labels
        }
    };
    ensure_dir(&a.out)?;
    write(&a.out.join("predictions.txt"), &labels_text(&labels))?;
    if let Some(y) = &ds.labels {
        let text = report_text(&evaluate(y, &labels)?);
        write(&a.out.join("report.txt"), &text)?;
        print!("{text}");
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidArgument(format!(
                    "line {}: not a numeric row",
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("matrix file has no rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

/// Plan as CSV preceded by `key=value` diagnostics.
pub fn plan_text(p: &TransportPlan, objective: f64) -> String {
    let mut out = format!(
        "row_residual={:e}\ncol_residual={:e}\niterations={}\nobjective={:e}\n",
        p.row_marginal_residual, p.col_marginal_residual, p.iterations_used, objective
    );
    for row in p.plan.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

fn ot_debug(a: OtArgs) -> Result<()> {
    let m = read_matrix(&a.cost)?;
    let (rows, cols) = m.shape();
    let row_marg = vec![1.0; rows];
    let col_marg = vec![rows as f64 / cols as f64; cols];
    let (plan, objective) = match a.mode {
        OtMode::Algorithm1 => {
            let p = sinkhorn_algorithm1(&m, a.eta, a.sinkhorn_iters)?;
            let score = p.cost(&m);
            (p, score)
        }
        OtMode::Marginal => {
            let (p, _) = sinkhorn_marginal(&m, &row_marg, &col_marg, a.eta, a.tol, a.max_iter)?;
            let c = p.cost(&m);
            (p, c)
        }
        OtMode::Exact => {
            let p = exact_ot_oracle(&m, &row_marg, &col_marg)?;
            let c = p.cost(&m);
            (p, c)
        }
    };
    print!("{}", plan_text(&plan, objective));
    Ok(())
}

/// The sweep points of one grid, each as a label and a config edit.
pub fn sweep_points(sweep: Sweep, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match sweep {
        Sweep::Eta => ETA_GRID
            .iter()
            .map(|&v| (format!("eta={v}"), with(&|c| c.eta = v)))
            .collect(),
        Sweep::Iters => ITERS_GRID
            .iter()
            .map(|&v| {
                (
                    format!("sinkhorn_iters={v}"),
                    with(&|c| c.sinkhorn_iters = v),
                )
            })
            .collect(),
        Sweep::Lambda => LAMBDA_GRID
            .iter()
            .map(|&v| (format!("lambda={v}"), with(&|c| c.lambda = v)))
            .collect(),
        Sweep::Orth => {
            use crate::spectral::OrthMode;
            let mut modes = vec![
                OrthSetting::Mode(OrthMode::None),
                OrthSetting::Mode(OrthMode::Qr),
                OrthSetting::Mode(OrthMode::Procrustes),
            ];
            modes.extend(PENALTY_GRID.iter().map(|&r| OrthSetting::Penalty(r)));
            modes
                .into_iter()
                .map(|m| (format!("orth_mode={m}"), with(&|c| c.orth = m)))
                .collect()
        }
    }
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = load_train_config(a.config.as_deref(), &a.overrides)?;
    let ds = Dataset::load(&a.dataset)?;
    let y = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("ablation needs a labelled dataset".into()))?;
    ensure_dir(&a.out)?;
    let mut out = String::new();
    for (label, cfg) in sweep_points(a.sweep, &base) {
        cfg.validate()?;
        let mut trainer = Trainer::new(&cfg, &ds.features)?;
        trainer.run_until(&ds.features, cfg.epochs)?;
        let (pred, _) = predict(&trainer.model, &ds.features)?;
        let r = evaluate(y, &pred)?;
        let last = trainer.history.records.last();
        let line = format!(
            "{label} {} inconsistency={:e} intensity={:e}",
            r.to_line(),
            last.map_or(f64::NAN, |l| l.inconsistency),
            last.map_or(f64::NAN, |l| l.intensity)
        );
        println!("{line}");
        writeln!(out, "{line}").unwrap();
    }
    let name = format!("ablate_{}.txt", format!("{:?}", a.sweep).to_lowercase());
    write(&a.out.join(name), &out)
}
