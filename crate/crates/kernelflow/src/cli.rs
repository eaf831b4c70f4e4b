//! Command-line entry points behind the `kflow` binary: train, eval, sample,
//! hist2d, gradcheck, paramcount, hpsearch. Run configs are TOML documents;
//! flags override file values and the fully-resolved config is echoed into
//! every output.

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::{gen_line, gen_moons, gen_pinwheel, load_csv, toy_dataset, Dataset};
use crate::diag;
use crate::error::{Error, Result};
use crate::flow::{CouplingKind, FlowModel};
use crate::train::{self, TrainConfig};

pub const CURVE_FORMAT: &str = "kernelflow-curve-v1";
pub const SAMPLES_FORMAT: &str = "kernelflow-samples-v1";
pub const HIST2D_FORMAT: &str = "kernelflow-hist2d-v1";
pub const METRICS_FORMAT: &str = "kernelflow-metrics-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// moons | pinwheel | line | csv
    pub kind: String,
    pub path: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise: f64,
    pub arms: usize,
    pub data_seed: u64,
    pub split: [f64; 3],
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: "moons".into(),
            path: None,
            n_train: 20_000,
            n_val: 2_000,
            n_test: 5_000,
            noise: 0.1,
            arms: 5,
            data_seed: 0,
            split: [0.8, 0.1, 0.1],
            subsample: None,
            subsample_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        let ds = match self.kind.as_str() {
            "moons" => toy_dataset(
                "moons",
                |n, s| gen_moons(n, self.noise, s),
                self.n_train,
                self.n_val,
                self.n_test,
                self.data_seed,
            )?,
            "pinwheel" => toy_dataset(
                "pinwheel",
                |n, s| gen_pinwheel(n, self.arms, s),
                self.n_train,
                self.n_val,
                self.n_test,
                self.data_seed,
            )?,
            "line" => toy_dataset(
                "line",
                |n, s| gen_line(n, self.noise, s),
                self.n_train,
                self.n_val,
                self.n_test,
                self.data_seed,
            )?,
            "csv" => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::Config("dataset.kind = \"csv\" requires dataset.path".into())
                })?;
                load_csv(
                    path,
                    (self.split[0], self.split[1], self.split[2]),
                    self.data_seed,
                )?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset kind {other:?} (expected moons, pinwheel, line, or csv)"
                )))
            }
        };
        match self.subsample {
            Some(count) => ds.subsample_train(count, self.subsample_seed),
            None => Ok(ds),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|_| {
            Error::Config(format!("cannot read config file {}", path.display()))
        })?;
        toml::from_str(&content).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "kflow", about = "Kernelised normalising flows for tabular density estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub aux_points: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// kernel | mlp
    #[arg(long)]
    pub coupling: Option<String>,
    /// hidden width of the MLP baseline coupling
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub shared_aux: Option<bool>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub subsample: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.gamma {
            t.gamma = v;
        }
        if let Some(v) = self.iterations {
            t.iterations = v;
        }
        if let Some(v) = self.blocks {
            t.blocks = v;
        }
        if let Some(v) = self.aux_points {
            t.aux_points = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(kind) = &self.coupling {
            t.coupling = match kind.as_str() {
                "kernel" => CouplingKind::Kernel,
                "mlp" => CouplingKind::Mlp {
                    hidden: self.hidden.unwrap_or(64),
                },
                other => return Err(Error::Config(format!("unknown coupling {other:?}"))),
            };
        } else if let Some(h) = self.hidden {
            if let CouplingKind::Mlp { hidden } = &mut t.coupling {
                *hidden = h;
            }
        }
        if let Some(v) = self.shared_aux {
            t.shared_aux = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.subsample {
            cfg.dataset.subsample = Some(v);
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, learning curve, and metrics
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Mean test NLL of a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw samples from a checkpoint into a CSV (data space)
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2-D histogram grid of model samples or of the raw dataset
    Hist2d {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// histogram range as lo,hi applied to both dimensions
        #[arg(long, default_value = "-4,4", value_parser = parse_range, allow_hyphen_values = true)]
        range: (f64, f64),
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against central finite differences
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parameter-count breakdown for the configured model and its counterpart
    Paramcount {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Coarse-to-fine gamma search
    Hpsearch {
        #[arg(long)]
        config: PathBuf,
        /// comma-separated coarse grid of gamma values
        #[arg(long, default_value = "0.125,0.25,0.5,1,2,4,8", value_parser = parse_grid)]
        grid: std::vec::Vec<f64>,
        #[arg(long, default_value_t = 5)]
        refine: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected lo,hi".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| "bad lo")?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| "bad hi")?;
    if !(hi > lo) {
        return Err("range hi must exceed lo".into());
    }
    Ok((lo, hi))
}

fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::DimensionMismatch(_, _) => 2,
        Error::Parse { .. } | Error::DegenerateColumn(_) | Error::Io(_) => 3,
        Error::Diverged { .. } | Error::NumericOverflow { .. } | Error::NonFiniteInput(_) => 4,
        _ => 5,
    }
}

fn config_echo_line(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).unwrap_or_else(|_| "{}".into())
}

fn write_curve(path: &Path, cfg: &RunConfig, curve: &[train::CurveRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {CURVE_FORMAT}")?;
    writeln!(f, "# config {}", config_echo_line(cfg))?;
    writeln!(f, "iteration,split,nll_nats,lr,elapsed_s")?;
    for r in curve {
        writeln!(f, "{},{},{:.12e},{:.12e},{:.3}", r.iteration, r.split, r.nll, r.lr, r.elapsed_s)?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.train.validate()?;
    let dataset = cfg.dataset.build()?;
    let mut model = cfg.train.build_model(dataset.dim)?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let outcome = train::train(&mut model, &dataset, &cfg.train)?;

    let ckpt_path = cfg.output.dir.join("checkpoint.json");
    Checkpoint::new(&cfg.train, &model, &dataset.standardization, &dataset.name)
        .save(&ckpt_path)?;
    write_curve(&cfg.output.dir.join("curve.csv"), cfg, &outcome.curve)?;

    let test_nll = train::objective(&model, dataset.test.view())?;
    let metrics = serde_json::json!({
        "format": METRICS_FORMAT,
        "dataset": dataset.name,
        "init_nll_nats": outcome.init_nll,
        "final_train_nll_nats": outcome.final_train_nll,
        "best_val_nll_nats": outcome.best_val_nll,
        "test_nll_nats": test_nll,
        "param_count": model.param_count(),
        "config": cfg,
    });
    std::fs::write(
        cfg.output.dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).unwrap(),
    )?;
    println!(
        "trained {} for {} iterations: test NLL {:.4} nats (checkpoint {})",
        dataset.name,
        cfg.train.iterations,
        test_nll,
        ckpt_path.display()
    );
    Ok(())
}

/// Standardises the config's raw test split with the checkpoint's stored
/// statistics, then evaluates mean NLL.
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig) -> Result<f64> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = cfg.dataset.build()?;
    let raw_test = dataset.standardization.invert(&dataset.test);
    let test = ckpt.standardization.apply(&raw_test);
    let nll = train::objective(&ckpt.model, test.view())?;
    println!(
        "kernelflow-eval-v1 dataset={} split=test n={} mean_nll_nats={:.10}",
        dataset.name,
        test.nrows(),
        nll
    );
    Ok(nll)
}

fn data_space_samples(ckpt: &Checkpoint, count: usize, seed: u64) -> Result<Array2<f64>> {
    let z = ckpt.model.sample(seed, count)?;
    Ok(ckpt.standardization.invert(&z))
}

pub fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let samples = data_space_samples(&ckpt, count, seed)?;
    let mut f = std::fs::File::create(out)?;
    writeln!(f, "# {SAMPLES_FORMAT}")?;
    let header: Vec<String> = (0..ckpt.model.dim()).map(|j| format!("x{j}")).collect();
    writeln!(f, "{}", header.join(","))?;
    for row in samples.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Bins points into a bins x bins grid over [lo, hi)^2; row index follows the
/// first dimension. Returns (grid, in_range_count).
pub fn hist2d_counts(points: &Array2<f64>, bins: usize, lo: f64, hi: f64) -> (Vec<Vec<u64>>, u64) {
    let mut grid = vec![vec![0u64; bins]; bins];
    let step = (hi - lo) / bins as f64;
    let mut kept = 0;
    for row in points.rows() {
        let (x, y) = (row[0], row[1]);
        if x < lo || x >= hi || y < lo || y >= hi {
            continue;
        }
        let i = ((x - lo) / step) as usize;
        let j = ((y - lo) / step) as usize;
        grid[i.min(bins - 1)][j.min(bins - 1)] += 1;
        kept += 1;
    }
    (grid, kept)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_hist2d(
    checkpoint: Option<&Path>,
    cfg: Option<&RunConfig>,
    bins: usize,
    range: (f64, f64),
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if bins == 0 {
        return Err(Error::Argument("bins must be >= 1".into()));
    }
    let points = match (checkpoint, cfg) {
        (Some(ckpt_path), _) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            if ckpt.model.dim() != 2 {
                return Err(Error::Argument(format!(
                    "hist2d requires a 2-D model, got D={}",
                    ckpt.model.dim()
                )));
            }
            data_space_samples(&ckpt, count, seed)?
        }
        (None, Some(cfg)) => {
            let ds = cfg.dataset.build()?;
            if ds.dim != 2 {
                return Err(Error::Argument(format!(
                    "hist2d requires 2-D data, got D={}",
                    ds.dim
                )));
            }
            ds.standardization.invert(&ds.train)
        }
        (None, None) => {
            return Err(Error::Argument(
                "hist2d needs either --checkpoint or --config".into(),
            ))
        }
    };
    let (grid, kept) = hist2d_counts(&points, bins, range.0, range.1);
    let mut f = std::fs::File::create(out)?;
    writeln!(f, "# {HIST2D_FORMAT}")?;
    writeln!(
        f,
        "# bins={} range={},{} total_points={} in_range={}",
        bins,
        range.0,
        range.1,
        points.nrows(),
        kept
    )?;
    for row in &grid {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Builds the configured model, initialises it from a small batch of the
/// configured dataset, and compares the analytic gradient of the objective
/// against central finite differences on a 16-row batch.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<f64> {
    let dataset = cfg.dataset.build()?;
    let mut model = cfg.train.build_model(dataset.dim)?;
    let rows = dataset.train.nrows().min(64).max(2);
    let init = dataset.train.slice(ndarray::s![..rows, ..]).to_owned();
    train::data_dependent_init(&mut model, init.view(), cfg.train.seed)?;
    // move off the identity point so every parameter participates
    let mut params = model.param_vector();
    let mut rng_state = 0x9e3779b97f4a7c15u64.wrapping_mul(cfg.train.seed | 1);
    for p in params.iter_mut() {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *p += 0.05 * (((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5);
    }
    model.set_param_vector(&params);

    let batch_rows = dataset.train.nrows().min(16);
    let batch = dataset.train.slice(ndarray::s![..batch_rows, ..]).to_owned();
    let analytic = train::gradient(&model, batch.view())?;
    let mut probe = model.clone();
    let fd = diag::finite_diff_grad(
        |p| {
            probe.set_param_vector(p);
            train::objective(&probe, batch.view()).unwrap()
        },
        &params,
        1e-6,
    );
    let aux_range = model.aux_param_range();
    let fd: Vec<f64> = fd
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !model.aux_learnable && aux_range.contains(&i) {
                0.0
            } else {
                v
            }
        })
        .collect();
    let err = diag::max_rel_error(&analytic, &fd, 1e-8);
    println!(
        "kernelflow-gradcheck-v1 params={} max_rel_err={:.3e} status={}",
        params.len(),
        err,
        if err < 1e-4 { "ok" } else { "FAIL" }
    );
    if err >= 1e-4 {
        return Err(Error::NonFiniteInput(format!(
            "gradient check failed: max rel err {err:.3e}"
        )));
    }
    Ok(err)
}

pub fn cmd_paramcount(cfg: &RunConfig) -> Result<()> {
    let dim = if cfg.dataset.kind == "csv" {
        cfg.dataset.build()?.dim
    } else {
        2
    };
    let print = |label: &str, pc: crate::flow::ParamCount| {
        println!(
            "kernelflow-paramcount-v1 model={label} coupling_weights={} aux_points={} actnorm={} total={}",
            pc.coupling_weights, pc.aux_points, pc.actnorm, pc.total
        );
        assert_eq!(pc.total, pc.coupling_weights + pc.aux_points + pc.actnorm);
    };
    let model = cfg.train.build_model(dim)?;
    let kind = match cfg.train.coupling {
        CouplingKind::Kernel => "kernel",
        CouplingKind::Mlp { .. } => "mlp",
    };
    print(kind, model.param_count());
    // counterpart with the other coupling kind, same block structure
    let counterpart = TrainConfig {
        coupling: match cfg.train.coupling {
            CouplingKind::Kernel => CouplingKind::Mlp { hidden: 128 },
            CouplingKind::Mlp { .. } => CouplingKind::Kernel,
        },
        ..cfg.train.clone()
    };
    let other: FlowModel = counterpart.build_model(dim)?;
    let other_kind = match counterpart.coupling {
        CouplingKind::Kernel => "kernel",
        CouplingKind::Mlp { .. } => "mlp",
    };
    print(other_kind, other.param_count());
    Ok(())
}

pub fn cmd_hpsearch(cfg: &RunConfig, grid: &[f64], refine: usize) -> Result<()> {
    let dataset = cfg.dataset.build()?;
    let result = train::gamma_search(&dataset, &cfg.train, grid, refine)?;
    for t in &result.trials {
        match t.val_nll {
            Some(v) => println!(
                "kernelflow-hpsearch-v1 phase={} gamma={:.6e} val_nll_nats={:.6}",
                t.phase, t.gamma, v
            ),
            None => println!(
                "kernelflow-hpsearch-v1 phase={} gamma={:.6e} val_nll_nats=diverged",
                t.phase, t.gamma
            ),
        }
    }
    println!("kernelflow-hpsearch-v1 best_gamma={:.6e}", result.best_gamma);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            cmd_train(&cfg)
        }
        Command::Eval { checkpoint, config } => {
            let cfg = RunConfig::load(&config)?;
            cmd_eval(&checkpoint, &cfg).map(|_| ())
        }
        Command::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => cmd_sample(&checkpoint, count, seed, &out),
        Command::Hist2d {
            checkpoint,
            config,
            bins,
            range,
            count,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(p) => Some(RunConfig::load(&p)?),
                None => None,
            };
            cmd_hist2d(
                checkpoint.as_deref(),
                cfg.as_ref(),
                bins,
                range,
                count,
                seed,
                &out,
            )
        }
        Command::Gradcheck { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            cmd_gradcheck(&cfg).map(|_| ())
        }
        Command::Paramcount { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            cmd_paramcount(&cfg)
        }
        Command::Hpsearch {
            config,
            grid,
            refine,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg)?;
            cmd_hpsearch(&cfg, &grid, refine)
        }
    }
}
