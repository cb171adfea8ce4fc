//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::fold::{load_fold, save_fold, Split};
use crate::data::mnist_scale::{generate_fold, load_mnist_pool, SplitSizes};
use crate::data::SampleRecord;
use crate::equivariant::ScaleSpec;
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::train::{evaluate, train, EpochRecord, Metrics};
use crate::model::{ModelConfig, Network, Precision, TrainConfig, Variant};
use crate::tensor::Scalar;
use crate::verify::suites::{equivariance_suite, grad_suite, oracle_suite, synthetic_records};

pub const DATA_DIR_ENV: &str = "SCALEVEC_DATA_DIR";

/// Exit status when a check suite runs but does not pass.
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "scalevec", version, about = "Scale-equivariant CNNs with vector-field features")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Data root holding `mnist/` and `folds/` (default: $SCALEVEC_DATA_DIR or ./data).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build MNIST-scale folds from the four uncompressed MNIST IDX files.
    GenData(GenDataArgs),
    /// Train one model on one fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a fold.
    Eval(EvalArgs),
    /// Run a verification suite and print its JSON report.
    Check(CheckArgs),
    /// Train and test every variant on several folds, resuming finished runs.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Directory with train-images-idx3-ubyte, train-labels-idx1-ubyte,
    /// t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "equivariant")]
    pub variant: String,
    /// Number of pyramid levels (split as n/2 down, the rest up).
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub scale_factor: Option<f64>,
    /// Angle range of the scale codec, degrees.
    #[arg(long)]
    pub angle_range: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shift_angles: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// JSON file with `TrainConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Fixed gradient sharding, independent of the thread count.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub limit_train: Option<usize>,
    #[arg(long)]
    pub limit_val: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Fold index under `<data-dir>/folds`.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Explicit fold file; overrides `--fold`.
    #[arg(long)]
    pub fold_path: Option<PathBuf>,
    /// Output directory for `metrics.csv`, `model.ckpt` and `run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub fold_path: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Grad,
    Equivariance,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Oracle cases.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Stable coordinates for the gradient check.
    #[arg(long, default_value_t = 500)]
    pub coords: usize,
    /// Pyramid steps for the equivariance check; the negated step is also run.
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub steps: i32,
    /// Images for the equivariance check.
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    /// MNIST directory for the equivariance check (default: `<data-dir>/mnist`).
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Take layer-1 filters from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comma-separated fold indices.
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// Comma-separated variants.
    #[arg(long, default_value = "standard,invariant,equivariant", value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn data_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn fold_file(root: &Path, fold: usize) -> PathBuf {
    root.join("folds").join(format!("fold_{fold}.mscl"))
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<(ModelConfig, Vec<String>)> {
        let variant: Variant = self.variant.parse()?;
        let mut cfg = ModelConfig::new(variant);
        let mut spec = cfg.scale_spec.unwrap_or_default();
        let touched = self.scales.is_some() || self.scale_factor.is_some() || self.angle_range.is_some();
        if let Some(n) = self.scales {
            if n < 2 {
                return Err(Error::Usage(format!("--scales must be at least 2, got {n}")));
            }
            let down = n / 2;
            spec = ScaleSpec::new(n - 1 - down, down, spec.factor, spec.angle_range)?;
        }
        if let Some(f) = self.scale_factor {
            spec.factor = f;
        }
        if let Some(r) = self.angle_range {
            spec.angle_range = r;
        }
        spec.validate()?;
        if touched || variant != Variant::Standard {
            cfg.scale_spec = Some(spec);
        }
        if let Some(s) = self.shift_angles {
            cfg.shift_angles = s;
        }
        let mut notes = cfg.validate()?;
        if variant != Variant::Equivariant && self.shift_angles.is_some() {
            notes.push(format!("shift_angles is ignored by the {variant} variant"));
        }
        Ok((cfg, notes))
    }
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Input(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
            // keep the halving point at two thirds of the schedule
            if self.config.is_none() {
                cfg.halve_at = vec![(2 * v).div_ceil(3)];
            }
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(p) = self.precision {
            cfg.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        if let Some(v) = self.deterministic {
            cfg.deterministic = v;
        }
        if self.limit_train.is_some() {
            cfg.limit_train = self.limit_train;
        }
        if self.limit_val.is_some() {
            cfg.limit_val = self.limit_val;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_data(root: &Path, args: &GenDataArgs) -> Result<()> {
    if args.folds == 0 {
        return Err(Error::Usage("--folds must be at least 1".into()));
    }
    let mnist = args.mnist_dir.clone().unwrap_or_else(|| root.join("mnist"));
    let out = args.out.clone().unwrap_or_else(|| root.join("folds"));
    let pool = load_mnist_pool(&mnist)?;
    fs::create_dir_all(&out)?;
    let sizes = SplitSizes::default();
    let mut folds = Vec::new();
    for f in 0..args.folds {
        let g = generate_fold(&pool, f, args.seed, sizes)?;
        let path = out.join(format!("fold_{f}.mscl"));
        save_fold(&path, &g.fold)?;
        let scales: Vec<f64> = Split::ALL
            .iter()
            .flat_map(|&s| g.fold.split(s).iter().map(|r| r.scale as f64))
            .collect();
        let n = scales.len() as f64;
        let mean = scales.iter().sum::<f64>() / n;
        let sd = (scales.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        let [train_crc, val_crc, test_crc] = g.fold.checksums();
        eprintln!("fold {f}: {} (scale mean {mean:.4}, sd {sd:.4})", path.display());
        folds.push(json!({
            "index": f,
            "seed": g.seed,
            "path": path.file_name().map(|p| p.to_string_lossy().into_owned()),
            "counts": {"train": g.fold.train.len(), "val": g.fold.val.len(), "test": g.fold.test.len()},
            "crc32": {"train": format!("{train_crc:08x}"), "val": format!("{val_crc:08x}"), "test": format!("{test_crc:08x}")},
            "scale_mean": mean,
            "scale_sd": sd,
        }));
    }
    let manifest = json!({
        "config": {"mnist_dir": mnist, "folds": args.folds, "seed": args.seed,
                   "sizes": {"train": sizes.train, "val": sizes.val, "test": sizes.test}},
        "pool_size": pool.len(),
        "folds": folds,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    print_json(&manifest)
}

const CSV_HEADER: &str = "epoch,train_loss,val_error_pct,val_scale_rmse,wall_seconds";

fn csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{:.6},{:.4},{:.6},{:.2}",
        r.epoch, r.train_loss, r.val_error_pct, r.val_scale_rmse, r.wall_seconds
    )
}

struct RunOutput {
    best_epoch: usize,
    train_seconds: f64,
    test: Option<Metrics>,
}

fn run_training<T: Scalar>(
    model: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    test_set: Option<&[SampleRecord]>,
    out: &Path,
    echo: &Value,
) -> Result<RunOutput> {
    fs::create_dir_all(out)?;
    let mut csv = fs::File::create(out.join("metrics.csv"))?;
    writeln!(csv, "{CSV_HEADER}")?;
    let net = Network::<T>::new(model.clone(), tcfg.seed)?;
    let mut io_err = None;
    let outcome = train(net, train_set, val_set, tcfg, |rec| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val error {:.2}%  val scale rmse {:.4}  {:.0}s",
            rec.epoch, rec.train_loss, rec.val_error_pct, rec.val_scale_rmse, rec.wall_seconds
        );
        if let Err(e) = writeln!(csv, "{}", csv_row(rec)).and_then(|_| csv.flush()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let mut echo = echo.clone();
    echo["best_epoch"] = json!(outcome.best_epoch);
    save_checkpoint(&out.join("model.ckpt"), &outcome.best, &echo)?;
    let test = match test_set {
        Some(t) => Some(evaluate(&outcome.best, t)?),
        None => None,
    };
    Ok(RunOutput {
        best_epoch: outcome.best_epoch,
        train_seconds: outcome.history.last().map_or(0.0, |r| r.wall_seconds),
        test,
    })
}

fn train_cmd(root: &Path, args: &TrainArgs) -> Result<()> {
    let (model, notes) = args.model.resolve()?;
    for n in &notes {
        eprintln!("note: {n}");
    }
    let tcfg = args.train.resolve()?;
    let path = args.fold_path.clone().unwrap_or_else(|| fold_file(root, args.fold));
    let fold = load_fold(&path)?;
    let echo = json!({"command": "train", "fold_path": path, "model": model, "train": tcfg, "notes": notes});
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("run.json"), &echo)?;
    let out = match tcfg.precision {
        Precision::F32 => run_training::<f32>(&model, &tcfg, &fold.train, &fold.val, None, &args.out, &echo)?,
        Precision::F64 => run_training::<f64>(&model, &tcfg, &fold.train, &fold.val, None, &args.out, &echo)?,
    };
    eprintln!("best epoch {}; checkpoint {}", out.best_epoch, args.out.join("model.ckpt").display());
    Ok(())
}

fn eval_cmd(root: &Path, args: &EvalArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    let ck = load_checkpoint::<f32>(&args.checkpoint)?;
    let path = args.fold_path.clone().unwrap_or_else(|| fold_file(root, args.fold));
    let fold = load_fold(&path)?;
    let records = fold.split(split);
    let records = &records[..args.limit.unwrap_or(records.len()).min(records.len())];
    let m = evaluate(&ck.network, records)?;
    let report = json!({
        "classification_error_pct": m.classification_error_pct,
        "scale_rmse": m.scale_rmse,
        "n": m.n,
        "config": {"checkpoint": args.checkpoint, "fold_path": path, "split": split.name(),
                   "model": ck.network.config},
    });
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn check_cmd(root: &Path, args: &CheckArgs) -> Result<bool> {
    let (report, passed) = match args.suite {
        Suite::Oracle => {
            let r = oracle_suite(args.cases, args.seed)?;
            (serde_json::to_value(&r)?, r.passed)
        }
        Suite::Grad => {
            let r = grad_suite(&synthetic_records(4, args.seed), args.coords, args.seed)?;
            (serde_json::to_value(&r)?, r.passed)
        }
        Suite::Equivariance => {
            let (model, _) = args.model.resolve()?;
            let spec = model.spec();
            let dir = args.mnist_dir.clone().unwrap_or_else(|| root.join("mnist"));
            let pool = load_mnist_pool(&dir)?;
            let images: Vec<Vec<f32>> = pool.iter().take(args.images).map(|s| s.image.clone()).collect();
            let steps = if args.steps == 0 { vec![0] } else { vec![args.steps, -args.steps] };
            let filters = match &args.checkpoint {
                Some(p) => Some(load_checkpoint::<f64>(p)?.network),
                None => None,
            };
            let r = equivariance_suite(&images, &steps, &spec, args.seed, filters.as_ref())?;
            (serde_json::to_value(&r)?, r.passed)
        }
    };
    let mut report = report;
    report["suite"] = serde_json::to_value(args.suite)?;
    report["seed"] = json!(args.seed);
    print_json(&report)?;
    Ok(passed)
}

fn reproduce_cmd(root: &Path, args: &ReproduceArgs) -> Result<()> {
    let tcfg = args.train.resolve()?;
    let variants: Vec<Variant> = args.variants.iter().map(|v| v.parse()).collect::<Result<_>>()?;
    fs::create_dir_all(&args.out)?;
    let mut runs = Vec::new();
    for &f in &args.folds {
        let path = fold_file(root, f);
        let mut fold = None;
        for &variant in &variants {
            let dir = args.out.join(format!("fold{f}-{variant}"));
            let done = dir.join("test.json");
            if let Ok(text) = fs::read_to_string(&done) {
                let v: Value = serde_json::from_str(&text)?;
                eprintln!("fold {f} {variant}: already done");
                runs.push(v);
                continue;
            }
            if fold.is_none() {
                fold = Some(load_fold(&path)?);
            }
            let data = fold.as_ref().expect("loaded above");
            let model = ModelConfig::new(variant);
            let echo = json!({"command": "reproduce", "fold_path": path, "model": model, "train": tcfg});
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("run.json"), &echo)?;
            eprintln!("fold {f} {variant}: training");
            let out = match tcfg.precision {
                Precision::F32 => run_training::<f32>(&model, &tcfg, &data.train, &data.val, Some(&data.test), &dir, &echo)?,
                Precision::F64 => run_training::<f64>(&model, &tcfg, &data.train, &data.val, Some(&data.test), &dir, &echo)?,
            };
            let m = out.test.expect("test split evaluated");
            let v = json!({
                "fold": f, "variant": variant, "best_epoch": out.best_epoch,
                "classification_error_pct": m.classification_error_pct,
                "scale_rmse": m.scale_rmse, "n": m.n, "train_seconds": out.train_seconds, "train": tcfg,
            });
            write_json(&done, &v)?;
            eprintln!("fold {f} {variant}: test error {:.2}%, scale rmse {:.4}", m.classification_error_pct, m.scale_rmse);
            runs.push(v);
        }
    }
    let mut summary = serde_json::Map::new();
    for &variant in &variants {
        let mine: Vec<&Value> = runs.iter().filter(|r| r["variant"] == json!(variant)).collect();
        let mean = |key: &str| mine.iter().filter_map(|r| r[key].as_f64()).sum::<f64>() / mine.len() as f64;
        summary.insert(
            variant.name().into(),
            json!({"folds": mine.len(), "mean_error_pct": mean("classification_error_pct"),
                   "mean_scale_rmse": mean("scale_rmse")}),
        );
    }
    let results = json!({"train": tcfg, "runs": runs, "summary": summary});
    write_json(&args.out.join("results.json"), &results)?;
    print_json(&results["summary"])
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return 1;
        }
    }
    let root = data_root(&cli.data_dir);
    let result = match &cli.command {
        Command::GenData(a) => gen_data(&root, a),
        Command::Train(a) => train_cmd(&root, a),
        Command::Eval(a) => eval_cmd(&root, a),
        Command::Reproduce(a) => reproduce_cmd(&root, a),
        Command::Check(a) => match check_cmd(&root, a) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_CHECK_FAILED,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
