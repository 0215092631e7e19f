//! The `topk` command line: train, eval, synth and cv.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{generate_circle, load_libsvm, write_libsvm, CircleSpec, Dataset};
use crate::error::{Error, Result};
use crate::gd::GdConfig;
use crate::metrics::{cross_validate, lambda_from_c, topk_accuracy, GridSpec, MetricsRow, MetricsTable};
use crate::model::Model;
use crate::train::{train, Method, TrainOptions};
use crate::util::fmt_g;

#[derive(Parser, Debug)]
#[command(name = "topk", version, about = "Top-k multiclass classification with linear models")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a LibSVM file.
    Train(TrainArgs),
    /// Top-k accuracy of a saved model.
    Eval(EvalArgs),
    /// Write the synthetic circle data set.
    Synth(SynthArgs),
    /// Select C on a validation set.
    Cv(CvArgs),
}

#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    /// One of svm_ova, svm_ova_smooth, lr_ova, svm_multi, lr_multi, topk_svm_a,
    /// topk_svm_b, topk_svm_a_smooth, topk_svm_b_smooth, topk_ent, topk_ent_trunc.
    #[arg(long)]
    pub loss: Method,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Smoothing parameter of the smooth hinge losses.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub gamma: f64,
    /// Maximum SDCA epochs.
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Relative duality gap at which SDCA stops.
    #[arg(long, default_value_t = 1e-3, value_parser = positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum gradient descent iterations (truncated entropy only).
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
}

impl LossArgs {
    fn options(&self, init: Option<Model>) -> TrainOptions {
        TrainOptions {
            max_epochs: self.epochs,
            gap_tolerance: self.tol,
            seed: self.seed,
            gd: GdConfig {
                max_iters: self.max_iters,
                ..GdConfig::default()
            },
            init,
        }
    }
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("reg").required(true).args(["c", "lambda"]))]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    /// C = 1 / (lambda n).
    #[arg(long, value_parser = positive)]
    pub c: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub lambda: Option<f64>,
    /// Starting model for gradient descent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub kmax: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub ntrain: usize,
    #[arg(long, default_value_t = 200)]
    pub nval: usize,
    #[arg(long, default_value_t = 200_000)]
    pub ntest: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Report the selected models on this set as well.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Smallest exponent of the grid C = 2^e.
    #[arg(long, default_value_t = -18, allow_hyphen_values = true)]
    pub grid_lo: i32,
    #[arg(long, default_value_t = 18, allow_hyphen_values = true)]
    pub grid_hi: i32,
    /// Top-k accuracy to select for; may be repeated.
    #[arg(long = "target-k", default_values_t = [1u64], value_parser = clap::value_parser!(u64).range(1..))]
    pub target_k: Vec<u64>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub kmax: u64,
    /// Directory for the selected models.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli);
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn init_logging(cli: &Cli) {
    let default = if cli.quiet {
        "warn"
    } else {
        match (cli.verbose, &cli.command) {
            (0, Command::Train(_)) => "info",
            (0, _) => "warn",
            (1, _) => "info",
            _ => "debug",
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format(|buf, record| {
            if record.level() == log::Level::Info {
                writeln!(buf, "{}", record.args())
            } else {
                writeln!(buf, "{}: {}", record.level().as_str().to_lowercase(), record.args())
            }
        })
        .try_init();
}

/// Caps the worker pool at `TOPK_THREADS` when set.
fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var("TOPK_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("TOPK_THREADS must be a positive integer, got '{value}'")))?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Cv(args) => cmd_cv(args),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let data = load_libsvm(&args.data)?;
    let spec = args.loss.loss.loss(args.loss.k as usize, args.loss.gamma)?;
    let lambda = match (args.c, args.lambda) {
        (Some(c), None) => lambda_from_c(c, data.len()),
        (None, Some(l)) => l,
        _ => return Err(Error::invalid("give exactly one of --c and --lambda")),
    };
    let init = match &args.init {
        Some(path) => {
            let m = Model::load(path)?;
            if m.dim() != data.dim() || m.num_classes() != data.num_classes() {
                return Err(Error::DimensionMismatch(format!(
                    "initial model is {} x {}, data needs {} x {}",
                    m.dim(),
                    m.num_classes(),
                    data.dim(),
                    data.num_classes()
                )));
            }
            Some(m)
        }
        None => None,
    };
    let (model, summary) = train(&data, &spec, lambda, &args.loss.options(init))?;
    model.save(&args.out)?;
    println!(
        "P={} D={} gap={} epochs={}",
        fmt_g(summary.primal, 17),
        fmt_g(summary.dual, 17),
        fmt_g(summary.gap, 6),
        summary.epochs
    );
    Ok(())
}

fn load_for_model(path: &Path, model: &Model) -> Result<Dataset> {
    let data = load_libsvm(path)?;
    if data.dim() > model.dim() || data.num_classes() > model.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model is {} x {} but {} has dimension {} and {} classes",
            model.dim(),
            model.num_classes(),
            path.display(),
            data.dim(),
            data.num_classes()
        )));
    }
    data.conform(model.dim(), model.num_classes())
}

fn clip_kmax(kmax: u64, m: usize) -> usize {
    let kmax = kmax as usize;
    if kmax > m {
        log::warn!("kmax {kmax} exceeds the number of classes; using {m}");
        m
    } else {
        kmax
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let data = load_for_model(&args.data, &model)?;
    let kmax = clip_kmax(args.kmax, model.num_classes());
    let accuracy = topk_accuracy(&model, &data, kmax)?;
    let row = MetricsRow {
        method: model.family.to_string(),
        c: f64::NAN,
        lambda: model.lambda,
        k_target: model.k,
        accuracy,
    };
    println!("{}", MetricsTable::header(kmax));
    println!("{}", MetricsTable::format_row(&row));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = CircleSpec {
        n_train: args.ntrain,
        n_val: args.nval,
        n_test: args.ntest,
        seed: args.seed,
    };
    let (train, val, test) = generate_circle(&spec)?;
    std::fs::create_dir_all(&args.outdir)?;
    for (name, data) in [("circle.train", &train), ("circle.val", &val), ("circle.test", &test)] {
        write_libsvm(args.outdir.join(name), data)?;
    }
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    if args.grid_lo > args.grid_hi {
        return Err(Error::invalid("--grid-lo must not exceed --grid-hi"));
    }
    let train_set = load_libsvm(&args.train)?;
    let (dim, m) = (train_set.dim(), train_set.num_classes());
    let val = load_libsvm(&args.val)?;
    let (dim, m) = (dim.max(val.dim()), m.max(val.num_classes()));
    let train_set = train_set.conform(dim, m)?;
    let val = val.conform(dim, m)?;
    let method = args.loss.loss;
    let spec = method.loss(args.loss.k as usize, args.loss.gamma)?;
    spec.check_classes(m)?;
    let kmax = clip_kmax(args.kmax, m);
    let target_ks: Vec<usize> = args.target_k.iter().map(|&k| k as usize).collect();
    if let Some(&k) = target_ks.iter().find(|&&k| k > m) {
        return Err(Error::invalid(format!("target k {k} exceeds the number of classes {m}")));
    }
    let grid = GridSpec::powers_of_two(args.grid_lo, args.grid_hi, target_ks);
    let opts = args.loss.options(None);
    let cv = cross_validate(&train_set, &val, method.name(), &grid, kmax, |lambda| {
        Ok(train(&train_set, &spec, lambda, &opts)?.0)
    })?;

    let test = match &args.test {
        Some(path) => Some(load_libsvm(path)?.conform(dim, m)?),
        None => None,
    };
    let mut table = cv.validation.clone();
    table.kmax = kmax;
    for s in &cv.selections {
        let model = &cv.models[s.index];
        let accuracy = match &test {
            Some(t) => topk_accuracy(model, t, kmax)?,
            None => cv.validation.rows[s.index].accuracy[..kmax].to_vec(),
        };
        table.rows.push(MetricsRow {
            method: method.name().to_string(),
            c: s.c,
            lambda: s.lambda,
            k_target: s.k_target,
            accuracy,
        });
        if let Some(dir) = &args.out_dir {
            std::fs::create_dir_all(dir)?;
            model.save(dir.join(format!("{}_top{}.model", method.name(), s.k_target)))?;
        }
    }
    for row in &mut table.rows {
        row.accuracy.truncate(kmax);
    }
    print!("{}", table.to_csv());
    Ok(())
}
