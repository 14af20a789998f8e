//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{
    coefficients_csv, ensemble_mean, fit_linear, predict_linear, score_external, score_with,
};
use crate::error::{Error, Result};
use crate::grid::{GridField, NormMode};
use crate::io::config::apply_setting;
use crate::io::{
    load_config, load_dataset, read_grd, read_mdl, to_kv, write_atomic, write_grd, write_mdl,
};
use crate::net::gradcheck::{run_gradcheck, GRADIENT_TOLERANCE};
use crate::net::{NetworkParams, Variant};
use crate::stats::{compare_reports, paired_csv, MetricsReport, ReportJson};
use crate::synth::{default_geometry, default_members, generate_dataset, TruthConfig};
use crate::train::{
    predict_mm, prepare_examples, random_search, train_model, Dataset, EpochRecord, HyperSpace,
    TrainConfig, TrialStatus,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "downscale",
    version,
    about = "Ensemble precipitation downscaling with delta-initialized CNNs"
)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ensemble dataset.
    Synth(SynthArgs),
    /// Train a network and write an MDL1 model.
    Train(TrainArgs),
    /// Score a trained model on a split.
    Eval(EvalArgs),
    /// Score the ensemble mean or pooled linear regression.
    Baseline(BaselineArgs),
    /// Score an externally produced GRD1 prediction.
    ScoreExternal(ExternalArgs),
    /// Random hyperparameter search.
    Search(SearchArgs),
    /// Sign test and ratio bound between two per-day error files.
    Compare(CompareArgs),
    /// Finite-difference check of the backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    days: usize,
    /// Label grid as ROWSxCOLS.
    #[arg(long, default_value = "32x32", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 4)]
    members: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TruthConfig::default().smoothness)]
    smoothness: f64,
    #[arg(long, default_value_t = TruthConfig::default().rain_fraction)]
    rain_fraction: f64,
    #[arg(long, default_value = "center_scale")]
    normalization: NormMode,
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set learning_rate=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

impl Overrides {
    fn resolve(&self, variant: Option<Variant>, seed: Option<u64>) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        };
        for s in &self.settings {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            apply_setting(&mut c, k, v)?;
        }
        if let Some(v) = variant {
            c.arch.variant = v;
        }
        if let Some(s) = seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SplitName {
    Val,
    Test,
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Per-day CSV `date,rmse_mm,cells` (default: report path with `.csv`).
    #[arg(long)]
    per_day: Option<PathBuf>,
}

impl ReportArgs {
    fn per_day_path(&self) -> PathBuf {
        self.per_day
            .clone()
            .unwrap_or_else(|| self.report.with_extension("csv"))
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[command(flatten)]
    report: ReportArgs,
    /// Write predicted, observed and ensemble-mean grids here.
    #[arg(long)]
    dump_grids: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BaselineMethod {
    Mean,
    Linreg,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[command(flatten)]
    report: ReportArgs,
    /// Regression coefficient CSV (default: `<report>.coef.csv`).
    #[arg(long)]
    coefficients: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExternalArgs {
    /// GRD1 file with one step per day.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Date of the first step (default: first day of the dataset).
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = HyperSpace::default().budget)]
    budget: usize,
    /// Seed of the hyperparameter draws. Every trial trains with the config's `seed`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Best configuration, in config-file format.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    leaderboard: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    significance: f64,
    /// Paired errors CSV `date,err_a,err_b`.
    #[arg(long)]
    paired: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    cases: usize,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad grid size {s:?}"))
    };
    Ok((parse(r)?, parse(c)?))
}

impl clap::builder::ValueParserFactory for NormMode {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<NormMode>().map_err(|e| e.to_string()))
    }
}

impl clap::builder::ValueParserFactory for Variant {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Variant>().map_err(|e| e.to_string()))
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return EXIT_DATA;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::ScoreExternal(a) => external(a),
        Command::Search(a) => search(a),
        Command::Compare(a) => compare(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
    .map(|()| EXIT_OK)
}

fn print_resolved(command: &str, entries: &[(&str, String)]) {
    println!("# {command}: resolved configuration");
    for (k, v) in entries {
        println!("{k} = {v}");
    }
}

fn print_train_config(command: &str, c: &TrainConfig, extra: &[(&str, String)]) {
    print_resolved(command, extra);
    print!("{}", to_kv(c));
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn synth(a: SynthArgs) -> Result<()> {
    let truth = TruthConfig {
        smoothness: a.smoothness,
        rain_fraction: a.rain_fraction,
    };
    print_resolved(
        "synth",
        &[
            ("out", a.out.display().to_string()),
            ("days", a.days.to_string()),
            ("grid", format!("{}x{}", a.grid.0, a.grid.1)),
            ("members", a.members.to_string()),
            ("seed", a.seed.to_string()),
            ("smoothness", truth.smoothness.to_string()),
            ("rain_fraction", truth.rain_fraction.to_string()),
            ("normalization", a.normalization.to_string()),
        ],
    );
    let data = generate_dataset(
        default_geometry(a.grid.0, a.grid.1),
        a.days,
        &default_members(a.members),
        &truth,
        a.seed,
    )?;
    let manifest = data.write_files(&a.out, a.normalization)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_rmse_mm,wall_seconds\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            h.epoch, h.train_loss, h.val_rmse_mm, h.wall_seconds
        ));
    }
    out
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.overrides.resolve(a.variant, a.seed)?;
    let history_path = a
        .history
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", a.out.display())));
    print_train_config(
        "train",
        &config,
        &[
            ("data", a.data.display().to_string()),
            ("out", a.out.display().to_string()),
            ("history", history_path.display().to_string()),
        ],
    );
    let ds = load_dataset(&a.data)?;
    let splits = ds.splits();
    let outcome = train_model(splits.train, splits.val, &ds.stats, &config)?;
    write_mdl(&outcome.params, &a.out)?;
    write_text(&history_path, &history_csv(&outcome.history))?;
    println!(
        "best epoch {} of {}: validation RMSE {:.4} mm (initial {:.4} mm)",
        outcome.best_epoch,
        outcome.history.len() - 1,
        outcome.best_val_rmse,
        outcome.history[0].val_rmse_mm
    );
    Ok(())
}

fn split_of(ds: &Dataset, which: SplitName) -> Result<&[crate::grid::EnsembleSample]> {
    let s = ds.splits();
    let days = match which {
        SplitName::Val => s.val,
        SplitName::Test => s.test,
    };
    if days.is_empty() {
        return Err(Error::Empty(format!("{which} split has no days")));
    }
    Ok(days)
}

fn write_report(args: &ReportArgs, report: &MetricsReport) -> Result<()> {
    write_json(&args.report, &report.to_json())?;
    write_text(&args.per_day_path(), &report.per_day_csv())?;
    println!(
        "{}: RMSE {:.4} mm over {} days",
        report.method, report.rmse_mm, report.n_days
    );
    Ok(())
}

fn check_model_fits(params: &NetworkParams, ds: &Dataset) -> Result<()> {
    let (rows, cols) = ds.grid_shape();
    let want = (ds.member_count(), rows, cols);
    if params.input_shape != want {
        return Err(Error::Shape(format!(
            "model expects input {:?}, dataset provides {want:?}",
            params.input_shape
        )));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    print_resolved(
        "eval",
        &[
            ("model", a.model.display().to_string()),
            ("data", a.data.display().to_string()),
            ("split", a.split.to_string()),
            ("report", a.report.report.display().to_string()),
            ("per_day", a.report.per_day_path().display().to_string()),
            (
                "dump_grids",
                a.dump_grids
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
        ],
    );
    let params = read_mdl(&a.model)?;
    let ds = load_dataset(&a.data)?;
    check_model_fits(&params, &ds)?;
    let days = split_of(&ds, a.split)?;
    let examples = prepare_examples(days, &ds.stats)?;
    let preds = days
        .iter()
        .zip(&examples)
        .map(|(s, e)| {
            GridField::new(
                s.label.geometry(),
                predict_mm(&params, e, &ds.stats)?,
                "network",
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_days(
        "network",
        days.iter()
            .zip(&preds)
            .map(|(s, p)| (s.date, p.values.as_slice(), s.label.values.as_slice())),
    )?;
    write_report(&a.report, &report)?;
    if let Some(dir) = &a.dump_grids {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let obs: Vec<GridField> = days.iter().map(|s| s.label.clone()).collect();
        let interp = days
            .iter()
            .map(|s| ensemble_mean(&s.members))
            .collect::<Result<Vec<_>>>()?;
        write_grd(&preds, &dir.join("predicted.grd"))?;
        write_grd(&obs, &dir.join("observed.grd"))?;
        write_grd(&interp, &dir.join("ensemble_mean.grd"))?;
        println!("grids written to {}", dir.display());
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let coef_path = a
        .coefficients
        .clone()
        .unwrap_or_else(|| a.report.report.with_extension("coef.csv"));
    let mut resolved = vec![
        ("method", format!("{:?}", a.method).to_lowercase()),
        ("data", a.data.display().to_string()),
        ("split", a.split.to_string()),
        ("report", a.report.report.display().to_string()),
        ("per_day", a.report.per_day_path().display().to_string()),
    ];
    if a.method == BaselineMethod::Linreg {
        resolved.push(("coefficients", coef_path.display().to_string()));
    }
    print_resolved("baseline", &resolved);
    let ds = load_dataset(&a.data)?;
    let days = split_of(&ds, a.split)?;
    let report = match a.method {
        BaselineMethod::Mean => score_with("ensemble_mean", days, |s| ensemble_mean(&s.members))?,
        BaselineMethod::Linreg => {
            let s = ds.splits();
            let fit: Vec<_> = s.train.iter().chain(s.val).cloned().collect();
            let model = fit_linear(&fit)?;
            let csv = coefficients_csv(&model, &ds.member_names);
            print!("{csv}");
            write_text(&coef_path, &csv)?;
            score_with("linear_regression", days, |s| {
                predict_linear(&model, &s.members)
            })?
        }
    };
    write_report(&a.report, &report)
}

fn external(a: ExternalArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let start = match a.start {
        Some(d) => d,
        None => ds
            .samples
            .first()
            .map(|s| s.date)
            .ok_or_else(|| Error::Empty("dataset has no days".into()))?,
    };
    print_resolved(
        "score-external",
        &[
            ("pred", a.pred.display().to_string()),
            ("data", a.data.display().to_string()),
            ("start", start.to_string()),
            ("split", a.split.to_string()),
            ("report", a.report.report.display().to_string()),
            ("per_day", a.report.per_day_path().display().to_string()),
        ],
    );
    let fields = read_grd(&a.pred)?;
    let dated: Vec<(NaiveDate, GridField)> = fields
        .into_iter()
        .enumerate()
        .map(|(i, f)| (start + Days::new(i as u64), f))
        .collect();
    let days = split_of(&ds, a.split)?;
    let report = score_external("external", &dated, days)?;
    write_report(&a.report, &report)
}

fn leaderboard_csv(outcome: &crate::train::SearchOutcome) -> String {
    let mut out = String::from(
        "index,learning_rate,lambda,conv_layers,local_layers,status,val_rmse_mm,epochs\n",
    );
    for t in &outcome.leaderboard {
        let c = &t.config;
        let (status, rmse, epochs) = match &t.status {
            TrialStatus::Finished {
                val_rmse_mm,
                epochs,
            } => ("finished", val_rmse_mm.to_string(), epochs.to_string()),
            TrialStatus::Diverged(_) => ("diverged", String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{status},{rmse},{epochs}\n",
            t.index, c.learning_rate, c.lambda, c.arch.conv_layers, c.arch.local_layers
        ));
    }
    out
}

fn search(a: SearchArgs) -> Result<()> {
    let base = a.overrides.resolve(None, None)?;
    let space = HyperSpace {
        budget: a.budget,
        ..HyperSpace::default()
    };
    space.validate()?;
    print_train_config(
        "search",
        &base,
        &[
            ("data", a.data.display().to_string()),
            ("budget", space.budget.to_string()),
            ("search_seed", a.seed.to_string()),
            ("lr_range", format!("{:?}", space.lr_range)),
            ("lambda_range", format!("{:?}", space.lambda_range)),
            (
                "conv_depth_choices",
                format!("{:?}", space.conv_depth_choices),
            ),
            (
                "local_depth_choices",
                format!("{:?}", space.local_depth_choices),
            ),
            ("out", a.out.display().to_string()),
            ("leaderboard", a.leaderboard.display().to_string()),
        ],
    );
    let ds = load_dataset(&a.data)?;
    let s = ds.splits();
    let outcome = random_search(&space, &base, s.train, s.val, &ds.stats, a.seed)?;
    write_text(&a.out, &to_kv(&outcome.best))?;
    write_text(&a.leaderboard, &leaderboard_csv(&outcome))?;
    println!(
        "best trial {} of {}",
        outcome.best_index,
        outcome.leaderboard.len()
    );
    Ok(())
}

fn load_per_day(path: &Path) -> Result<MetricsReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::InvalidArgument(format!("{}: not UTF-8", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MetricsReport::parse_per_day_csv(name, &text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn compare(a: CompareArgs) -> Result<()> {
    print_resolved(
        "compare",
        &[
            ("a", a.a.display().to_string()),
            ("b", a.b.display().to_string()),
            ("report", a.report.display().to_string()),
            ("significance", a.significance.to_string()),
            (
                "paired",
                a.paired
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
        ],
    );
    let ra = load_per_day(&a.a)?;
    let rb = load_per_day(&a.b)?;
    let (pairs, sig) = compare_reports(&ra, &rb, a.significance)?;
    let report = ReportJson {
        method: format!("{} vs {}", ra.method, rb.method),
        rmse_mm: ra.rmse_mm,
        n_days: pairs.len(),
        p_value: Some(sig.p_value),
        ratio_bound: Some(sig.ratio_bound.ratio),
    };
    write_json(&a.report, &report)?;
    if let Some(p) = &a.paired {
        write_text(p, &paired_csv(&pairs))?;
    }
    println!(
        "{} wins {} of {} non-tied days; one-sided p = {:.6e}; ratio bound {:.6}{}",
        ra.method,
        sig.wins_a,
        sig.n,
        sig.p_value,
        sig.ratio_bound.ratio,
        if sig.ratio_bound.below_unity {
            " (below 1)"
        } else {
            ""
        }
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    print_resolved(
        "gradcheck",
        &[("seed", a.seed.to_string()), ("cases", a.cases.to_string())],
    );
    let report = run_gradcheck(a.seed, a.cases)?;
    println!(
        "max relative gradient error {:.3e} over {} parameters in {} cases (worst: {})",
        report.max_relative_error, report.parameters_checked, report.cases, report.worst_case
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gradient check failed: {:.3e} >= {GRADIENT_TOLERANCE:e}",
            report.max_relative_error
        )))
    }
}
