//! Command-line front end: scenario training, testing, reports and sample data.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cellsvm::config::{Config, McType};
use cellsvm::dataio::{parse_csv, parse_libsvm, CsvOptions, Dataset, LabelColumn};
use cellsvm::scenarios::{self, Predictions, ScenarioKind, ScenarioSpec, TrainedModel};
use cellsvm::synthetic::Mixture;
use cellsvm::Error;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cellsvm", version, about = "Kernel SVMs with built-in cross validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multiclass classification (AvA hinge by default, OvA least squares with --mc_type ova).
    Mc {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long = "mc_type")]
        mc_type: Option<String>,
    },
    /// Least-squares regression.
    Ls {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Quantile regression, one output per level.
    Qt {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        levels: Option<String>,
    },
    /// Expectile regression, one output per level.
    Ex {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        levels: Option<String>,
    },
    /// Neyman-Pearson classification with a false-alarm bound on the normal class.
    Npl {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long = "npl_class")]
        npl_class: Option<String>,
        #[arg(long = "npl_alpha", alias = "npl_constraint")]
        npl_alpha: Option<String>,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Binary classification; with --weights one weighted task per weight.
    Binary {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Applies a model file to test data.
    Test(TestArgs),
    /// Aggregates result files into a table.
    Report(ReportArgs),
    /// Writes a sample from the seeded banana mixture.
    GenMixture(GenArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Label column of CSV input: first, last or a 0-based index.
    #[arg(long = "label_column", default_value = "last")]
    label_column: String,
    /// CSV input starts with a header row.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Test file evaluated right after training.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    result: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    display: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long = "grid_choice")]
    grid_choice: Option<String>,
    #[arg(long = "adaptivity_control")]
    adaptivity_control: Option<String>,
    /// Cell method code with an optional maximal cell size, e.g. `6,1000`.
    #[arg(long)]
    voronoi: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long = "fold_method")]
    fold_method: Option<String>,
    #[arg(long, alias = "random_seed")]
    seed: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    selection: Option<String>,
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    solver: Option<String>,
    /// Any configuration key as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    display: Option<String>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// text or csv
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Destination; `.csv` writes CSV with the label last, anything else libsvm.
    #[arg(long)]
    output: PathBuf,
    /// Also print the Monte Carlo Bayes error.
    #[arg(long)]
    bayes: bool,
}

/// One run written by `--result` and read by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub scenario: String,
    pub config: String,
    pub metrics: Vec<(String, f64)>,
    pub train_seconds: f64,
    pub test_seconds: f64,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Argument(_) | Error::Io(_) => EXIT_USAGE,
            Error::Numeric(_) | Error::Selection(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Outcome<()> {
    match command {
        Command::Mc { common, mc_type } => {
            let mut config = Config::default();
            if let Some(t) = &mc_type {
                config.set("mc_type", t)?;
            }
            train_command(&common, config, "mc", &[])
        }
        Command::Ls { common } => train_command(&common, Config::default(), "ls", &[]),
        Command::Qt { common, levels } => train_command(&common, Config::default(), "qt", &[("levels", levels)]),
        Command::Ex { common, levels } => train_command(&common, Config::default(), "ex", &[("levels", levels)]),
        Command::Npl {
            common,
            npl_class,
            npl_alpha,
            weights,
        } => train_command(
            &common,
            Config::default(),
            "npl",
            &[("npl_class", npl_class), ("npl_alpha", npl_alpha), ("weights", weights)],
        ),
        Command::Binary { common, weights } => {
            let name = if weights.is_some() { "weighted_binary" } else { "binary" };
            train_command(&common, Config::default(), name, &[("weights", weights)])
        }
        Command::Test(args) => test_command(&args),
        Command::Report(args) => report_command(&args),
        Command::GenMixture(args) => gen_command(&args),
    }
}

fn csv_options(input: &InputArgs) -> Outcome<CsvOptions> {
    let label_column = match input.label_column.trim() {
        "first" => LabelColumn::First,
        "last" => LabelColumn::Last,
        s => LabelColumn::Index(
            s.parse()
                .map_err(|_| Failure::usage(format!("invalid label column `{s}`")))?,
        ),
    };
    Ok(CsvOptions {
        label_column,
        has_header: input.header,
        ..CsvOptions::default()
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads libsvm or CSV input, chosen by the `.csv` extension.
pub fn read_dataset(path: &Path, options: CsvOptions) -> cellsvm::Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot open {}: {e}", path.display()),
        ))
    })?;
    if is_csv(path) {
        parse_csv(&bytes, options)
    } else {
        parse_libsvm(&bytes)
    }
}

fn apply_common(config: &mut Config, args: &TrainArgs) -> Outcome<()> {
    let pairs = [
        ("display", &args.display),
        ("threads", &args.threads),
        ("grid_choice", &args.grid_choice),
        ("adaptivity_control", &args.adaptivity_control),
        ("voronoi", &args.voronoi),
        ("folds", &args.folds),
        ("fold_method", &args.fold_method),
        ("seed", &args.seed),
        ("kernel", &args.kernel),
        ("selection", &args.selection),
        ("gammas", &args.gammas),
        ("lambdas", &args.lambdas),
        ("solver", &args.solver),
    ];
    for (key, value) in pairs {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k, v)?;
    }
    Ok(())
}

/// Formats predictions as space-separated rows with round-trip precision.
pub fn format_predictions(predictions: &Predictions) -> String {
    let mut out = String::new();
    for row in &predictions.rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn print_summary(model: &TrainedModel, display: u8) {
    if display == 0 {
        return;
    }
    for line in scenarios::describe(model) {
        println!("{line}");
    }
    if let Some(choice) = model.npl {
        println!(
            "npl weight={} false_alarm={:.4} detection={:.4}{}",
            choice.weight,
            choice.stats.false_alarm_rate,
            choice.stats.detection_rate,
            if choice.constraint_violated { " (constraint violated)" } else { "" }
        );
    }
    if display >= 2 {
        for s in &model.summary {
            for (g, l, v) in &s.grid_trace {
                println!("  task {} cell {} gamma={g:.6} lambda={l:.3e} val_loss={v:.6}", s.task, s.cell);
            }
        }
    }
}

fn config_label(config: &Config) -> String {
    let grid = match config.grid_choice {
        cellsvm::config::GridChoice::Default(n) => format!("grid{n}"),
        cellsvm::config::GridChoice::Libsvm => "libsvm".into(),
    };
    format!(
        "{grid} adapt={} cells={:?}/{} folds={}",
        config.adaptivity_control, config.partition, config.cell_size, config.folds
    )
}

fn dataset_name(path: &Path) -> String {
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or("data");
    stem.split('.').next().unwrap_or(stem).to_string()
}

fn train_command(args: &TrainArgs, mut config: Config, scenario: &str, extra: &[(&str, Option<String>)]) -> Outcome<()> {
    apply_common(&mut config, args)?;
    for (key, value) in extra {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    let kind = ScenarioKind::parse(scenario, config.mc_type)?;
    if kind == ScenarioKind::McOva && config.mc_type != McType::Ova {
        config.mc_type = McType::Ova;
    }
    let spec = ScenarioSpec::from_config(kind, &config);
    let options = csv_options(&args.input)?;
    let data = read_dataset(&args.train, options)?;
    let start = Instant::now();
    let model = scenarios::train(&spec, &data, &config)?;
    let train_seconds = start.elapsed().as_secs_f64();
    print_summary(&model, config.display);
    if let Some(path) = &args.model {
        model.save(path)?;
    }
    if args.model.is_none() && args.test.is_none() {
        return Err(Failure::usage("nothing to do: give --model and/or --test"));
    }
    if let Some(test) = &args.test {
        let r = run_test(&model, test, options, args.output.as_deref(), config.threads)?;
        if let Some(path) = &args.result {
            write_result(
                path,
                &RunResult {
                    dataset: dataset_name(&args.train),
                    scenario: kind.name().into(),
                    config: config_label(&config),
                    metrics: r.0,
                    train_seconds,
                    test_seconds: r.1,
                },
            )?;
        }
    }
    Ok(())
}

fn run_test(
    model: &TrainedModel,
    test: &Path,
    options: CsvOptions,
    output: Option<&Path>,
    threads: usize,
) -> Outcome<(Vec<(String, f64)>, f64)> {
    let data = read_dataset(test, options)?;
    let start = Instant::now();
    let predictions = scenarios::predict(model, &data, threads)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(path) = output {
        std::fs::write(path, format_predictions(&predictions)).map_err(Error::Io)?;
    }
    let metrics = scenarios::evaluate(&predictions, data.labels(), model)?;
    for (k, v) in &metrics.values {
        if k.starts_with("error") {
            println!("{k}: {:.4}%", 100.0 * v);
        } else {
            println!("{k}: {v:.6}");
        }
    }
    Ok((metrics.values, seconds))
}

fn write_result(path: &Path, result: &RunResult) -> Outcome<()> {
    let text = serde_json::to_string_pretty(result).map_err(Error::Json)?;
    std::fs::write(path, text).map_err(Error::Io)?;
    Ok(())
}

fn test_command(args: &TestArgs) -> Outcome<()> {
    let model = TrainedModel::load(&args.model).map_err(|e| match e {
        Error::Io(io) => Failure::usage(format!("cannot open {}: {io}", args.model.display())),
        other => other.into(),
    })?;
    let mut threads = model.config.threads;
    if let Some(t) = &args.threads {
        let mut c = model.config.clone();
        c.set("threads", t)?;
        threads = c.threads;
    }
    if let Some(d) = &args.display {
        let mut c = model.config.clone();
        c.set("display", d)?;
        print_summary(&model, c.display);
    }
    let (metrics, test_seconds) = run_test(&model, &args.test, csv_options(&args.input)?, args.output.as_deref(), threads)?;
    if let Some(path) = &args.result {
        write_result(
            path,
            &RunResult {
                dataset: dataset_name(&args.test),
                scenario: model.scenario.kind.name().into(),
                config: config_label(&model.config),
                metrics,
                train_seconds: 0.0,
                test_seconds,
            },
        )?;
    }
    Ok(())
}

/// Mean of every metric and of the timings per (dataset, scenario, config).
pub fn aggregate(results: &[RunResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in results {
        let k = (r.dataset.clone(), r.scenario.clone(), r.config.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut metric_names: Vec<String> = Vec::new();
    for r in results {
        for (m, _) in &r.metrics {
            if !metric_names.contains(m) {
                metric_names.push(m.clone());
            }
        }
    }
    let mut header: Vec<String> = ["dataset", "scenario", "config", "runs"].map(String::from).to_vec();
    header.extend(metric_names.iter().cloned());
    header.push("train_s".into());
    header.push("test_s".into());
    let rows = keys
        .iter()
        .map(|k| {
            let group: Vec<&RunResult> = results
                .iter()
                .filter(|r| (&r.dataset, &r.scenario, &r.config) == (&k.0, &k.1, &k.2))
                .collect();
            let mean = |f: &dyn Fn(&RunResult) -> Option<f64>| {
                let v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    String::from("-")
                } else {
                    format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            let mut row = vec![k.0.clone(), k.1.clone(), k.2.clone(), group.len().to_string()];
            for m in &metric_names {
                row.push(mean(&|r| r.metrics.iter().find(|(n, _)| n == m).map(|(_, v)| *v)));
            }
            row.push(mean(&|r| Some(r.train_seconds)));
            row.push(mean(&|r| Some(r.test_seconds)));
            row
        })
        .collect();
    (header, rows)
}

pub fn render_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let quote = |s: &String| {
        if s.contains([',', '"']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.clone()
        }
    };
    let mut out = String::new();
    for line in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = line.iter().map(quote).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn render_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for line in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn report_command(args: &ReportArgs) -> Outcome<()> {
    let mut results = Vec::new();
    for path in &args.results {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
        let r: RunResult = serde_json::from_str(&text).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: not a result file: {e}", path.display()),
        })?;
        results.push(r);
    }
    let (header, rows) = aggregate(&results);
    let text = match args.format.as_str() {
        "csv" => render_csv(&header, &rows),
        "text" => render_text(&header, &rows),
        other => return Err(Failure::usage(format!("format must be text or csv, got `{other}`"))),
    };
    match &args.output {
        Some(p) => std::fs::write(p, text).map_err(Error::Io)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_command(args: &GenArgs) -> Outcome<()> {
    let mixture = Mixture::banana();
    let data = mixture.sample(args.n, args.seed)?;
    let text = if is_csv(&args.output) {
        let mut s = String::new();
        for i in 0..data.len() {
            let x = data.sample(i);
            let _ = writeln!(s, "{},{},{}", x[0], x[1], data.labels()[i]);
        }
        s
    } else {
        data.to_libsvm()
    };
    std::fs::write(&args.output, text).map_err(Error::Io)?;
    if args.bayes {
        println!("bayes_error: {:.4}", mixture.bayes_error(200_000, args.seed.wrapping_add(1))?);
    }
    Ok(())
}
