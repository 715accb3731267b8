use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use driftguard::metrics::curve_csv;
use driftguard::ocsvm::GridSelection;
use driftguard::{
    calibrate, evaluate, filter, fit, generate, load_model, load_monitor, read_features_as, save_model,
    save_monitor, write_features_as, Error, FeatureFormat, FeatureMatrix, FeatureSetMetadata, FilterLevel,
    FitOptions, GridChoice, Method, Normalization, SampleLabel, ScoreSet, ShiftScenario,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "driftguard", version, about = "Feature-space out-of-distribution monitor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scorer on ID monitor features and write the model file.
    Fit(FitArgs),
    /// Score every row of a feature file (CSV: index,score).
    Score(ScoreArgs),
    /// AUROC, AUPR and FPR95 of a model on labelled ID and OOD files.
    Eval(EvalArgs),
    /// Choose a decision threshold from ID calibration features.
    Calibrate(CalibrateArgs),
    /// Classify rows as ID or OOD with a calibrated monitor.
    Decide(DecideArgs),
    /// Keep the most ID-like fraction of a feature file.
    Filter(FilterArgs),
    /// Write a synthetic shift scenario as monitor/id/ood feature files.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Aps,
    Mfs,
    Ocsvm,
    Gmm,
    Nf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Aps => Method::Aps,
            MethodArg::Mfs => Method::Mfs,
            MethodArg::Ocsvm => Method::OcSvm,
            MethodArg::Gmm => Method::Gmm,
            MethodArg::Nf => Method::Flow,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    None,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Full,
    Minimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Vfmf,
    Csv,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Vfmf => FeatureFormat::Vfmf,
            FormatArg::Csv => FeatureFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    None,
    Low,
    Medium,
    High,
}

impl From<LevelArg> for FilterLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::None => FilterLevel::None,
            LevelArg::Low => FilterLevel::Low,
            LevelArg::Medium => FilterLevel::Medium,
            LevelArg::High => FilterLevel::High,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    /// Highest mean training decision value.
    MeanTrain,
    /// Held-out outlier fraction closest to ν.
    Holdout,
}

#[derive(Args)]
struct InputFormat {
    /// Encoding of every feature file read by this command.
    #[arg(long, value_enum, default_value = "vfmf")]
    format: FormatArg,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// ID monitor features.
    #[arg(long)]
    features: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to l2 for gmm and nf, none otherwise.
    #[arg(long, value_enum)]
    normalize: Option<NormalizeArg>,
    /// Inclusive range of GMM component counts, e.g. `1..10`.
    #[arg(long, value_parser = parse_k_grid)]
    k_grid: Option<KGrid>,
    /// Hyperparameter grid; defaults to full for ocsvm and minimal for nf.
    #[arg(long, value_enum)]
    grid: Option<GridArg>,
    #[arg(long, value_enum, default_value = "mean-train")]
    ocsvm_selection: SelectionArg,
    /// Also write the fit report here (it always goes to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    /// Write the ROC/PR curve as CSV here.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// ID calibration features.
    #[arg(long)]
    id: PathBuf,
    /// Optional OOD features, only used to report the calibration FPR.
    #[arg(long)]
    ood: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    target_tpr: f64,
    /// Monitor file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct DecideArgs {
    /// Monitor file written by `calibrate`.
    #[arg(long)]
    monitor: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    level: LevelArg,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    input: InputFormat,
}

#[derive(Args)]
struct SynthArgs {
    /// Named scenario: covariate-mild, covariate-strong, semantic or joint.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives monitor, id and ood files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "vfmf")]
    format: FormatArg,
}

#[derive(Clone)]
struct KGrid(Vec<usize>);

fn parse_k_grid(s: &str) -> Result<KGrid, String> {
    let bad = || format!("expected A..B with 1 ≤ A ≤ B, got {s:?}");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(KGrid((a..=b).collect()))
}

fn read(path: &Path, format: &InputFormat) -> driftguard::Result<FeatureMatrix> {
    Ok(read_features_as(path, format.format.into())?.0)
}

fn emit(out: Option<&Path>, text: &str) -> driftguard::Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn cmd_fit(a: FitArgs) -> driftguard::Result<()> {
    let method: Method = a.method.into();
    let train = read(&a.features, &a.input)?;
    let mut options = FitOptions {
        normalization: a.normalize.map(|n| match n {
            NormalizeArg::None => Normalization::None,
            NormalizeArg::L2 => Normalization::L2,
        }),
        grid: a.grid.map(|g| match g {
            GridArg::Full => GridChoice::Full,
            GridArg::Minimal => GridChoice::Minimal,
        }),
        seed: a.seed,
        ..FitOptions::default()
    };
    if let Some(k) = a.k_grid {
        options.k_grid = k.0;
    }
    if let SelectionArg::Holdout = a.ocsvm_selection {
        options.ocsvm_selection = GridSelection::HoldoutQuantile {
            fraction: 0.2,
            seed: a.seed,
        };
    }
    let start = Instant::now();
    let (model, diagnostics) = fit(method, &train, &options)?;
    let elapsed = start.elapsed().as_secs_f64();
    save_model(&model, &a.out)?;
    let report = json!({
        "method": method.name(),
        "elapsed_seconds": elapsed,
        "n_train": train.n(),
        "dimension": train.d(),
        "normalization": model.normalization,
        "seed": a.seed,
        "model": a.out,
        "diagnostics": diagnostics,
    });
    let text = to_json(&report);
    if let Some(p) = &a.report {
        emit(Some(p), &text)?;
    }
    emit(None, &text)
}

fn cmd_score(a: ScoreArgs) -> driftguard::Result<()> {
    let model = load_model(&a.model)?;
    let x = read(&a.features, &a.input)?;
    let scores = model.score(&x)?;
    let mut out = String::from("index,score\n");
    for (i, s) in scores.scores().iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_eval(a: EvalArgs) -> driftguard::Result<()> {
    let model = load_model(&a.model)?;
    let id = model.score(&read(&a.id, &a.input)?)?;
    let ood = model.score(&read(&a.ood, &a.input)?)?;
    let set = ScoreSet::from_id_ood(id.scores(), ood.scores(), id.orientation())?;
    let report = evaluate(&set, a.curve.is_some())?;
    if let (Some(path), Some(points)) = (&a.curve, &report.curve_points) {
        emit(Some(path), &curve_csv(points))?;
    }
    let mut value = serde_json::to_value(&report).expect("report serializes");
    if let Some(obj) = value.as_object_mut() {
        obj.remove("curve_points");
        obj.insert("method".into(), json!(model.method().name()));
    }
    emit(a.out.as_deref(), &to_json(&value))
}

fn cmd_calibrate(a: CalibrateArgs) -> driftguard::Result<()> {
    let model = load_model(&a.model)?;
    let id = read(&a.id, &a.input)?;
    let ood = a.ood.as_deref().map(|p| read(p, &a.input)).transpose()?;
    let monitor = calibrate(model, &id, ood.as_ref(), a.target_tpr)?;
    save_monitor(&monitor, &a.out, &relative_model_path(&a.out, &a.model))?;
    emit(
        None,
        &to_json(&json!({
            "monitor": a.out,
            "threshold": monitor.threshold.is_finite().then_some(monitor.threshold),
            "calibration": monitor.calibration,
        })),
    )
}

/// The monitor file stores the model path relative to its own directory
/// when both are given relative to the working directory.
fn relative_model_path(monitor: &Path, model: &Path) -> PathBuf {
    if model.is_absolute() {
        return model.to_path_buf();
    }
    let model_abs = std::env::current_dir().map(|c| c.join(model)).unwrap_or_else(|_| model.to_path_buf());
    let dir = monitor.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    match fs::canonicalize(dir) {
        Ok(dir) => model_abs
            .canonicalize()
            .ok()
            .and_then(|m| m.strip_prefix(&dir).ok().map(Path::to_path_buf))
            .unwrap_or(model_abs),
        Err(_) => model_abs,
    }
}

fn cmd_decide(a: DecideArgs) -> driftguard::Result<()> {
    let monitor = load_monitor(&a.monitor)?;
    let x = read(&a.features, &a.input)?;
    let scores = monitor.scorer.score(&x)?;
    let labels = monitor.decide_scores(&scores);
    let mut out = String::from("index,score,label\n");
    for (i, (s, l)) in scores.scores().iter().zip(&labels).enumerate() {
        let l = match l {
            SampleLabel::Id => "id",
            SampleLabel::Ood => "ood",
        };
        out.push_str(&format!("{i},{s},{l}\n"));
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_filter(a: FilterArgs) -> driftguard::Result<()> {
    let model = load_model(&a.model)?;
    let x = read(&a.features, &a.input)?;
    let scores = model.score(&x)?;
    let level: FilterLevel = a.level.into();
    let kept = filter(&scores, level);
    let mean = if kept.is_empty() {
        None
    } else {
        Some(kept.iter().map(|&i| scores.scores()[i]).sum::<f64>() / kept.len() as f64)
    };
    let report = json!({
        "level": level.name(),
        "retention": level.retention(),
        "n_input": scores.len(),
        "count": kept.len(),
        "mean_score": mean,
        "indices": kept,
    });
    emit(a.out.as_deref(), &to_json(&report))
}

fn cmd_synth(a: SynthArgs) -> driftguard::Result<()> {
    let mut scenario = match (&a.preset, &a.scenario) {
        (Some(name), _) => ShiftScenario::preset(name, a.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            ShiftScenario::from_json(&text)?
        }
        (None, None) => unreachable!("clap requires --preset or --scenario"),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let data = generate(&scenario)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let ext = match a.format {
        FormatArg::Vfmf => "vfmf",
        FormatArg::Csv => "csv",
    };
    let source = a.preset.clone().unwrap_or_else(|| "scenario".into());
    let mut files = Vec::new();
    for (name, m) in [("monitor", &data.monitor), ("id", &data.id), ("ood", &data.ood)] {
        let path = a.out.join(format!("{name}.{ext}"));
        let meta = FeatureSetMetadata {
            source: format!("synth:{source}:seed={}", scenario.seed),
            ..FeatureSetMetadata::for_matrix(name, m)
        };
        write_features_as(m, &meta, &path, a.format.into())?;
        files.push(json!({ "role": name, "path": path, "n": m.n(), "dimension": m.d() }));
    }
    let scenario_path = a.out.join("scenario.json");
    emit(Some(&scenario_path), &to_json(&scenario))?;
    emit(None, &to_json(&json!({ "scenario": scenario_path, "files": files })))
}

fn configure_threads() {
    if let Some(n) = std::env::var("DRIFTGUARD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("DRIFTGUARD_THREADS ignored: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Decide(a) => cmd_decide(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{payload}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
