//! The `faceprobe` command line. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use faceprobe::aam::synthesize_modes;
use faceprobe::dataset::{load_manifest, DatasetRecord, EyePair, Point};
use faceprobe::pipeline::{
    benchmark_all, benchmark_head, evaluate, generate_synthetic_corpus, load_any_landmarks, load_models,
    load_samples, predict_all, save_models, train_age_cascade, train_task, AgeCascade, AttributeReport, Bundle,
    CorpusSpec, EvalTarget, Extractor, ExtractorKind, FaceInput, HeadResult, ModelSet, Preset, Task,
    TimingSummary,
};
use faceprobe::{Error, ImageMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Multiples of the mode standard deviation rendered by `inspect-aam`.
const MODE_MULTIPLES: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

#[derive(Debug, Parser)]
#[command(
    name = "faceprobe",
    version,
    about = "Gender, age, expression and ethnicity classification of face images"
)]
struct Cli {
    /// Report progress on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic annotated corpus with train and test manifests.
    Synth(SynthArgs),
    /// Train one head (or the gender-routed age cascade) and save it.
    Train(TrainArgs),
    /// Classify one image with a bundle holding all four attributes.
    Predict(PredictArgs),
    /// Score a head on a labelled manifest and write a CSV report.
    Evaluate(EvaluateArgs),
    /// Time every head on a manifest: first image, first ten, all.
    Benchmark(BenchmarkArgs),
    /// Render the appearance variation of one AAM mode.
    InspectAam(InspectArgs),
    /// Combine bundles; later files replace heads of the same task.
    Merge(MergeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus description (TOML); defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// gender, age, age-cascade, age-male, age-female, expression or ethnicity.
    #[arg(long, value_parser = parse_train_target)]
    task: TrainTarget,
    /// aam, gabor, lbp or wd.
    #[arg(long, value_parser = parse_extractor)]
    extractor: ExtractorKind,
    /// Named defaults; see the README. Chosen from the task when omitted.
    #[arg(long)]
    preset: Option<String>,
    /// Hidden units.
    #[arg(long, value_parser = parse_positive_count)]
    hidden: Option<usize>,
    /// Gradient-descent iterations.
    #[arg(long, value_parser = parse_positive_count)]
    iters: Option<usize>,
    /// Learning rate.
    #[arg(long, value_parser = parse_positive_real)]
    lr: Option<f64>,
    /// Seeds the network initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Eye centres in pixels: x1,y1,x2,y2, the eye on the image left first.
    #[arg(long, value_parser = parse_eyes)]
    eyes: Option<EyePair>,
    /// Points file, needed by AAM heads.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Emit one JSON object instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Head to score; needed when the bundle holds several. `age-cascade`
    /// routes ages through the gender head.
    #[arg(long, value_parser = parse_train_target)]
    task: Option<TrainTarget>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    models: PathBuf,
    /// Mode number, 1 being the mode of largest variance.
    #[arg(long, value_parser = parse_positive_count)]
    mode: usize,
    #[arg(long)]
    out: PathBuf,
    /// AAM head to inspect; the first one in the bundle by default.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

/// A single head, or the gender head plus both gendered age heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrainTarget {
    Head(Task),
    AgeCascade,
}

const AGE_CASCADE: &str = "age-cascade";

impl FromStr for TrainTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == AGE_CASCADE {
            return Ok(TrainTarget::AgeCascade);
        }
        s.parse::<Task>().map(TrainTarget::Head).map_err(|_| {
            let mut allowed: Vec<&str> = Task::ALL.iter().map(|t| t.token()).collect();
            allowed.insert(2, AGE_CASCADE);
            format!("unknown task `{s}` (allowed: {})", allowed.join(", "))
        })
    }
}

fn parse_train_target(s: &str) -> Result<TrainTarget, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_positive_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn parse_positive_real(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn parse_eyes(s: &str) -> Result<EyePair, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected x1,y1,x2,y2, got `{s}`"))?;
    match v[..] {
        [x1, y1, x2, y2] if v.iter().all(|x| x.is_finite()) => Ok(EyePair {
            left: Point { x: x1, y: y1 },
            right: Point { x: x2, y: y2 },
        }),
        _ => Err(format!("expected four numbers x1,y1,x2,y2, got `{s}`")),
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(Error::UnknownToken { .. } | Error::Parameter(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    verbose: bool,
}

impl Ctx<'_> {
    fn progress(&mut self, msg: impl AsRef<str>) {
        if self.verbose {
            let _ = writeln!(self.err, "{}", msg.as_ref());
        }
    }

    fn print(&mut self, text: impl AsRef<str>) {
        let _ = write!(self.out, "{}", text.as_ref());
    }
}

/// Runs the command line against the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the command line with explicit output streams. Failures produce a
/// single diagnostic line on `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let rendered = e.render().to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let _ = writeln!(err, "faceprobe: {line}");
            return EXIT_USAGE;
        }
    };
    let mut ctx = Ctx {
        out,
        err,
        verbose: cli.verbose,
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a, &mut ctx),
        Command::Train(a) => train(a, &mut ctx),
        Command::Predict(a) => predict(a, &mut ctx),
        Command::Evaluate(a) => evaluate_cmd(a, &mut ctx),
        Command::Benchmark(a) => benchmark(a, &mut ctx),
        Command::InspectAam(a) => inspect_aam(a, &mut ctx),
        Command::Merge(a) => merge(a, &mut ctx),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.message().replace('\n', " ");
            let _ = writeln!(ctx.err, "faceprobe: {msg}");
            e.exit_code()
        }
    }
}

fn synth(a: &SynthArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = match &a.spec {
        Some(p) => CorpusSpec::load(p)?,
        None => CorpusSpec::default(),
    };
    ctx.progress(format!("rendering {} + {} faces", spec.train, spec.test));
    let corpus = generate_synthetic_corpus(&spec, a.seed, &a.out)?;
    ctx.print(format!(
        "wrote {} training and {} test images to {}\ntrain manifest: {}\ntest manifest: {}\n",
        corpus.train.len(),
        corpus.test.len(),
        a.out.display(),
        corpus.train_manifest.display(),
        corpus.test_manifest.display()
    ));
    Ok(())
}

fn default_preset(target: TrainTarget) -> &'static str {
    match target {
        TrainTarget::Head(Task::Gender) => "gender-fgnet",
        TrainTarget::Head(Task::Expression) => "expression",
        TrainTarget::Head(Task::Ethnicity) => "ethnicity",
        _ => "age",
    }
}

fn train(a: &TrainArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let preset = Preset::find(a.preset.as_deref().unwrap_or(default_preset(a.task)))?;
    let mut cfg = preset.config(a.extractor, a.seed);
    if let Some(h) = a.hidden {
        cfg.train.n_hidden = h;
    }
    if let Some(n) = a.iters {
        cfg.train.n_iterations = n;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    let records = load_manifest(&a.manifest)?;
    ctx.progress(format!("loading {} images", records.len()));
    let samples = load_samples(&records)?;
    ctx.progress(format!(
        "training with preset {} ({} hidden, {} iterations, learning rate {})",
        preset.name, cfg.train.n_hidden, cfg.train.n_iterations, cfg.train.learning_rate
    ));
    let start = Instant::now();
    let models = match a.task {
        TrainTarget::Head(task) => vec![train_task(&samples, task, &cfg)?],
        TrainTarget::AgeCascade => {
            let c = train_age_cascade(&samples, &cfg, &cfg)?;
            vec![c.gender, c.male, c.female]
        }
    };
    let mut text = String::new();
    for m in &models {
        let s = &m.summary;
        let _ = writeln!(
            text,
            "{} ({}): {} images, {} inputs, mse {:.5} -> {:.5} after {} iterations",
            m.task,
            m.extractor.kind(),
            s.samples,
            s.input_dims,
            s.initial_mse,
            s.final_mse,
            s.iterations
        );
    }
    save_models(&a.out, &Bundle::new(models))?;
    let _ = writeln!(
        text,
        "trained in {:.1} s; saved to {}",
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    ctx.print(text);
    Ok(())
}

fn head_json(h: &HeadResult) -> serde_json::Value {
    serde_json::json!(h.scores)
}

/// The `predict --json` object.
pub fn report_json(r: &AttributeReport) -> serde_json::Value {
    serde_json::json!({
        "gender": r.gender.label,
        "age_range": r.age_range.label,
        "expression": r.expression.label,
        "ethnicity": r.ethnicity.label,
        "scores": {
            "gender": head_json(&r.gender),
            "age_range": head_json(&r.age_range),
            "expression": head_json(&r.expression),
            "ethnicity": head_json(&r.ethnicity),
        },
        "timings_ms": {
            "feature_extraction": r.timings.feature_extraction,
            "projection": r.timings.projection,
            "classification": r.timings.classification,
            "total": r.timings.total,
        },
    })
}

fn report_text(r: &AttributeReport) -> String {
    let mut out = String::new();
    let mut row = |name: &str, h: &HeadResult| {
        let scores: Vec<String> = h.scores.iter().map(|s| format!("{s:.3}")).collect();
        let _ = writeln!(out, "{name:<11} {:<10} [{}]", h.label, scores.join(", "));
    };
    row("gender", &r.gender);
    row("age range", &r.age_range);
    row("expression", &r.expression);
    row("ethnicity", &r.ethnicity);
    let t = r.timings;
    let _ = writeln!(
        out,
        "time        {:.2} ms (features {:.2}, projection {:.2}, classification {:.2}; age head {})",
        t.total, t.feature_extraction, t.projection, t.classification, r.age_head
    );
    out
}

fn predict(a: &PredictArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = load_models(&a.models)?;
    let set = ModelSet::from_bundle(&bundle)?;
    let face = FaceInput {
        name: a.image.display().to_string(),
        image: ImageMatrix::load(&a.image)?,
        eyes: a.eyes,
        landmarks: a.landmarks.as_deref().map(load_any_landmarks).transpose()?,
    };
    let report = predict_all(&face, &set)?;
    if a.json {
        ctx.print(format!("{}\n", report_json(&report)));
    } else {
        ctx.print(report_text(&report));
    }
    Ok(())
}

fn cascade_from(bundle: &Bundle) -> Result<AgeCascade, CliError> {
    let get = |t: Task| {
        bundle
            .get(t)
            .cloned()
            .ok_or_else(|| CliError::Core(Error::MissingHead(format!("the age cascade needs a {t} head"))))
    };
    Ok(AgeCascade {
        gender: get(Task::Gender)?,
        male: get(Task::AgeMale)?,
        female: get(Task::AgeFemale)?,
    })
}

/// The evaluation target implied by a bundle when none is named.
fn implied_target(bundle: &Bundle) -> Result<TrainTarget, CliError> {
    let tasks = bundle.tasks();
    match tasks[..] {
        [t] => Ok(TrainTarget::Head(t)),
        [Task::Gender, Task::AgeMale, Task::AgeFemale] => Ok(TrainTarget::AgeCascade),
        _ => {
            let names: Vec<&str> = tasks.iter().map(|t| t.token()).collect();
            Err(CliError::Usage(format!(
                "the bundle holds several heads ({}); choose one with --task",
                names.join(", ")
            )))
        }
    }
}

fn evaluate_cmd(a: &EvaluateArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = load_models(&a.models)?;
    let target = match a.task {
        Some(t) => t,
        None => implied_target(&bundle)?,
    };
    let label_task = match target {
        TrainTarget::Head(t) => t,
        TrainTarget::AgeCascade => Task::Age,
    };
    let records = load_manifest(&a.manifest)?;
    let mut kept: Vec<DatasetRecord> = Vec::with_capacity(records.len());
    for r in records {
        let in_partition = match label_task.gender_partition() {
            Some(g) => r.gender == Some(g),
            None => true,
        };
        if in_partition && label_task.class_of(&r)?.is_some() {
            kept.push(r);
        }
    }
    if kept.is_empty() {
        return Err(Error::MissingInput(format!("no records in the manifest carry a {label_task} label")).into());
    }
    ctx.progress(format!("scoring {} images", kept.len()));
    let samples = load_samples(&kept)?;
    let result = match target {
        TrainTarget::Head(t) => {
            let model = bundle.get(t).ok_or_else(|| {
                Error::TaskMismatch {
                    expected: t.to_string(),
                    found: bundle.tasks().iter().map(|t| t.token()).collect::<Vec<_>>().join(", "),
                }
            })?;
            evaluate(&samples, EvalTarget::Single(model))?
        }
        TrainTarget::AgeCascade => evaluate(&samples, EvalTarget::Cascade(&cascade_from(&bundle)?))?,
    };
    std::fs::write(&a.report, result.to_csv()).map_err(|e| Error::io(&a.report, e))?;
    ctx.print(result.to_text());
    ctx.print(format!("report written to {}\n", a.report.display()));
    Ok(())
}

fn timing_row(out: &mut String, name: &str, extractor: &str, t: &TimingSummary) {
    let _ = writeln!(
        out,
        "{name:<16} {extractor:<10} {:>12.3} {:>12.3} {:>14.3} {:>10.3}",
        t.first_1_ms, t.first_10_ms, t.all_ms, t.mean_ms
    );
}

/// One row per head, plus the all-attributes path when the bundle has all
/// four.
pub fn benchmark_table(bundle: &Bundle, faces: &[FaceInput]) -> faceprobe::Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<10} {:>12} {:>12} {:>14} {:>10}",
        "head",
        "extractor",
        "1 img (ms)",
        format!("{} img (ms)", 10.min(faces.len())),
        format!("all {} (ms)", faces.len()),
        "mean (ms)"
    );
    if let Ok(set) = ModelSet::from_bundle(bundle) {
        let t = benchmark_all(faces, &set)?;
        let mut kinds: Vec<&str> = bundle.models().iter().map(|m| m.extractor.kind().token()).collect();
        kinds.sort_unstable();
        kinds.dedup();
        timing_row(&mut out, "all attributes", &kinds.join("+"), &t);
    }
    for m in bundle.models() {
        let t = benchmark_head(faces, m)?;
        timing_row(&mut out, m.task.token(), m.extractor.kind().token(), &t);
    }
    Ok(out)
}

fn benchmark(a: &BenchmarkArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = load_models(&a.models)?;
    if bundle.is_empty() {
        return Err(Error::MissingHead("the bundle holds no heads".into()).into());
    }
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::MissingInput("the manifest lists no images".into()).into());
    }
    let faces: Vec<FaceInput> = load_samples(&records)?.into_iter().map(|s| s.face).collect();
    ctx.progress(format!("timing {} heads on {} images", bundle.models().len(), faces.len()));
    ctx.print(benchmark_table(&bundle, &faces)?);
    Ok(())
}

fn inspect_aam(a: &InspectArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let bundle = load_models(&a.models)?;
    let head = match a.task {
        Some(t) => bundle.get(t),
        None => bundle.models().iter().find(|m| matches!(m.extractor, Extractor::Aam(_))),
    };
    let (task, model) = match head.map(|m| (m.task, &m.extractor)) {
        Some((task, Extractor::Aam(model))) => (task, model),
        _ => return Err(Error::MissingHead("no AAM head in the bundle".into()).into()),
    };
    let renders = synthesize_modes(model, a.mode - 1, &MODE_MULTIPLES)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let eigen = model.eigenvalues();
    let total: f64 = eigen.iter().sum();
    let lambda = eigen[a.mode - 1];
    let mut text = format!(
        "{task} mode {}: eigenvalue {:.6e} ({:.2}% of the retained variance)\n",
        a.mode,
        lambda,
        100.0 * lambda / total
    );
    for r in &renders {
        let path = a.out.join(mode_file_name(task, a.mode, r.multiple));
        r.image.save(&path)?;
        let _ = writeln!(text, "{:+} sd: {}", r.multiple, path.display());
    }
    ctx.print(text);
    Ok(())
}

fn mode_file_name(task: Task, mode: usize, multiple: f64) -> String {
    format!("{}-mode{mode}-{:+}sd.png", task.token(), multiple)
}

fn merge(a: &MergeArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut bundle = Bundle::default();
    for path in &a.inputs {
        for m in load_models(path)?.models() {
            bundle.insert(m.clone());
        }
    }
    save_models(&a.out, &bundle)?;
    let names: Vec<&str> = bundle.tasks().iter().map(|t| t.token()).collect();
    ctx.print(format!("{}: {}\n", a.out.display(), names.join(", ")));
    Ok(())
}
