use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use callipaint::corpus::{
    build_manifest, compose_condition_image, load_dataset, CorpusSpec, LabeledGlyph, Manifest, MaskSpec, Split, MANIFEST_FILE,
};
use callipaint::denoiser::{init_params, load_checkpoint, save_checkpoint, Checkpoint, DenoiserConfig, TrainConfig};
use callipaint::diffusion::{sample, ScheduleId, TraceOptions};
use callipaint::eval::{
    compare_inpaint_vs_generate, eval_inpainting, load_key, make_survey, parse_responses, save_key, score_survey,
    train_classifier, write_bundle, Classifier, ClassifierTrainConfig, EvalConfig, PoolImage,
};
use callipaint::image::{GlyphImage, Mask};
use callipaint::repaint::{export_trace, inpaint, InpaintConfig};
use callipaint_service::{ServiceConfig, DEFAULT_BIND, DEFAULT_MAX_PENDING, DEFAULT_WORKERS};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Chinese-calligraphy glyph generation and mask-conditioned inpainting with
/// a denoising diffusion model.
///
/// Exit status: 0 on success, 1 on invalid usage, 2 when the operation fails.
#[derive(Parser)]
#[command(name = "callipaint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labelled glyph corpus from fonts.
    ///
    /// Writes `<out>/<script>/<style>/<character>.png` (grayscale, 255 =
    /// paper) and `<out>/manifest.jsonl`: a header line with the three
    /// vocabularies and the resolution, then one
    /// `{"path", "character", "script", "style", "split"}` object per image.
    /// Whole (character, font) pairs are held out for validation.
    RenderCorpus(RenderCorpusArgs),
    /// Train (or resume training) the conditional denoiser.
    ///
    /// The checkpoint is a binary container holding the network config, the
    /// vocabularies, the noise schedule, the step count and the weights.
    Train(TrainArgs),
    /// Generate one glyph from pure noise.
    Sample(SampleArgs),
    /// Fill the masked region of an image, keeping every other pixel.
    ///
    /// The mask is a grayscale PNG of the image's size: nonzero pixels are
    /// regenerated, zero pixels are copied from the input unchanged.
    Inpaint(InpaintArgs),
    /// Paste the masked part of a patch image onto a base image.
    ///
    /// Output pixel = patch where the mask is nonzero, base elsewhere. Use
    /// the result with a mask of the region to blend as `inpaint --image`.
    Compose(ComposeArgs),
    /// Train the script/character classifier used by `eval` and `compare`.
    TrainClassifier(TrainClassifierArgs),
    /// Inpaint masked validation glyphs and tabulate classifier accuracy.
    ///
    /// Prints a per-script table (script accuracy, character accuracy,
    /// sample count) with a sample-weighted total, and writes the same
    /// report as JSON.
    Eval(EvalArgs),
    /// Compare classifier accuracy of inpainted against freshly sampled
    /// glyphs under identical conditions.
    Compare(CompareArgs),
    /// Build a human-evaluation survey from real and generated images.
    ///
    /// Each question shows `k` options. Type-1 questions have one real
    /// image among generated ones ("find the genuine"), type-2 the reverse.
    /// Writes `<out>/qNNN/<letter>.png` and `<out>/questions.json` without
    /// answers, plus a separate answer key.
    SurveyMake(SurveyMakeArgs),
    /// Score survey responses against an answer key.
    ///
    /// Responses are CSV lines `question_id,choice[,respondent[,group]]`
    /// where `choice` is an option letter (A, B, ...) or a zero-based index.
    /// An optional header line starting with `question_id` is skipped.
    /// Prints per-type accuracy with two-sided exact binomial p-values
    /// against chance 1/k.
    SurveyScore(SurveyScoreArgs),
    /// Serve sampling and inpainting over HTTP/JSON.
    ///
    /// Endpoints: GET /api/v1/health, GET /api/v1/conditions,
    /// POST /api/v1/sample, POST /api/v1/inpaint (base64 PNG images).
    Serve(ServeArgs),
}

#[derive(Args)]
struct Condition {
    /// Character to write, e.g. 永.
    #[arg(long)]
    character: String,
    /// Script name from the checkpoint vocabulary (regular, semi-cursive, cursive, ...).
    #[arg(long)]
    script: String,
    /// Style name from the checkpoint vocabulary.
    #[arg(long)]
    style: String,
}

#[derive(Args)]
struct Trace {
    /// Write intermediate states as PNGs plus plan.json into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Keep every n-th intermediate state in the trace.
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
}

impl Trace {
    fn options(&self) -> TraceOptions {
        match self.trace_dir {
            Some(_) => TraceOptions::every(self.trace_every.max(1)),
            None => TraceOptions::NONE,
        }
    }
}

#[derive(Args)]
struct RenderCorpusArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Use the first n builtin characters with every builtin font.
    #[arg(long, default_value_t = 20)]
    chars: usize,
    /// JSON corpus spec: `{"groups": [{"characters": [...], "fonts":
    /// [{"font": "<path>|builtin:<id>", "script", "style"}]}],
    /// "resolution": [h, w], "val_fraction", "seed"}`. Overrides --chars.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Fraction of (character, font) pairs held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Base width 32, three resolution levels.
    Default,
    /// Base width 16; trains in about an hour on one CPU core.
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus manifest (file or directory containing manifest.jsonl).
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Diffusion steps T (fresh networks only).
    #[arg(long, default_value_t = ScheduleId::DEFAULT.steps)]
    timesteps: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    condition: Condition,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    trace: Trace,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grayscale PNG at the checkpoint's resolution.
    #[arg(long)]
    image: PathBuf,
    /// Grayscale PNG; nonzero = regenerate.
    #[arg(long)]
    mask: PathBuf,
    #[command(flatten)]
    condition: Condition,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Resampling block length j; must divide T.
    #[arg(long, default_value_t = 10)]
    jump_len: usize,
    /// Passes per block r.
    #[arg(long, default_value_t = 5)]
    n_resample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    trace: Trace,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    patch: PathBuf,
    /// Grayscale PNG; nonzero = take the patch pixel.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Train on the gold images only, without geometric or stroke augmentation.
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerationInputs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    /// Corpus manifest; its validation split is evaluated.
    #[arg(long)]
    corpus: PathBuf,
    /// Mask coverage window `min[,max]` as fractions of the image. `0`
    /// alone means no mask at all, which reproduces gold accuracy.
    #[arg(long, default_value = "0.25,0.5")]
    coverage: String,
    #[arg(long, default_value_t = 10)]
    jump_len: usize,
    #[arg(long, default_value_t = 5)]
    n_resample: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GenerationInputs {
    fn config(&self) -> Result<EvalConfig> {
        let mask = parse_coverage(&self.coverage)?;
        Ok(EvalConfig {
            jump_len: self.jump_len,
            n_resample: self.n_resample,
            batch: self.batch,
            ..EvalConfig::new(mask, self.seed)
        })
    }

    fn load(&self) -> Result<(Checkpoint, Classifier, Vec<LabeledGlyph>)> {
        let ckpt = load_checkpoint(&self.checkpoint)?;
        let classifier = Classifier::load(&self.classifier)?;
        let val = load_dataset(&load_manifest(&self.corpus)?, Split::Val, None)?;
        Ok((ckpt, classifier, val))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: GenerationInputs,
    /// Masked draws per validation glyph.
    #[arg(long, default_value_t = 1)]
    samples_per_item: usize,
    /// JSON report path.
    #[arg(long, default_value = "eval.json")]
    json: PathBuf,
    /// Also write the text table here.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: GenerationInputs,
    /// Images per arm.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Also write the comparison as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SurveyMakeArgs {
    /// Directory of real glyph PNGs; file stems become image ids.
    #[arg(long)]
    real: PathBuf,
    /// Directory of generated glyph PNGs.
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_per_type: usize,
    /// Options per question.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Bundle directory shown to respondents.
    #[arg(long)]
    out: PathBuf,
    /// Answer key path (JSON); keep it away from respondents.
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SurveyScoreArgs {
    #[arg(long)]
    key: PathBuf,
    /// Responses CSV.
    #[arg(long)]
    responses: PathBuf,
    /// Also write the scores as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = callipaint_service::ENV_CHECKPOINT)]
    checkpoint: PathBuf,
    #[arg(long, env = callipaint_service::ENV_BIND, default_value = DEFAULT_BIND)]
    bind: std::net::SocketAddr,
    /// Generations running at once.
    #[arg(long, env = callipaint_service::ENV_WORKERS, default_value_t = DEFAULT_WORKERS)]
    workers: usize,
    /// Requests allowed to wait for a worker before 429.
    #[arg(long, env = callipaint_service::ENV_MAX_PENDING, default_value_t = DEFAULT_MAX_PENDING)]
    max_pending: usize,
}

fn parse_coverage(s: &str) -> Result<MaskSpec> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("coverage {s:?} is not `min[,max]`"))?;
    match parts[..] {
        [c] if c == 0.0 => Ok(MaskSpec::EMPTY),
        [min] => Ok(MaskSpec::EVAL.with_coverage(min, 1.0)),
        [min, max] => Ok(MaskSpec::EVAL.with_coverage(min, max)),
        _ => bail!("coverage {s:?} is not `min[,max]`"),
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(Manifest::load(file)?)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_pool(dir: &Path) -> Result<Vec<PoolImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(PoolImage {
                id,
                image: GlyphImage::load_png(p)?,
            })
        })
        .collect()
}

fn render_corpus(args: RenderCorpusArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => CorpusSpec::builtin(args.chars, args.val_fraction, args.seed),
    };
    let manifest = build_manifest(&spec, &args.out)?;
    println!(
        "{} images ({} train, {} val) in {}",
        manifest.entries.len(),
        manifest.len_split(Split::Train),
        manifest.len_split(Split::Val),
        args.out.display()
    );
    Ok(())
}

fn train_denoiser(args: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.corpus)?;
    let data = load_dataset(&manifest, Split::Train, None)?;
    let start = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.vocab != manifest.vocab {
                bail!("{} was trained on different vocabularies", path.display());
            }
            ckpt
        }
        None => {
            let mut config = match args.preset {
                Preset::Default => DenoiserConfig::for_vocab(&manifest.vocab),
                Preset::Desk => DenoiserConfig::desk(&manifest.vocab),
            };
            config.resolution = manifest.resolution;
            config.timesteps = args.timesteps;
            let schedule = ScheduleId {
                steps: args.timesteps,
                ..ScheduleId::DEFAULT
            };
            Checkpoint::fresh(init_params(&config, args.seed)?, manifest.vocab.clone(), schedule)?
        }
    };
    let config = TrainConfig {
        lr: args.lr,
        batch: args.batch,
        steps: args.steps,
        seed: args.seed,
        log_every: args.log_every,
    };
    let outcome = callipaint::denoiser::train(start, &data, &config, |step, loss| println!("step {step:>7}  loss {loss:.5}"))?;
    save_checkpoint(&outcome.checkpoint, &args.out)?;
    println!("saved step {} to {}", outcome.checkpoint.step, args.out.display());
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let c = &args.condition;
    let cond = ckpt.vocab.resolve(&c.character, &c.script, &c.style)?;
    let schedule = ckpt.schedule.build()?;
    let (image, trace) = sample(&ckpt.params, &cond, &schedule, args.seed, args.trace.options())?;
    image.save_png(&args.out)?;
    if let Some(dir) = &args.trace.trace_dir {
        let plan = callipaint::repaint::build_time_plan(schedule.steps(), schedule.steps(), 1)?;
        export_trace(&trace, &plan, dir)?;
    }
    println!(
        "{} steps in {} ms, seed {}",
        trace.denoise_steps(),
        trace.elapsed_ms,
        args.seed
    );
    Ok(())
}

fn run_inpaint(args: InpaintArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let c = &args.condition;
    let cond = ckpt.vocab.resolve(&c.character, &c.script, &c.style)?;
    let image = GlyphImage::load_png(&args.image)?;
    let mask = Mask::load_png(&args.mask)?;
    let config = InpaintConfig {
        jump_len: args.jump_len,
        n_resample: args.n_resample,
        schedule: ckpt.schedule,
        trace: args.trace.options(),
        ..InpaintConfig::new(args.seed)
    };
    let (out, trace) = inpaint(&ckpt.params, &image.to_model(), &mask, &cond, &config)?;
    // Unmasked pixels are copied exactly, so re-encoding from the input
    // bytes keeps them byte-identical.
    let bytes: Vec<u8> = image
        .to_bytes()
        .iter()
        .zip(out.to_bytes())
        .zip(mask.bits())
        .map(|((&keep, new), &m)| if m == 0 { keep } else { new })
        .collect();
    let (h, w) = image.resolution();
    GlyphImage::from_bytes(h, w, &bytes)?.save_png(&args.out)?;
    if let Some(dir) = &args.trace.trace_dir {
        export_trace(&trace, &config.plan()?, dir)?;
    }
    println!(
        "{} denoising steps, {} jumps, {} ms, seed {}",
        trace.denoise_steps(),
        trace.jumps,
        trace.elapsed_ms,
        args.seed
    );
    Ok(())
}

fn run_compose(args: ComposeArgs) -> Result<()> {
    let base = GlyphImage::load_png(&args.base)?;
    let patch = GlyphImage::load_png(&args.patch)?;
    let mask = Mask::load_png(&args.mask)?;
    compose_condition_image(&base, &patch, &mask)?.save_png(&args.out)?;
    Ok(())
}

fn run_train_classifier(args: TrainClassifierArgs) -> Result<()> {
    let manifest = load_manifest(&args.corpus)?;
    let train = load_dataset(&manifest, Split::Train, None)?;
    let val = load_dataset(&manifest, Split::Val, None)?;
    let mut config = ClassifierTrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch: args.batch,
        seed: args.seed,
        ..ClassifierTrainConfig::default()
    };
    if args.no_augment {
        config.max_shift = 0;
        config.max_scale = 0.0;
        config.max_rotation = 0.0;
        config.stroke_jitter = false;
    }
    let classifier = train_classifier(&train, &val, &manifest.vocab, &config)?;
    classifier.save(&args.out)?;
    let meta = classifier.meta();
    match meta.val_accuracy {
        Some(acc) => println!(
            "final loss {:.4}; val script accuracy {:.3}, character accuracy {:.3} ({} images)",
            meta.final_loss,
            acc.script,
            acc.character,
            val.len()
        ),
        None => println!("final loss {:.4}; no validation split", meta.final_loss),
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let config = args.inputs.config()?;
    let (ckpt, classifier, val) = args.inputs.load()?;
    let report = eval_inpainting(&ckpt, &classifier, &val, args.samples_per_item, &config)?;
    let table = report.to_table();
    print!("{table}");
    report.save_json(&args.json)?;
    if let Some(path) = &args.text {
        write_file(path, &table)?;
    }
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let config = args.inputs.config()?;
    let (ckpt, classifier, val) = args.inputs.load()?;
    let comparison = compare_inpaint_vs_generate(&ckpt, &classifier, &val, args.n, &config)?;
    println!("{}", comparison.summary());
    if let Some(path) = &args.json {
        write_file(path, serde_json::to_vec_pretty(&comparison)?)?;
    }
    Ok(())
}

fn run_survey_make(args: SurveyMakeArgs) -> Result<()> {
    let real = load_pool(&args.real)?;
    let generated = load_pool(&args.generated)?;
    let (bundle, key) = make_survey(&real, &generated, args.n_per_type, args.k, args.seed)?;
    write_bundle(&bundle, &args.out)?;
    save_key(&key, &args.key)?;
    println!(
        "{} questions with {} options in {}",
        bundle.questions.len(),
        bundle.k,
        args.out.display()
    );
    Ok(())
}

fn run_survey_score(args: SurveyScoreArgs) -> Result<()> {
    let key = load_key(&args.key)?;
    let text = std::fs::read_to_string(&args.responses).with_context(|| format!("reading {}", args.responses.display()))?;
    let score = score_survey(&key, &parse_responses(&text)?)?;
    print!("{}", score.to_table());
    if let Some(path) = &args.json {
        write_file(path, serde_json::to_vec_pretty(&score)?)?;
    }
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        bind: args.bind,
        workers: args.workers,
        max_pending: args.max_pending,
        ..ServiceConfig::new(args.checkpoint)
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(callipaint_service::serve(config))?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::RenderCorpus(a) => render_corpus(a),
        Command::Train(a) => train_denoiser(a),
        Command::Sample(a) => run_sample(a),
        Command::Inpaint(a) => run_inpaint(a),
        Command::Compose(a) => run_compose(a),
        Command::TrainClassifier(a) => run_train_classifier(a),
        Command::Eval(a) => run_eval(a),
        Command::Compare(a) => run_compare(a),
        Command::SurveyMake(a) => run_survey_make(a),
        Command::SurveyScore(a) => run_survey_score(a),
        Command::Serve(a) => run_serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
