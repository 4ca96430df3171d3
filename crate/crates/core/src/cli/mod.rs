//! The `noseprint` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error, 3 numeric abort (NaN or collapsed features during training).

pub mod config;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::imgproc::{apply_plan, AugPlan};
use crate::manifest::Manifest;
use crate::nn::{extract_embedding, Network};
use crate::retrieval::{
    fuse_embeddings, load_pairs, load_scores, make_pairs, roc_auc, save_pairs,
    save_roc, save_scores, score_pairs, EmbeddingStore, FuseMode, Metric, QeConfig,
};
use crate::synthdata::{generate_dataset, DatasetSpec};
use crate::trainer::{epoch_means, train, TrainOutputs};
pub use config::{extract_overrides, RunConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const AFTER_HELP: &str = "Any config value can be overridden with a dotted flag, e.g. `--train.lr 0.001` or \
`--qe.min_similarity=0.5`. Seeds fall back to the NOSEPRINT_SEED environment variable.";

#[derive(Debug, Parser)]
#[command(name = "noseprint", version, about = "Train, embed and verify nose-print style identities", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset with a manifest.
    Synth(SynthArgs),
    /// Expand a dataset offline with an augmentation plan.
    Augment(AugmentArgs),
    /// Train a network and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Extract embeddings for every image of a manifest.
    Embed(EmbedArgs),
    /// Fuse embedding stores that cover the same ids.
    Fuse(FuseArgs),
    /// Build verification pairs from a manifest.
    Pairs(PairsArgs),
    /// Score verification pairs against an embedding store.
    Verify(VerifyArgs),
    /// Compute ROC-AUC from scored pairs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags and dotted overrides take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct SynthArgs {
    /// Output directory; receives images/ and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Number of identities [default: 20].
    #[arg(long)]
    n_ids: Option<usize>,
    /// Images per identity [default: 10].
    #[arg(long)]
    per_id: Option<usize>,
    /// Image side in pixels [default: 64].
    #[arg(long)]
    size: Option<usize>,
    /// Dataset seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Capture shift: gaussian blur sigma.
    #[arg(long)]
    shift_blur: Option<f64>,
    /// Capture shift: additive brightness.
    #[arg(long)]
    shift_brightness: Option<f64>,
    /// Capture shift: gaussian noise std.
    #[arg(long)]
    shift_noise: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct AugmentArgs {
    /// Input manifest (or `paths.manifest` in the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Augmentation plan JSON (or `plan` in the config).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Augmented copies written per image, besides the original.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Output directory; receives images/ and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Replaces the plan's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct TrainArgs {
    /// Training manifest (or `paths.manifest` in the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV [default: the checkpoint path with `.log.csv`].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Epochs (`train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Input side (`train.input_size`).
    #[arg(long)]
    size: Option<usize>,
    /// Learning rate (`train.lr`).
    #[arg(long)]
    lr: Option<f64>,
    /// Training seed (`train.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Online augmentation plan JSON applied per image (`train.online_plan`).
    #[arg(long)]
    plan: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct EmbedArgs {
    /// Checkpoint to load.
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest of images to embed (or `paths.manifest` in the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Input side images are resized to [default: `train.input_size`].
    #[arg(long)]
    size: Option<usize>,
    /// Metric the embeddings are meant for; cosine stores unit vectors.
    #[arg(long, value_enum, default_value_t = Metric::Cosine)]
    metric: Metric,
    /// Embedding store to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct FuseArgs {
    /// Embedding stores to fuse; all must hold the same ids.
    #[arg(required = true)]
    stores: Vec<PathBuf>,
    /// How the stores are combined.
    #[arg(long, value_enum, default_value_t = FuseMode::Concat)]
    mode: FuseMode,
    /// Fused store to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct PairsArgs {
    /// Manifest to pair up (or `paths.manifest` in the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Subsample positives and negatives to at most this many pairs each.
    #[arg(long)]
    max_per_class: Option<usize>,
    /// Seed for subsampling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Pairs CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct VerifyArgs {
    /// Embedding store.
    #[arg(long)]
    embeddings: PathBuf,
    /// Pairs CSV.
    #[arg(long)]
    pairs: PathBuf,
    /// Distance used for scoring [default: `qe.metric`].
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    /// Enables query expansion with this many neighbours; 0 leaves scores unchanged.
    #[arg(long)]
    qe_m: Option<usize>,
    /// Scores CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct EvalArgs {
    /// Scores CSV.
    #[arg(long)]
    scores: PathBuf,
    /// ROC points file [default: the scores path with `.roc.csv`].
    #[arg(long)]
    roc: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(Error::NonFinite { .. }) => EXIT_NUMERIC,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(m) | Error::Config(m) => CliError::Usage(m),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn runtime<T>(r: crate::error::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Runtime)
}

fn require(path: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::Usage(format!("missing --{what} (or paths.{what} in the config)")))
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let (args, overrides) = extract_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, &overrides) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn load_config(common: &Common, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    Ok(RunConfig::load(common.config.as_deref(), overrides)?)
}

fn dispatch(command: Command, overrides: &[(String, String)]) -> CliResult {
    match command {
        Command::Synth(a) => cmd_synth(a, overrides),
        Command::Augment(a) => cmd_augment(a, overrides),
        Command::Train(a) => cmd_train(a, overrides),
        Command::Embed(a) => cmd_embed(a, overrides),
        Command::Fuse(a) => cmd_fuse(a, overrides),
        Command::Pairs(a) => cmd_pairs(a, overrides),
        Command::Verify(a) => cmd_verify(a, overrides),
        Command::Eval(a) => cmd_eval(a, overrides),
    }
}

fn load_manifest(path: &Path) -> CliResult<Manifest> {
    runtime(Manifest::load(path))
}

fn cmd_synth(a: SynthArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let s = &cfg.synth;
    let seed = cfg.resolve_seed(a.seed)?.unwrap_or(0);
    let mut spec = DatasetSpec::new(a.n_ids.unwrap_or(s.n_ids), a.per_id.unwrap_or(s.per_id), a.size.unwrap_or(s.size), seed);
    spec.shift = s.shift;
    if let Some(v) = a.shift_blur {
        spec.shift.blur_sigma = v;
    }
    if let Some(v) = a.shift_brightness {
        spec.shift.brightness_delta = v;
    }
    if let Some(v) = a.shift_noise {
        spec.shift.noise_std = v;
    }
    let manifest = generate_dataset(&spec, &a.out)?;
    println!("wrote {} images to {}", manifest.len(), a.out.display());
    Ok(())
}

fn cmd_augment(a: AugmentArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let mut plan = match (&a.plan, &cfg.plan) {
        (Some(path), _) => AugPlan::load(path).map_err(|e| match e {
            Error::Io { .. } => CliError::Runtime(e),
            e => CliError::Usage(e.to_string()),
        })?,
        (None, Some(plan)) => plan.clone(),
        (None, None) => return Err(CliError::Usage("no augmentation plan: pass --plan or set `plan` in the config".into())),
    };
    if let Some(seed) = cfg.resolve_seed(a.seed)? {
        plan.seed = seed;
    }
    let manifest = load_manifest(&require(a.manifest.or(cfg.paths.manifest), "manifest")?)?;
    let out = runtime(apply_plan(&manifest, &plan, a.copies, &a.out))?;
    let failed = out.rows.iter().filter(|r| r.error.is_some()).count();
    println!("wrote {} rows ({failed} failed) to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let mut tc = cfg.train.clone();
    if let Some(seed) = cfg.resolve_seed(a.seed)? {
        tc.seed = seed;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.size {
        tc.input_size = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(path) = &a.plan {
        tc.online_plan = Some(AugPlan::load(path)?);
    }
    tc.validate()?;
    let manifest = load_manifest(&require(a.manifest.or(cfg.paths.manifest), "manifest")?)?;
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    let outcome = train(&tc, &manifest, TrainOutputs { checkpoint: Some(&a.out), log: Some(&log) }).map_err(|e| match e {
        // too few identities and the like only show up once the data is read
        Error::Config(m) => CliError::Usage(m),
        e => CliError::Runtime(e),
    })?;
    let means = epoch_means(&outcome.log);
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        println!("trained {} epochs; mean loss {first:.4} -> {last:.4}", means.len());
    }
    println!("wrote {} and {}", a.out.display(), log.display());
    Ok(())
}

fn cmd_embed(a: EmbedArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let mut net = runtime(Network::<f32>::load(&a.ckpt))?;
    let manifest = load_manifest(&require(a.manifest.or(cfg.paths.manifest), "manifest")?)?;
    let size = a.size.unwrap_or(cfg.train.input_size);
    let outcome = extract_embedding(&mut net, &manifest, size, a.metric).map_err(|e| match e {
        Error::Shape(_) | Error::Config(_) => CliError::Usage(e.to_string()),
        e => CliError::Runtime(e),
    })?;
    for (path, msg) in &outcome.failures {
        eprintln!("skipped {path}: {msg}");
    }
    if outcome.records.is_empty() && !manifest.is_empty() {
        return Err(CliError::Runtime(Error::State("no image could be embedded".into())));
    }
    let store = runtime(EmbeddingStore::new(outcome.records))?;
    runtime(store.save(&a.out))?;
    println!("wrote {} embeddings of dim {} to {}", store.len(), store.dim(), a.out.display());
    Ok(())
}

fn cmd_fuse(a: FuseArgs, overrides: &[(String, String)]) -> CliResult {
    load_config(&a.common, overrides)?;
    let stores = a.stores.iter().map(EmbeddingStore::load).collect::<crate::error::Result<Vec<_>>>();
    let fused = runtime(stores.and_then(|s| fuse_embeddings(&s, a.mode)))?;
    runtime(fused.save(&a.out))?;
    println!("wrote {} fused embeddings of dim {} to {}", fused.len(), fused.dim(), a.out.display());
    Ok(())
}

fn cmd_pairs(a: PairsArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let seed = cfg.resolve_seed(a.seed)?.unwrap_or(0);
    let manifest = load_manifest(&require(a.manifest.or(cfg.paths.manifest), "manifest")?)?;
    let pairs = make_pairs(&manifest, a.max_per_class, seed);
    runtime(save_pairs(&pairs, &a.out))?;
    let same = pairs.iter().filter(|p| p.same).count();
    println!("wrote {} pairs ({same} same, {} different) to {}", pairs.len(), pairs.len() - same, a.out.display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs, overrides: &[(String, String)]) -> CliResult {
    let cfg = load_config(&a.common, overrides)?;
    let metric = a.metric.unwrap_or(cfg.qe.metric);
    let qe = a.qe_m.map(|m| QeConfig { m, metric, ..cfg.qe.clone() });
    let store = runtime(EmbeddingStore::load(&a.embeddings))?;
    let pairs = runtime(load_pairs(&a.pairs))?;
    let scored = runtime(score_pairs(&pairs, &store, metric, qe.as_ref()))?;
    runtime(save_scores(&scored, &a.out))?;
    println!("wrote {} scores to {}", scored.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs, overrides: &[(String, String)]) -> CliResult {
    load_config(&a.common, overrides)?;
    let scored = runtime(load_scores(&a.scores))?;
    let labelled: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.pair.same)).collect();
    let curve = runtime(roc_auc(&labelled))?;
    let roc = a.roc.unwrap_or_else(|| with_suffix(&a.scores, ".roc.csv"));
    runtime(save_roc(&curve, &roc))?;
    println!("auc,{}", curve.auc);
    Ok(())
}

/// `dir/name.ext` becomes `dir/name<suffix>`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
