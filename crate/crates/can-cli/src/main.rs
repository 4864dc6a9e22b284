//! Command line interface for the cross attention network toolkit.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use can_core::config::ModelConfig;
use can_core::features::dataset::{
    parse_manifest, prepare_all, scan_manifest, ManifestEntry, PrepareConfig, PreparedUtterance,
    Segmentation, Vocabulary,
};
use can_core::features::segments::write_cache;
use can_core::features::synth::{synthesize_dataset, SynthConfig};
use can_core::harness::ablate::{ablate, ablate_records, format_ablate_table};
use can_core::harness::checkpoint::{load_checkpoint, restore_model, save_checkpoint};
use can_core::harness::eval::{attention_report, evaluate, format_metrics};
use can_core::harness::gradcheck::{format_gradcheck, gradcheck};
use can_core::harness::kfold::{format_kfold_table, kfold, kfold_records};
use can_core::harness::train::train;

#[derive(Parser)]
#[command(
    name = "can",
    about = "Multimodal emotion classification toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset of audio and alignment files.
    Synth(SynthArgs),
    /// Extract segment features for every utterance into a binary cache.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a manifest.
    Eval(EvalArgs),
    /// Run k-fold cross validation.
    Kfold(KfoldArgs),
    /// Compare model variants with k-fold cross validation.
    Ablate(AblateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

/// Model and training settings shared by every subcommand that builds a
/// model. Values resolve in three layers: defaults, then the config file,
/// then explicit flags and --set overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    overlap_ratio: Option<f64>,
    /// Segment boundary source: aligned or equal.
    #[arg(long)]
    segmentation: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Stop once training accuracy reaches this value ("none" disables).
    #[arg(long)]
    target_train_wa: Option<String>,
    #[arg(long)]
    use_stop_gradient: Option<bool>,
    #[arg(long)]
    use_align_loss: Option<bool>,
    #[arg(long)]
    use_cross_attention: Option<bool>,
    /// Extra key=value override, applied after all other layers. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ModelConfig> {
        let mut config = ModelConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            config.apply_text(&text)?;
        }
        let mut overrides: Vec<(&str, String)> = Vec::new();
        macro_rules! push_flag {
            ($field:ident) => {
                if let Some(value) = &self.$field {
                    overrides.push((stringify!($field), value.to_string()));
                }
            };
        }
        push_flag!(embed_dim);
        push_flag!(hidden_dim);
        push_flag!(feature_dim);
        push_flag!(heads);
        push_flag!(dropout);
        push_flag!(alpha);
        push_flag!(overlap_ratio);
        push_flag!(segmentation);
        push_flag!(batch_size);
        push_flag!(learning_rate);
        push_flag!(clip_norm);
        push_flag!(max_epochs);
        push_flag!(patience);
        push_flag!(val_fraction);
        push_flag!(target_train_wa);
        push_flag!(use_stop_gradient);
        push_flag!(use_align_loss);
        push_flag!(use_cross_attention);
        for (key, value) in &overrides {
            config.apply(key, value)?;
        }
        for item in &self.set {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {item:?}"))?;
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write audio, alignments, and the manifest into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 3)]
    words_min: usize,
    #[arg(long, default_value_t = 6)]
    words_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Tab separated manifest: id, audio path, alignment path, label.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory to write one feature cache per utterance into.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional file for per-step and per-epoch log lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Print per-utterance attention weight tables.
    #[arg(long, default_value_t = false)]
    attention: bool,
}

#[derive(Args)]
struct KfoldArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional file for one JSON record per fold plus a summary line.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional file for one JSON record per variant.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Fills vocabulary and class list from the manifest when the config does
/// not pin them already, then returns the prepared utterances.
fn load_dataset(
    entries: &[ManifestEntry],
    config: &mut ModelConfig,
) -> anyhow::Result<Vec<PreparedUtterance>> {
    if config.vocabulary.is_empty() || config.classes.is_empty() {
        let (vocab, classes) = scan_manifest(entries)?;
        if config.vocabulary.is_empty() {
            config.vocabulary = vocab.words().to_vec();
        }
        if config.classes.is_empty() {
            config.classes = classes;
        }
    }
    let vocab = Vocabulary::from_words(config.vocabulary.clone());
    let prep = PrepareConfig {
        mfcc: config.mfcc.clone(),
        overlap_ratio: config.overlap_ratio,
        segmentation: config.segmentation,
    };
    let data = prepare_all(entries, &vocab, &config.classes, &prep)?;
    Ok(data)
}

/// Prints to stdout, exiting quietly if the reader closed the pipe.
fn emit(text: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout();
    if out.write_fmt(text).is_err() {
        std::process::exit(0);
    }
}

macro_rules! say {
    ($fmt:literal $($arg:tt)*) => { emit(format_args!(concat!($fmt, "\n") $($arg)*)) };
}

macro_rules! show {
    ($fmt:literal $($arg:tt)*) => { emit(format_args!($fmt $($arg)*)) };
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        class_count: args.classes,
        per_class: args.per_class,
        sample_rate: args.sample_rate,
        words_min: args.words_min,
        words_max: args.words_max,
        ..SynthConfig::default()
    };
    let manifest = synthesize_dataset(&args.out, &cfg, args.seed)?;
    say!(
        "wrote {} utterances across {} classes",
        args.classes * args.per_class,
        args.classes
    );
    say!("manifest {}", manifest.display());
    Ok(())
}

fn run_preprocess(args: &PreprocessArgs) -> anyhow::Result<()> {
    let mut config = args.config.resolve()?;
    let entries = parse_manifest(&args.manifest)?;
    let data = load_dataset(&entries, &mut config)?;
    fs::create_dir_all(&args.out)?;
    for utterance in &data {
        let path = args.out.join(format!("{}.canf", utterance.id));
        write_cache(&utterance.segments, &path)?;
        say!(
            "{} segments={} coefficients={}",
            utterance.id,
            utterance.segments.segment_count,
            utterance.segments.coeff_count
        );
    }
    say!("cached {} utterances in {}", data.len(), args.out.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut config = args.config.resolve()?;
    let entries = parse_manifest(&args.manifest)?;
    let data = load_dataset(&entries, &mut config)?;
    let outcome = train(&data, &config, args.seed)?;
    save_checkpoint(
        &args.out,
        &outcome.model,
        Some(&outcome.optimizer),
        &outcome.state,
    )?;
    if let Some(log_path) = &args.log {
        let mut text = outcome.log.join("\n");
        text.push('\n');
        write_text(log_path, &text)?;
    }
    say!(
        "trained {} epochs, final train_wa={:.4}, best val_wa={:.4} at epoch {}",
        outcome.state.epoch + 1,
        outcome.final_train_wa,
        outcome.state.best_val_wa,
        outcome.best_epoch
    );
    say!("checkpoint {}", args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = restore_model(&checkpoint)?;
    let mut config = model.config.clone();
    let entries = parse_manifest(&args.manifest)?;
    let data = load_dataset(&entries, &mut config)?;
    let report = evaluate(&model, &data)?;
    show!("{}", format_metrics(&report, &model.config.classes));
    if args.attention {
        for utterance in &data {
            show!("{}", attention_report(&model, utterance)?);
        }
    }
    Ok(())
}

fn run_kfold(args: &KfoldArgs) -> anyhow::Result<()> {
    let mut config = args.config.resolve()?;
    let entries = parse_manifest(&args.manifest)?;
    let data = load_dataset(&entries, &mut config)?;
    let report = kfold(&data, &config, args.folds, args.seed)?;
    show!("{}", format_kfold_table(&report));
    if let Some(path) = &args.records {
        write_text(path, &kfold_records(&report))?;
    }
    Ok(())
}

fn run_ablate(args: &AblateArgs) -> anyhow::Result<()> {
    let mut config = args.config.resolve()?;
    let entries = parse_manifest(&args.manifest)?;
    let aligned_config = {
        let mut c = config.clone();
        c.segmentation = Segmentation::Aligned;
        c
    };
    let equal_config = {
        let mut c = config.clone();
        c.segmentation = Segmentation::Equal;
        c
    };
    let mut base = aligned_config.clone();
    let aligned = load_dataset(&entries, &mut base)?;
    let equal = {
        let mut c = equal_config;
        c.vocabulary = base.vocabulary.clone();
        c.classes = base.classes.clone();
        let mut filled = c;
        load_dataset(&entries, &mut filled)?
    };
    config.vocabulary = base.vocabulary.clone();
    config.classes = base.classes.clone();
    let report = ablate(&aligned, &equal, &config, args.folds, args.seed)?;
    show!("{}", format_ablate_table(&report));
    if let Some(path) = &args.records {
        write_text(path, &ablate_records(&report))?;
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> anyhow::Result<()> {
    let report = gradcheck(args.seed)?;
    show!("{}", format_gradcheck(&report));
    if !report.passed {
        bail!("gradient check failed");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Preprocess(args) => run_preprocess(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Kfold(args) => run_kfold(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}
