//! The `ser` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::autodiff::Tensor;
use crate::corpus::{
    export_corpus, generate_synthetic_corpus, load_manifest, Manifest, SynthSpec, EMOTIONS,
};
use crate::dataset::{derive_seed, Dataset};
use crate::dsp::{write_spectrogram, DspConfig, Frontend};
use crate::error::{Error, Result};
use crate::eval::{cv_splits, pca_embed, predict, score, write_embedding_tsv, EvalReport, Scores};
use crate::kv::KeyValues;
use crate::model::{Checkpoint, CheckpointMeta, ConvLayer, EncoderConfig};
use crate::train::{fit_with, FitOutput, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 1.0];
const DEFAULT_ALPHAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Parser)]
#[command(
    name = "ser",
    about = "Speech emotion features with center loss",
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// `stft` or `mel`.
    #[arg(long, global = true)]
    frontend: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus as WAV files plus manifest.csv.
    SynthData {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Convert the clips of a manifest to spectrogram files.
    ExtractSpec {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on the `train` subset, selecting by `dev` UA.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate a checkpoint on one subset of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Repeated stratified five-fold cross-validation over a whole manifest.
    Cv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Two-dimensional PCA embedding of learned features.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Train and evaluate every (lambda, alpha) cell of a grid.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
}

/// Everything a subcommand needs, merged from defaults, the config file and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub frontend: Frontend,
    pub classes: Vec<String>,
    pub synth_count: usize,
    pub synth_noise: f64,
    pub synth_duration: (f64, f64),
    pub out: PathBuf,
}

const RUN_KEYS: &[&str] = &[
    "window_len",
    "hop_len",
    "dft_len",
    "mel_bands",
    "max_duration",
    "log_floor",
    "conv_stack",
    "rnn_width",
    "feature_dim",
    "frontend",
    "classes",
    "synth_count",
    "synth_noise",
    "synth_min_duration",
    "synth_max_duration",
];

impl RunConfig {
    /// Builds the configuration from merged key/values over the defaults.
    pub fn from_kv(kv: &KeyValues, out: PathBuf) -> Result<Self> {
        let known: Vec<&str> = RUN_KEYS.iter().chain(TrainConfig::KEYS).copied().collect();
        kv.check_known(&known)?;
        let mut dsp = DspConfig::default();
        macro_rules! set {
            ($target:expr, $key:literal) => {
                if let Some(v) = kv.parsed($key)? {
                    $target = v;
                }
            };
        }
        set!(dsp.window_len, "window_len");
        set!(dsp.hop_len, "hop_len");
        set!(dsp.dft_len, "dft_len");
        set!(dsp.mel_bands, "mel_bands");
        set!(dsp.max_duration, "max_duration");
        set!(dsp.log_floor, "log_floor");
        dsp.validate(crate::dsp::SAMPLE_RATE)?;

        let mut frontend = Frontend::default();
        set!(frontend, "frontend");
        let classes: Vec<String> = match kv.get("classes") {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => EMOTIONS.iter().map(|s| s.to_string()).collect(),
        };

        let mut encoder = EncoderConfig {
            input_bins: frontend.n_bins(&dsp),
            n_classes: classes.len(),
            ..EncoderConfig::default()
        };
        if let Some(stack) = kv.get("conv_stack") {
            encoder.conv_stack = stack
                .split(|c: char| c == ';' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<ConvLayer>)
                .collect::<Result<_>>()?;
        }
        set!(encoder.rnn_width, "rnn_width");
        set!(encoder.feature_dim, "feature_dim");
        encoder.validate()?;

        let mut train = TrainConfig::default();
        train.apply(kv)?;
        train.validate()?;

        let mut cfg = Self {
            dsp,
            encoder,
            train,
            frontend,
            classes,
            synth_count: 1000,
            synth_noise: 2.0,
            synth_duration: (0.5, 1.0),
            out,
        };
        set!(cfg.synth_count, "synth_count");
        set!(cfg.synth_noise, "synth_noise");
        set!(cfg.synth_duration.0, "synth_min_duration");
        set!(cfg.synth_duration.1, "synth_max_duration");
        Ok(cfg)
    }
}

/// Exit code for an error: usage for bad configuration, data for anything
/// about inputs, numeric for non-finite training.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    let cfg = load_config(&common)?;
    fs::create_dir_all(&cfg.out)?;
    match command {
        Command::SynthData { count, noise } => synth_data(&cfg, count, noise),
        Command::ExtractSpec { manifest } => extract_spec(&cfg, &manifest),
        Command::Train { manifest } => train(&cfg, &manifest),
        Command::Eval {
            checkpoint,
            manifest,
            subset,
        } => evaluate(&cfg, &checkpoint, &manifest, &subset),
        Command::Cv { manifest, repeats } => cross_validate(&cfg, &manifest, repeats),
        Command::Embed {
            checkpoint,
            manifest,
            subset,
        } => embed(&cfg, &checkpoint, &manifest, &subset),
        Command::Sweep {
            manifest,
            lambdas,
            alphas,
        } => sweep(
            &cfg,
            &manifest,
            &lambdas.unwrap_or(DEFAULT_LAMBDAS.to_vec()),
            &alphas.unwrap_or(DEFAULT_ALPHAS.to_vec()),
        ),
    }
}

/// Defaults, then the config file, then flags.
fn load_config(common: &Common) -> Result<RunConfig> {
    let file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    Error::config(format!("config file {} not found", path.display()))
                }
                _ => Error::Io(e),
            })?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    let mut flags = KeyValues::default();
    if let Some(v) = common.seed {
        flags.set("seed", v.to_string());
    }
    if let Some(v) = common.lambda {
        flags.set("lambda", v.to_string());
    }
    if let Some(v) = common.alpha {
        flags.set("alpha", v.to_string());
    }
    if let Some(v) = &common.frontend {
        flags.set("frontend", v.clone());
    }
    RunConfig::from_kv(&file.overlay(&flags), common.out.clone())
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn synth_data(cfg: &RunConfig, count: Option<usize>, noise: Option<f64>) -> Result<()> {
    let mut spec = SynthSpec::emotions(
        count.unwrap_or(cfg.synth_count),
        cfg.train.seed,
        noise.unwrap_or(cfg.synth_noise),
        cfg.synth_duration,
    );
    spec.class_names = cfg.classes.clone();
    let corpus = generate_synthetic_corpus(&spec)?;
    let fold = &cv_splits(&corpus.labels, corpus.class_names.len(), cfg.train.seed)?[0];
    let mut subsets = vec![None; corpus.labels.len()];
    for (tag, idx) in [
        ("train", &fold.train),
        ("dev", &fold.dev),
        ("test", &fold.test),
    ] {
        for &i in idx {
            subsets[i] = Some(tag.to_string());
        }
    }
    let manifest = export_corpus(&cfg.out, &corpus, &subsets)?;
    eprintln!("wrote {} clips to {}", manifest.len(), cfg.out.display());
    Ok(())
}

fn extract_spec(cfg: &RunConfig, manifest: &Path) -> Result<()> {
    let manifest = load_manifest(manifest, &cfg.classes)?;
    for (i, rec) in manifest.records.iter().enumerate() {
        let spec = cfg.frontend.extract(&manifest.load_clip(i)?, &cfg.dsp)?;
        let stem = rec.path.file_stem().unwrap_or_default().to_string_lossy();
        let mut buf = Vec::new();
        write_spectrogram(&mut buf, &spec)?;
        write_atomic(&cfg.out.join(format!("{stem}.spgm")), &buf)?;
    }
    eprintln!("wrote {} {} spectrograms", manifest.len(), cfg.frontend);
    Ok(())
}

fn subset_dataset(manifest: &Manifest, subset: &str, cfg: &RunConfig) -> Result<Dataset> {
    let idx = manifest.subset_indices(subset);
    if idx.is_empty() {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("manifest has no rows in subset {subset:?}"),
        });
    }
    manifest.to_dataset(&idx, cfg.frontend, &cfg.dsp)
}

fn fit_logged(
    train: &Dataset,
    dev: &Dataset,
    encoder: &EncoderConfig,
    tc: &TrainConfig,
) -> Result<FitOutput> {
    fit_with(train, dev, encoder, tc, |e| {
        eprintln!(
            "epoch {:>3}  L_s {:.4}  L_c {:.4}  dev UA {:.4}  dev WA {:.4}",
            e.epoch, e.softmax_loss, e.center_loss, e.dev_ua, e.dev_wa
        )
    })
}

fn train(cfg: &RunConfig, manifest: &Path) -> Result<()> {
    let manifest = load_manifest(manifest, &cfg.classes)?;
    let train_set = subset_dataset(&manifest, "train", cfg)?;
    let dev_set = subset_dataset(&manifest, "dev", cfg)?;
    let out = fit_logged(&train_set, &dev_set, &cfg.encoder, &cfg.train)?;
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            encoder: cfg.encoder.clone(),
            dsp: cfg.dsp,
            frontend: cfg.frontend,
            classes: cfg.classes.clone(),
        },
        params: out.params,
        centers: out.centers,
    };
    let mut buf = Vec::new();
    ckpt.write(&mut buf)?;
    write_atomic(&cfg.out.join("model.ckpt"), &buf)?;
    let mut hist = Vec::new();
    out.history.write_jsonl(&mut hist)?;
    write_atomic(&cfg.out.join("history.jsonl"), &hist)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::read(std::io::BufReader::new(fs::File::open(path)?))
}

/// Dataset for `subset`, or the whole manifest when it carries no subset tags.
fn eval_dataset(manifest: &Manifest, subset: &str, ckpt: &Checkpoint) -> Result<Dataset> {
    let idx = if manifest.records.iter().all(|r| r.subset.is_none()) {
        (0..manifest.len()).collect()
    } else {
        manifest.subset_indices(subset)
    };
    if idx.is_empty() {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("manifest has no rows in subset {subset:?}"),
        });
    }
    manifest.to_dataset(&idx, ckpt.meta.frontend, &ckpt.meta.dsp)
}

fn evaluate(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, subset: &str) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest, &ckpt.meta.classes)?;
    let data = eval_dataset(&manifest, subset, &ckpt)?;
    let (preds, _) = predict(&ckpt.params, &data)?;
    let report = EvalReport::single(
        score(&preds, data.labels(), data.n_classes())?,
        ckpt.meta.classes.clone(),
    );
    write_atomic(&cfg.out.join("report.txt"), report.to_text().as_bytes())?;
    eprintln!("UA {:.4}  WA {:.4}", report.ua, report.wa);
    Ok(())
}

/// `repeats` rounds of five folds, each round with a freshly drawn partition.
pub fn cv_protocol(
    data: &Dataset,
    encoder: &EncoderConfig,
    tc: &TrainConfig,
    repeats: usize,
) -> Result<EvalReport> {
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let mut scores: Vec<Scores> = Vec::new();
    for r in 0..repeats {
        let round_seed = derive_seed(tc.seed, r as u64);
        for (k, fold) in cv_splits(data.labels(), data.n_classes(), round_seed)?
            .iter()
            .enumerate()
        {
            let fold_cfg = TrainConfig {
                seed: derive_seed(round_seed, k as u64),
                ..tc.clone()
            };
            eprintln!("repeat {} fold {}", r + 1, k + 1);
            let out = fit_with(
                &data.subset(&fold.train),
                &data.subset(&fold.dev),
                encoder,
                &fold_cfg,
                |_| {},
            )?;
            let test = data.subset(&fold.test);
            let (preds, _) = predict(&out.params, &test)?;
            scores.push(score(&preds, test.labels(), test.n_classes())?);
        }
    }
    EvalReport::from_folds(&scores, data.class_names().to_vec())
}

fn cross_validate(cfg: &RunConfig, manifest: &Path, repeats: usize) -> Result<()> {
    let manifest = load_manifest(manifest, &cfg.classes)?;
    let all: Vec<usize> = (0..manifest.len()).collect();
    let data = manifest.to_dataset(&all, cfg.frontend, &cfg.dsp)?;
    let report = cv_protocol(&data, &cfg.encoder, &cfg.train, repeats)?;
    write_atomic(&cfg.out.join("cv_report.txt"), report.to_text().as_bytes())?;
    eprintln!("UA {:.4}  WA {:.4}", report.ua, report.wa);
    Ok(())
}

fn embed(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, subset: &str) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest, &ckpt.meta.classes)?;
    let data = eval_dataset(&manifest, subset, &ckpt)?;
    let (_, feats) = predict(&ckpt.params, &data)?;
    let d = ckpt.meta.encoder.feature_dim;
    let features = Tensor::matrix(feats.len(), d, feats.concat());
    let pca = pca_embed(&features, 2)?;
    let mut buf = Vec::new();
    write_embedding_tsv(&mut buf, &pca.coords, data.labels(), data.class_names())?;
    write_atomic(&cfg.out.join("embedding.tsv"), &buf)?;
    eprintln!(
        "explained variance {:.4} {:.4}",
        pca.explained[0], pca.explained[1]
    );
    Ok(())
}

fn sweep(cfg: &RunConfig, manifest: &Path, lambdas: &[f64], alphas: &[f64]) -> Result<()> {
    let manifest = load_manifest(manifest, &cfg.classes)?;
    let train_set = subset_dataset(&manifest, "train", cfg)?;
    let dev_set = subset_dataset(&manifest, "dev", cfg)?;
    let test_set = subset_dataset(&manifest, "test", cfg)?;
    let cells = cfg.out.join("sweep");
    fs::create_dir_all(&cells)?;
    let mut lines = String::new();
    for &lambda in lambdas {
        for &alpha in alphas {
            let tc = TrainConfig {
                lambda,
                alpha,
                ..cfg.train.clone()
            };
            tc.validate()?;
            eprintln!("lambda {lambda} alpha {alpha}");
            let out = fit_with(&train_set, &dev_set, &cfg.encoder, &tc, |_| {})?;
            let (preds, _) = predict(&out.params, &test_set)?;
            let report = EvalReport::single(
                score(&preds, test_set.labels(), test_set.n_classes())?,
                cfg.classes.clone(),
            );
            write_atomic(
                &cells.join(format!("lambda_{lambda}_alpha_{alpha}.txt")),
                report.to_text().as_bytes(),
            )?;
            lines.push_str(
                &json!({
                    "lambda": lambda,
                    "alpha": alpha,
                    "ua": report.ua,
                    "wa": report.wa,
                    "best_epoch": out.history.best_epoch,
                })
                .to_string(),
            );
            lines.push('\n');
        }
    }
    write_atomic(&cfg.out.join("sweep.jsonl"), lines.as_bytes())
}
