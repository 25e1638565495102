//! The `vnsgru` command line: `train`, `eval`, `caption` and `gen-data`.
//!
//! Every command reads an optional JSON config; flags override it. Logs go to
//! stderr, artifacts to files, single answers to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_decoder, save_decoder};
use crate::data::{
    features_path_for, generate_synthetic_dataset, load_dataset, write_atomic, write_caption_file, write_dataset, Dataset,
    Manifest, Split, SyntheticSpec, VideoRecord, Vocabulary,
};
use crate::decoder::{beam_decode, greedy_decode, Conditioning, DecoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::evaluate_corpus;
use crate::selection::Decision;
use crate::tensor::{Tensor, LN_EPS};
use crate::training::{caption_records, run_training, training_log, EpochRecord, TrainConfig, TrainingData, LOG_HEADER};

pub const CHAMPION_FILE: &str = "champion.vnsg";
pub const LAST_FILE: &str = "last.vnsg";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "train.log";
pub const HISTORY_FILE: &str = "selection.tsv";

#[derive(Debug, Parser)]
#[command(name = "vnsgru", version, about = "Semantic GRU video caption decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a decoder and keep the champion checkpoint.
    Train(TrainArgs),
    /// Caption a split and score it.
    Eval(EvalArgs),
    /// Caption one video.
    Caption(CaptionArgs),
    /// Write a synthetic dataset.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// One feature row (`v` then `s`, little-endian f32), or the feature blob
    /// of `--manifest` when `--id` is given.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON synthetic-dataset spec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Model hyperparameters not implied by the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub n_x: usize,
    pub n_h: usize,
    pub n_f: usize,
    /// Checked against the manifest when given.
    pub n_s: Option<usize>,
    pub n_v: Option<usize>,
    pub layer_norm: bool,
    pub ln_eps: f64,
    pub visual_to_all_layers: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_x: 16,
            n_h: 32,
            n_f: 8,
            n_s: None,
            n_v: None,
            layer_norm: true,
            ln_eps: LN_EPS,
            visual_to_all_layers: true,
        }
    }
}

/// The single config file shared by all commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub min_count: usize,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub beam: usize,
    pub split: Split,
    pub threads: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            features: None,
            out: None,
            checkpoint: None,
            min_count: 1,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            beam: 1,
            split: Split::Test,
            threads: 1,
            synthetic: SyntheticSpec::default(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| {
        if e.is_data() || e.is_syntax() {
            Error::Config(format!("{}: {e}", path.display()))
        } else {
            Error::Json {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

impl RunConfig {
    /// Loads `path`, resolving relative paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.features, &mut cfg.out, &mut cfg.checkpoint] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn model_config(&self, manifest: &Manifest, vocab_size: usize) -> Result<ModelConfig> {
        let m = &self.model;
        for (name, want, have) in [("n_s", m.n_s, manifest.n_s), ("n_v", m.n_v, manifest.n_v)] {
            if let Some(w) = want.filter(|&w| w != have) {
                return Err(Error::Config(format!("config {name} = {w} but the manifest has {have}")));
            }
        }
        let config = ModelConfig {
            vocab_size,
            n_x: m.n_x,
            n_h: m.n_h,
            n_f: m.n_f,
            n_s: manifest.n_s,
            n_v: manifest.n_v,
            layer_norm: m.layer_norm,
            ln_eps: m.ln_eps,
            visual_to_all_layers: m.visual_to_all_layers,
        };
        config.validate()?;
        Ok(config)
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("missing --{flag} (or `{flag}` in the config)")))
}

fn open_dataset(manifest: &Path, features: Option<&Path>) -> Result<Dataset> {
    match features {
        Some(f) => load_dataset(manifest, f),
        None => Dataset::open(manifest),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn vocab_path(explicit: Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| checkpoint.with_file_name(VOCAB_FILE))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_text(&text)
}

fn check_model_data(params: &DecoderParams<f32>, vocab: &Vocabulary, n_v: usize, n_s: usize) -> Result<()> {
    let c = &params.config;
    if c.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary size {} does not match the vocabulary file ({})",
            c.vocab_size,
            vocab.len()
        )));
    }
    if c.n_v != n_v || c.n_s != n_s {
        return Err(Error::Config(format!(
            "checkpoint expects n_v = {}, n_s = {} but the features have n_v = {n_v}, n_s = {n_s}",
            c.n_v, c.n_s
        )));
    }
    Ok(())
}

/// Trains and writes the champion checkpoint, vocabulary, training log and
/// selection history into the output directory.
pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.train.threads = t;
    }
    let out = required(args.out.or(cfg.out.clone()), "out")?;
    let manifest = required(args.manifest.or(cfg.manifest.clone()), "manifest")?;
    let features = args.features.or(cfg.features.clone());
    cfg.train.validate()?;

    let dataset = open_dataset(&manifest, features.as_deref())?;
    let data = TrainingData::<f32>::from_dataset(&dataset, cfg.min_count)?;
    let model = cfg.model_config(&dataset.manifest, data.vocab.len())?;
    create_dir(&out)?;
    write_atomic(&out.join(VOCAB_FILE), data.vocab.to_text().as_bytes())?;
    let effective = serde_json::to_vec_pretty(&cfg).expect("config serializes");
    write_atomic(&out.join("run_config.json"), &effective)?;

    let champion_path = out.join(CHAMPION_FILE);
    let log_path = out.join(LOG_FILE);
    let mut lines = vec![LOG_HEADER.to_string()];
    let mut hook = |record: &EpochRecord, params: &DecoderParams<f32>| -> Result<()> {
        if record.decision == Decision::SaveChampion {
            save_decoder(&champion_path, params)?;
        }
        lines.push(record.log_line());
        write_atomic(&log_path, (lines.join("\n") + "\n").as_bytes())
    };
    let outcome = run_training(&data, model, &cfg.train, &mut hook)?;
    write_atomic(&log_path, training_log(&outcome.epochs).as_bytes())?;
    write_atomic(&out.join(HISTORY_FILE), outcome.selection.history_tsv().as_bytes())?;
    save_decoder(&out.join(LAST_FILE), &outcome.final_params)?;
    match outcome.selection.champion_epoch() {
        Some(e) => println!("{}\tepoch {e}", champion_path.display()),
        None => println!("no champion"),
    }
    Ok(())
}

/// Captions a split, writes `captions_<split>.tsv` and `metrics_<split>.json`
/// and prints the metric JSON.
pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let checkpoint = required(args.checkpoint.or(cfg.checkpoint.clone()), "checkpoint")?;
    let manifest = required(args.manifest.or(cfg.manifest.clone()), "manifest")?;
    let features = args.features.or(cfg.features.clone());
    let split = args.split.unwrap_or(cfg.split);
    let beam = args.beam.unwrap_or(cfg.beam);
    let threads = args.threads.unwrap_or(cfg.threads);
    let out = args
        .out
        .or(cfg.out.clone())
        .unwrap_or_else(|| checkpoint.parent().unwrap_or_else(|| Path::new(".")).to_path_buf());

    let params = load_decoder(&checkpoint)?;
    let vocab = load_vocab(&vocab_path(args.vocab, &checkpoint))?;
    let dataset = open_dataset(&manifest, features.as_deref())?;
    check_model_data(&params, &vocab, dataset.manifest.n_v, dataset.manifest.n_s)?;
    let mut records: Vec<VideoRecord<f32>> = dataset.encode(split, &vocab)?;
    if records.is_empty() {
        return Err(Error::Validation(format!("split {split:?} is empty")));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let captions = caption_records(&params, &records, &vocab, cfg.train.max_caption_len, beam, threads)?;
    let references: Vec<_> = records.iter().map(|r| r.references.clone()).collect();
    let report = evaluate_corpus(&captions, &references)?;

    let name = format!("{split:?}").to_lowercase();
    create_dir(&out)?;
    let lines: Vec<(String, String)> = records
        .iter()
        .zip(&captions)
        .map(|(r, c)| (r.id.clone(), c.join(" ")))
        .collect();
    write_caption_file(&out.join(format!("captions_{name}.tsv")), &lines)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join(format!("metrics_{name}.json")), format!("{json}\n").as_bytes())?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn read_feature_row(path: &Path, n_v: usize, n_s: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (n_v + n_s) * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            context: path.display().to_string(),
            offset: bytes.len().min(expected) as u64,
            message: format!("expected {expected} bytes for one feature row, found {}", bytes.len()),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Validation(format!("feature {i} is {}, outside [0, 1]", values[i])));
    }
    let (v, s) = values.split_at(n_v);
    Ok((Tensor::vector(v.to_vec())?, Tensor::vector(s.to_vec())?))
}

/// Prints the caption of one video.
pub fn cmd_caption(args: CaptionArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let checkpoint = required(args.checkpoint.or(cfg.checkpoint.clone()), "checkpoint")?;
    let beam = args.beam.unwrap_or(cfg.beam);
    let params = load_decoder(&checkpoint)?;
    let vocab = load_vocab(&vocab_path(args.vocab, &checkpoint))?;
    let (visual, semantic) = match (args.id, args.manifest.or(cfg.manifest.clone())) {
        (Some(id), Some(manifest)) => {
            let dataset = open_dataset(&manifest, args.features.as_deref())?;
            check_model_data(&params, &vocab, dataset.manifest.n_v, dataset.manifest.n_s)?;
            let r = dataset
                .record(&id)
                .ok_or_else(|| Error::Validation(format!("no video `{id}` in {}", manifest.display())))?;
            (
                Tensor::vector(r.visual.clone())?,
                Tensor::vector(r.semantic.clone())?,
            )
        }
        (Some(_), None) => return Err(Error::Config("--id needs --manifest".into())),
        (None, _) => {
            let features = required(args.features, "features")?;
            let c = &params.config;
            check_model_data(&params, &vocab, c.n_v, c.n_s)?;
            read_feature_row(&features, c.n_v, c.n_s)?
        }
    };
    let cond = Conditioning {
        visual: &visual,
        semantic: &semantic,
    };
    let max_len = cfg.train.max_caption_len;
    let ids = if beam <= 1 {
        greedy_decode(cond, &params, max_len)?
    } else {
        beam_decode(cond, &params, max_len, beam)?
    };
    println!("{}", vocab.decode(&ids).join(" "));
    Ok(())
}

/// Writes `manifest.json` and the feature blob of a synthetic dataset.
pub fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let (spec, seed, out) = match args.config.as_deref() {
        Some(path) => {
            // Accept either a bare spec or a full run config.
            let value: serde_json::Value = read_json(path)?;
            let spec = if value.get("synthetic").is_some() {
                RunConfig::load(path)?.synthetic
            } else {
                read_json::<SyntheticSpec>(path)?
            };
            (spec, args.seed, args.out)
        }
        None => (SyntheticSpec::default(), args.seed, args.out),
    };
    let out = required(out, "out")?;
    let dataset = generate_synthetic_dataset(&spec, seed.unwrap_or(0))?;
    let manifest = write_dataset(&out, &dataset)?;
    println!("{}", manifest.display());
    debug_assert!(features_path_for(&manifest, &dataset.manifest).exists());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Caption(a) => cmd_caption(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
