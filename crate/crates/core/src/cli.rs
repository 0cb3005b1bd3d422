//! Command-line front end: train, translate, eval, sweep, trace.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{build_vocabs, encode_corpus, gen_task_corpus, read_tsv, IdPair, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{bleu, BleuOptions, BleuReport};
use crate::trainer::{
    derive_seed, init_params, plateaued, pretrain_transfer, run_epoch, Checkpoint, DevSet, EpochMetrics,
};

const DATA_STREAM: u64 = 0xda;
const INIT_STREAM: u64 = 0x1a;

#[derive(Debug, Parser)]
#[command(
    name = "memdec",
    version,
    about = "Memory-enhanced encoder-decoder translation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, checkpointing every epoch.
    Train(TrainArgs),
    /// Translate one sentence per line.
    Translate(TranslateArgs),
    /// Score candidate translations against references.
    Eval(EvalArgs),
    /// Train one model per memory size and tabulate dev scores.
    Sweep(SweepArgs),
    /// Export per-step memory accesses for one sentence.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for `checkpoint.json` and `metrics.jsonl`.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Initialize from a trained baseline checkpoint.
    #[arg(long, conflicts_with = "resume")]
    pub pretrain_from: Option<PathBuf>,
    /// Continue a previous run from its checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    /// Greedy decoding (same as `--beam 1`).
    #[arg(long, conflicts_with = "beam")]
    pub greedy: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    /// Reference file; repeat for multiple references.
    #[arg(long = "references", required = true)]
    pub references: Vec<PathBuf>,
    /// Strict BLEU without smoothing of zero higher-order counts.
    #[arg(long)]
    pub no_smoothing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated memory sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub cells: Vec<usize>,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Space-separated source sentence.
    #[arg(long)]
    pub sentence: String,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Translate(a) => cmd_translate(&a),
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Sweep(a) => {
            let table = cmd_sweep(&a)?;
            println!("{}", serde_json::to_string(&table)?);
            Ok(())
        }
        Command::Trace(a) => cmd_trace(&a),
    }
}

/// Encoded training and dev data plus the vocabularies used.
pub struct Prepared {
    pub train: Vec<IdPair>,
    pub dev: Vec<IdPair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

fn corpus(cfg: &RunConfig, file: &Option<PathBuf>, size: usize, stream: u64) -> Result<ParallelCorpus> {
    match file {
        Some(path) => read_tsv(path),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[DATA_STREAM, stream]));
            gen_task_corpus(cfg.task, size, (cfg.min_len, cfg.max_len), cfg.vocab_size, &mut rng)
        }
    }
}

/// Loads or generates the corpora. Vocabularies come from the training
/// side unless given.
pub fn prepare_data(cfg: &RunConfig, vocabs: Option<(Vocabulary, Vocabulary)>) -> Result<Prepared> {
    let train = corpus(cfg, &cfg.train_file, cfg.train_size, 0)?;
    let dev = corpus(cfg, &cfg.dev_file, cfg.dev_size, 1)?;
    if train.pairs.is_empty() || dev.pairs.is_empty() {
        return Err(Error::Data("training and dev corpora must be nonempty".into()));
    }
    let (src_vocab, tgt_vocab) = vocabs.unwrap_or_else(|| build_vocabs(&train, cfg.vocab_cap));
    Ok(Prepared {
        train: encode_corpus(&train, &src_vocab, &tgt_vocab),
        dev: encode_corpus(&dev, &src_vocab, &tgt_vocab),
        src_vocab,
        tgt_vocab,
    })
}

/// Fresh (or transferred) checkpoint for `cfg`.
pub fn initial_checkpoint(cfg: &RunConfig, data: &Prepared, pretrained: Option<&Checkpoint>) -> Result<Checkpoint> {
    let spec = cfg.model_spec(data.src_vocab.len(), data.tgt_vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[INIT_STREAM]));
    let params = match pretrained {
        Some(base) => pretrain_transfer(&base.params, &spec, &mut rng)?,
        None => init_params(&spec, &mut rng)?,
    };
    Checkpoint::new(
        spec,
        cfg.train_config(),
        params,
        data.src_vocab.clone(),
        data.tgt_vocab.clone(),
    )
}

/// Trains until `cfg.epochs` (or plateau), calling `on_epoch` after each.
pub fn train_loop(
    cfg: &RunConfig,
    ckpt: &mut Checkpoint,
    data: &Prepared,
    mut on_epoch: impl FnMut(&Checkpoint, &EpochMetrics) -> Result<()>,
) -> Result<()> {
    let dev = DevSet {
        pairs: &data.dev,
        max_decode_len: cfg.decode_len(),
        skip_bleu: cfg.skip_dev_bleu,
    };
    while ckpt.epoch < cfg.epochs {
        if cfg.patience > 0 && plateaued(&ckpt.history, cfg.patience) {
            break;
        }
        let m = run_epoch(ckpt, &data.train, &dev)?;
        on_epoch(ckpt, &m)?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<Checkpoint> {
    let cfg = a.config.load()?;
    fs::create_dir_all(&a.out)?;
    let (ckpt, data) = match (&a.resume, &a.pretrain_from) {
        (Some(path), _) => {
            let ckpt = Checkpoint::load(path)?;
            let data = prepare_data(&cfg, Some((ckpt.src_vocab.clone(), ckpt.tgt_vocab.clone())))?;
            (ckpt, data)
        }
        (None, Some(path)) => {
            let base = Checkpoint::load(path)?;
            let data = prepare_data(&cfg, None)?;
            if base.src_vocab != data.src_vocab || base.tgt_vocab != data.tgt_vocab {
                return Err(Error::Checkpoint(
                    "baseline vocabularies differ from this run's data".into(),
                ));
            }
            (initial_checkpoint(&cfg, &data, Some(&base))?, data)
        }
        (None, None) => {
            let data = prepare_data(&cfg, None)?;
            (initial_checkpoint(&cfg, &data, None)?, data)
        }
    };
    train_into(&cfg, ckpt, &data, &a.out, a.resume.is_some())
}

/// Trains `ckpt` writing `checkpoint.json` and `metrics.jsonl` under `out`
/// after every epoch. A fresh run truncates old metrics.
fn train_into(cfg: &RunConfig, mut ckpt: Checkpoint, data: &Prepared, out: &Path, resume: bool) -> Result<Checkpoint> {
    let ckpt_path = out.join("checkpoint.json");
    let metrics_path = out.join("metrics.jsonl");
    if !resume && metrics_path.exists() {
        fs::remove_file(&metrics_path)?;
    }
    train_loop(cfg, &mut ckpt, data, |c, m| {
        c.save(&ckpt_path)?;
        let mut f = OpenOptions::new().create(true).append(true).open(&metrics_path)?;
        writeln!(f, "{}", serde_json::to_string(m)?)?;
        Ok(())
    })?;
    if !ckpt_path.exists() {
        ckpt.save(&ckpt_path)?;
    }
    Ok(ckpt)
}

pub fn cmd_translate(a: &TranslateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let beam = if a.greedy { 1 } else { a.beam };
    let text = fs::read_to_string(&a.input)?;
    let model = ckpt.model();
    let mut out = String::new();
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if !words.is_empty() {
            let ids = ckpt.src_vocab.encode(&words);
            let hyp = model.translate_all(&[ids], beam, a.max_len)?.remove(0);
            out.push_str(&ckpt.tgt_vocab.decode(&hyp).join(" "));
        }
        out.push('\n');
    }
    fs::write(&a.output, out)?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<BleuReport> {
    let cands = read_lines(&a.candidates)?;
    let ref_files: Vec<Vec<Vec<String>>> = a.references.iter().map(|p| read_lines(p)).collect::<Result<_>>()?;
    for (path, r) in a.references.iter().zip(&ref_files) {
        if r.len() != cands.len() {
            return Err(Error::Eval(format!(
                "{} has {} lines but the candidates have {}",
                path.display(),
                r.len(),
                cands.len()
            )));
        }
    }
    let refs: Vec<Vec<Vec<String>>> = (0..cands.len())
        .map(|i| ref_files.iter().map(|f| f[i].clone()).collect())
        .collect();
    bleu(
        &cands,
        &refs,
        BleuOptions {
            max_n: 4,
            smoothing: !a.no_smoothing,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub dev_bleu: f64,
    pub dev_nll: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<SweepTable> {
    let base = a.config.load()?;
    if a.cells.contains(&0) {
        return Err(Error::Setting("memory sizes must be positive".into()));
    }
    fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for &n in &a.cells {
        let mut cfg = base.clone();
        cfg.variant = crate::model::Variant::MemDec;
        cfg.cells = n;
        let dir = a.out.join(format!("n{n}"));
        fs::create_dir_all(&dir)?;
        let data = prepare_data(&cfg, None)?;
        let ckpt = initial_checkpoint(&cfg, &data, None)?;
        let ckpt = train_into(&cfg, ckpt, &data, &dir, false)?;
        let last = ckpt
            .history
            .last()
            .ok_or_else(|| Error::Eval("sweep run recorded no epochs".into()))?;
        rows.push(SweepRow {
            n,
            dev_bleu: last.dev_bleu,
            dev_nll: last.dev_nll,
            epochs: ckpt.epoch,
        });
    }
    let table = SweepTable { rows };
    fs::write(a.out.join("sweep.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}

pub fn cmd_trace(a: &TraceArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let words: Vec<&str> = a.sentence.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Data("empty sentence".into()));
    }
    let ids = ckpt.src_vocab.encode(&words);
    let records = ckpt.model().trace(&ids, a.max_len)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    match &a.output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
