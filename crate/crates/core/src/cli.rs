//! Command-line pipeline driver. Summaries go to `out` as `key=value`
//! lines; progress goes to the `log` facade.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::channel::Channel;
use crate::config::{load_config, PipelineConfig};
use crate::corpus::{corpus_stats, split_dataset, validate_corpus_file, Corpus, RelationRegistry};
use crate::error::{Error, Result};
use crate::heuristics::{generate_pair_set, PairSet};
use crate::mgate::{
    gradcheck_batch, load_checkpoint, save_checkpoint, train_encoder_with_validation, Checkpoint,
    EmbeddingProvider, Encoder, MgateConfig, Vocabulary,
};
use crate::promptkit::{emit_sft_dataset, evaluate_predictions, read_predictions, PromptTemplate};
use crate::retrieval::{
    build_index, retrieval_hit_rate, retrieve_exemplars, FeatureIndex, RetrievalPolicy,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "faima",
    version,
    about = "Feature-aware exemplar retrieval pipeline"
)]
pub struct Cli {
    /// TOML config file; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides paths.corpus.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Overrides paths.out_dir.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every corpus record against the schema.
    Validate,
    /// Per-domain sentence and pair counts.
    Stats {
        #[arg(long = "domain")]
        domains: Vec<String>,
    },
    /// Label contrastive training pairs and snapshot the relation registry.
    GenPairs,
    /// Train the encoder and write a checkpoint.
    Train,
    /// Encode the training sentences into a retrieval index.
    BuildIndex,
    /// Show the exemplars retrieved for one sentence.
    Retrieve {
        #[arg(long)]
        id: String,
        /// Total exemplars; one per feature channel, the rest from Avg.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write the prompt dataset for fine-tuning.
    EmitSft,
    /// Heuristic-judged retrieval success rate per channel.
    HitRate {
        /// Evaluation corpus; defaults to the validation split.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Macro-F1 of model predictions against the gold corpus.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Finite-difference check of the encoder's loss gradient on a 3-sentence batch.
    Gradcheck {
        /// Embedding dimension used for the check.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match dispatch(&cli.command, &cfg, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = &cli.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    Ok(cfg)
}

fn io_err(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

macro_rules! emit {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(io_err)?
    };
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    let d = &cfg.paths.out_dir;
    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))
}

/// Loads the corpus against the registry snapshot when one exists.
fn load_corpus(cfg: &PipelineConfig, registry: Option<&Path>) -> Result<Corpus> {
    let path = cfg.paths.corpus()?;
    match registry {
        Some(r) if r.exists() => Corpus::load_with_registry(path, RelationRegistry::load(r)?),
        _ => Corpus::load(path),
    }
}

/// Training and validation parts under the configured split.
fn split(cfg: &PipelineConfig, corpus: &Corpus) -> Result<(Corpus, Option<Corpus>)> {
    if cfg.split_ratio > 0.0 {
        let (train, val) = split_dataset(corpus, cfg.split_ratio, cfg.seed)?;
        Ok((train, Some(val)))
    } else {
        Ok((corpus.clone(), None))
    }
}

fn checkpoint_corpus(cfg: &PipelineConfig, ckpt: &Checkpoint) -> Result<Corpus> {
    load_corpus(cfg, ckpt.registry_path.as_deref().map(Path::new))
}

fn load_index_for(cfg: &PipelineConfig, ckpt: &Checkpoint) -> Result<FeatureIndex> {
    let index = FeatureIndex::load(&cfg.paths.index())?;
    if let Some(d) = index.checkpoint_digest() {
        if d != ckpt.digest {
            return Err(Error::DigestMismatch(format!(
                "index was built from checkpoint {d}, current checkpoint is {}",
                ckpt.digest
            )));
        }
    }
    Ok(index)
}

pub fn dispatch(command: &Command, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Validate => {
            let path = cfg.paths.corpus()?;
            let (records, violations) = validate_corpus_file(path)?;
            for v in &violations {
                warn!("{v}");
            }
            info!("{} violations", violations.len());
            emit!(out, "records={records} violations={}", violations.len());
            Ok(if violations.is_empty() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            })
        }
        Command::Stats { domains } => {
            let corpus = load_corpus(cfg, None)?;
            let filter = (!domains.is_empty()).then_some(domains.as_slice());
            let stats = corpus_stats(&corpus, filter);
            for row in stats.rows.iter().chain([&stats.overall]) {
                emit!(
                    out,
                    "domain={} sentences={} pairs={} positive={} negative={} neutral={}",
                    row.domain,
                    row.sentences,
                    row.pairs,
                    row.positive,
                    row.negative,
                    row.neutral
                );
            }
            Ok(EXIT_OK)
        }
        Command::GenPairs => {
            ensure_out_dir(cfg)?;
            let corpus = load_corpus(cfg, None)?;
            let registry_path = cfg.paths.registry();
            corpus.registry().save(&registry_path)?;
            let (train, _) = split(cfg, &corpus)?;
            let pairs = generate_pair_set(
                &train,
                &cfg.heuristics.config(),
                cfg.heuristics.pair_budget,
                cfg.seed,
            )?;
            let pairs_path = cfg.paths.pairs();
            pairs.write(&pairs_path)?;
            emit!(out, "pairs={} path={}", pairs.len(), pairs_path.display());
            for c in Channel::FEATURES {
                let k = pairs.counts[c.index()];
                emit!(
                    out,
                    "channel={c} positive={} negative={}",
                    k.positive,
                    k.negative
                );
            }
            emit!(out, "registry={}", registry_path.display());
            Ok(EXIT_OK)
        }
        Command::Train => {
            ensure_out_dir(cfg)?;
            let registry_path = cfg.paths.registry();
            let corpus = load_corpus(cfg, Some(&registry_path))?;
            corpus.registry().save(&registry_path)?;
            let pairs = PairSet::read(&cfg.paths.pairs())?;
            let (train, val) = split(cfg, &corpus)?;
            let val_pairs = match &val {
                Some(v) if v.len() >= 2 => Some(generate_pair_set(
                    v,
                    &cfg.heuristics.config(),
                    cfg.heuristics.pair_budget,
                    cfg.seed,
                )?),
                _ => None,
            };
            let mut provider = EmbeddingProvider::random(
                Vocabulary::from_corpus(&train),
                cfg.mgate.embed_dim,
                cfg.mgate.seed,
            );
            provider.trainable = cfg.mgate.train_embeddings;
            if let Some(wv) = &cfg.paths.word_vectors {
                let n = provider.load_word_vectors(wv)?;
                info!("initialized {n} embedding rows from {}", wv.display());
            }
            let validation = val.as_ref().zip(val_pairs.as_ref());
            let (encoder, report) =
                train_encoder_with_validation(&train, validation, &pairs, provider, &cfg.mgate)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            for (e, loss) in report.history.iter().enumerate() {
                match report.validation_history.get(e).copied().flatten() {
                    Some(v) => emit!(out, "epoch={} loss={loss:.6} val_loss={v:.6}", e + 1),
                    None => emit!(out, "epoch={} loss={loss:.6}", e + 1),
                }
            }
            let ckpt_path = cfg.paths.checkpoint();
            let reg = registry_path.to_string_lossy().into_owned();
            let digest = save_checkpoint(&encoder, &report.history, Some(&reg), &ckpt_path)?;
            if let Some(b) = report.best_epoch {
                emit!(out, "best_epoch={b}");
            }
            emit!(
                out,
                "checkpoint={} digest={digest} steps={}",
                ckpt_path.display(),
                report.steps
            );
            Ok(EXIT_OK)
        }
        Command::BuildIndex => {
            ensure_out_dir(cfg)?;
            let ckpt = load_checkpoint(&cfg.paths.checkpoint())?;
            let corpus = checkpoint_corpus(cfg, &ckpt)?;
            let (train, _) = split(cfg, &corpus)?;
            let index = build_index(&train, &ckpt, cfg.index_mode())?;
            let path = cfg.paths.index();
            let digest = index.save(&path)?;
            let mode = if cfg.retrieval.approximate {
                "approximate"
            } else {
                "exact"
            };
            emit!(
                out,
                "index={} rows={} dim={} mode={mode} digest={digest}",
                path.display(),
                index.len(),
                index.dim()
            );
            Ok(EXIT_OK)
        }
        Command::Retrieve { id, k } => {
            let ckpt = load_checkpoint(&cfg.paths.checkpoint())?;
            let index = load_index_for(cfg, &ckpt)?;
            let corpus = checkpoint_corpus(cfg, &ckpt)?;
            let query = corpus.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
            let policy = match k {
                Some(k) => RetrievalPolicy {
                    keep_channel_order: cfg.retrieval.keep_channel_order,
                    ..RetrievalPolicy::for_k(*k)?
                },
                None => cfg.retrieval.policy(),
            };
            let set = retrieve_exemplars(&index, query, &ckpt.encoder, &policy)?;
            emit!(out, "query={} k={}", set.query_id, set.exemplars.len());
            for (r, e) in set.exemplars.iter().enumerate() {
                emit!(
                    out,
                    "rank={} id={} channel={} distance={:.6e}",
                    r + 1,
                    e.record_id,
                    e.channel,
                    e.distance
                );
            }
            Ok(EXIT_OK)
        }
        Command::EmitSft => {
            ensure_out_dir(cfg)?;
            let ckpt = load_checkpoint(&cfg.paths.checkpoint())?;
            let index = load_index_for(cfg, &ckpt)?;
            let corpus = checkpoint_corpus(cfg, &ckpt)?;
            let (train, _) = split(cfg, &corpus)?;
            let template = match &cfg.paths.template {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::default_template(),
            };
            let path = cfg.paths.sft();
            let n = emit_sft_dataset(
                &corpus,
                &train,
                &index,
                &ckpt,
                &template,
                &cfg.retrieval.policy(),
                &path,
            )?;
            emit!(out, "records={n} path={}", path.display());
            Ok(EXIT_OK)
        }
        Command::HitRate { eval } => {
            let ckpt = load_checkpoint(&cfg.paths.checkpoint())?;
            let index = load_index_for(cfg, &ckpt)?;
            let corpus = checkpoint_corpus(cfg, &ckpt)?;
            let (train, val) = split(cfg, &corpus)?;
            let eval_corpus = match (eval, val) {
                (Some(p), _) => Corpus::load(p)?,
                (None, Some(v)) => v,
                (None, None) => {
                    return Err(Error::Config(
                        "hit-rate needs --eval or a split_ratio above 0".into(),
                    ))
                }
            };
            let report = retrieval_hit_rate(
                &index,
                &train,
                &eval_corpus,
                &ckpt.encoder,
                &cfg.heuristics.config(),
                &cfg.retrieval.policy(),
            )?;
            write!(out, "{report}").map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Evaluate { predictions } => {
            let gold = load_corpus(cfg, None)?;
            let path = predictions
                .clone()
                .unwrap_or_else(|| cfg.paths.predictions());
            let preds = read_predictions(&path)?;
            let report = evaluate_predictions(&gold, &preds)?;
            write!(out, "{report}").map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { dim, tol } => {
            let corpus = load_corpus(cfg, None)?;
            let mcfg = MgateConfig {
                embed_dim: *dim,
                ..cfg.mgate
            };
            mcfg.validate()?;
            let (batch, pairs) = gradcheck_batch_from(&corpus, cfg)?;
            let encoder = Encoder::init_for_gradcheck(&batch, &mcfg)?;
            let report = gradcheck_batch(&batch, &pairs, &encoder, 1e-5, *tol)?;
            let worst = report.worst().map(|p| p.name.as_str()).unwrap_or("-");
            let status = if report.passed() { "pass" } else { "fail" };
            emit!(
                out,
                "batch={} max_relative_error={:.3e} worst_param={worst} tolerance={tol:e} status={status}",
                batch.records().iter().map(|r| r.id.as_str()).collect::<Vec<_>>().join(","),
                report.max_relative_error()
            );
            Ok(if report.passed() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            })
        }
    }
}

/// The first three sentences (in corpus order) whose pairs give at least one
/// contributing anchor.
fn gradcheck_batch_from(corpus: &Corpus, cfg: &PipelineConfig) -> Result<(Corpus, PairSet)> {
    let n = corpus.len().min(30);
    let recs = corpus.records();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let ids = [&recs[a].id, &recs[b].id, &recs[c].id];
                let batch = corpus.subset(|r| ids.contains(&&r.id))?;
                let pairs = generate_pair_set(&batch, &cfg.heuristics.config(), 3, cfg.seed)?;
                let usable = pairs
                    .counts
                    .iter()
                    .any(|k| k.positive > 0 && k.negative > 0)
                    && (0..3).any(|i| {
                        let mine: Vec<_> = pairs
                            .labels
                            .iter()
                            .filter(|l| l.anchor_id == *ids[i] || l.other_id == *ids[i])
                            .collect();
                        (0..3).any(|k| {
                            mine.iter().any(|l| l.bits.0[k]) && mine.iter().any(|l| !l.bits.0[k])
                        })
                    });
                if usable {
                    return Ok((batch, pairs));
                }
            }
        }
    }
    Err(Error::DegenerateBatch)
}
