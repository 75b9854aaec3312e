use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::{bind_params, critic, encode_on_tape, project_on_tape};
use super::loss::{contrastive_on_tape, ChannelMasks};
use super::{names, EmbeddingProvider, Encoder, MgateConfig, MgateParams};
use crate::channel::Channel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::heuristics::{PairBits, PairSet};
use crate::numerics::{
    adamw_step, check_against, AdamWConfig, GradStore, GradcheckReport, OptimizerState, ParamStore,
    Tape, WarmupSchedule,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean total loss over the batches of each epoch.
    pub history: Vec<f64>,
    /// Validation loss after each epoch, when a validation corpus was given.
    pub validation_history: Vec<Option<f64>>,
    /// 1-based epoch whose parameters were kept; `None` means the last.
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub warnings: Vec<String>,
}

/// Loss (and optionally gradients) of one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: f64,
    /// Per channel (lig, dom, sen, avg); `None` for channels with no contributing anchor.
    pub per_channel: [Option<f64>; 4],
    pub grads: GradStore,
}

/// Positive/negative masks for `batch` (corpus positions) in one channel.
pub fn pair_masks(
    corpus: &Corpus,
    batch: &[usize],
    lookup: &HashMap<(&str, &str), PairBits>,
    channel: Channel,
) -> ChannelMasks {
    let recs = corpus.records();
    let mut m = ChannelMasks::empty(batch.len());
    for (i, &a) in batch.iter().enumerate() {
        for (j, &b) in batch.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(bits) = lookup.get(&(recs[a].id.as_str(), recs[b].id.as_str())) {
                if let Some(positive) = bits.get(channel) {
                    m.set(i, j, positive);
                }
            }
        }
    }
    m
}

/// Total contrastive loss of a batch given its sentences' vocabulary rows.
/// Returns `None` when every channel is degenerate.
pub fn batch_loss(
    params: &ParamStore,
    cfg: &MgateConfig,
    batch_rows: &[Vec<usize>],
    masks: &[ChannelMasks; 4],
    with_grad: bool,
) -> Result<Option<BatchLoss>> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, cfg.share_attention_params, |name| {
        with_grad && (name != names::EMBED || cfg.train_embeddings)
    });
    let encoded = batch_rows
        .iter()
        .map(|rows| encode_on_tape(&mut tape, &bound, rows, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut per_channel = [None; 4];
    let mut total = None;
    for c in Channel::ALL {
        let stacked: Vec<_> = encoded.iter().map(|e| e[c.index()]).collect();
        let x = tape.concat_rows(&stacked)?;
        let z = project_on_tape(&mut tape, &bound, x, c, cfg.leaky_slope)?;
        let zt = tape.transpose(z);
        let scores = tape.matmul(z, zt)?;
        let Some(loss) = contrastive_on_tape(&mut tape, scores, &masks[c.index()], cfg.tau)? else {
            continue;
        };
        per_channel[c.index()] = Some(tape.value(loss).item());
        let weight = match c {
            Channel::Avg => 1.0,
            f => cfg.betas[f.index()],
        };
        let term = tape.scale(loss, weight);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let Some(total) = total else {
        return Ok(None);
    };

    let mut grads = GradStore::new();
    if with_grad {
        let mut g = tape.backward(total)?;
        for (name, &v) in bound.vars() {
            if let Some(t) = g.take(v) {
                grads.insert(name.clone(), t);
            }
        }
    }
    Ok(Some(BatchLoss {
        total: tape.value(total).item(),
        per_channel,
        grads,
    }))
}

/// Shuffled batches of at most `batch_size`, pulling in a positive and a
/// negative partner per channel for each anchor where the pair set offers one.
pub fn make_batches(
    corpus: &Corpus,
    lookup: &HashMap<(&str, &str), PairBits>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    if n <= batch_size {
        return vec![order];
    }
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let recs = corpus.records();
    let partners = |a: usize, c: Channel, positive: bool| -> Vec<usize> {
        let mut p: Vec<usize> = (0..n)
            .filter(|&b| {
                b != a
                    && lookup
                        .get(&(recs[a].id.as_str(), recs[b].id.as_str()))
                        .and_then(|bits| bits.get(c))
                        == Some(positive)
            })
            .collect();
        p.sort_by_key(|&b| rank[b]);
        p
    };

    let mut assigned = vec![false; n];
    let mut cursor = 0;
    let mut batches = Vec::new();
    loop {
        let mut batch: Vec<usize> = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            while cursor < n && assigned[order[cursor]] {
                cursor += 1;
            }
            if cursor == n {
                break;
            }
            let anchor = order[cursor];
            assigned[anchor] = true;
            batch.push(anchor);
            for c in Channel::ALL {
                for positive in [true, false] {
                    if batch.len() >= batch_size {
                        break;
                    }
                    let want = partners(anchor, c, positive);
                    if want.iter().any(|b| batch.contains(b)) {
                        continue;
                    }
                    if let Some(&b) = want.iter().find(|&&b| !assigned[b]) {
                        assigned[b] = true;
                        batch.push(b);
                    }
                }
            }
        }
        if batch.is_empty() {
            break;
        }
        batches.push(batch);
    }
    batches
}

fn channel_masks(
    corpus: &Corpus,
    batch: &[usize],
    lookup: &HashMap<(&str, &str), PairBits>,
) -> [ChannelMasks; 4] {
    Channel::ALL.map(|c| pair_masks(corpus, batch, lookup, c))
}

fn check_pair_coverage(corpus: &Corpus, pairs: &PairSet, warnings: &mut Vec<String>) {
    let lookup = pairs.lookup();
    let recs = corpus.records();
    for c in Channel::ALL {
        let has_positive = recs.iter().enumerate().any(|(i, a)| {
            recs[i + 1..].iter().any(|b| {
                lookup
                    .get(&(a.id.as_str(), b.id.as_str()))
                    .and_then(|bits| bits.get(c))
                    == Some(true)
            })
        });
        if !has_positive {
            warnings.push(format!(
                "channel {c} has no positive pairs; its loss is skipped"
            ));
        }
    }
    let covered = recs
        .iter()
        .filter(|r| {
            pairs
                .labels
                .iter()
                .any(|l| l.anchor_id == r.id || l.other_id == r.id)
        })
        .count();
    if covered < recs.len() {
        warnings.push(format!(
            "{} of {} sentences appear in no labelled pair",
            recs.len() - covered,
            recs.len()
        ));
    }
}

/// Mean batch loss over `corpus` without updating anything.
fn evaluate_loss(
    corpus: &Corpus,
    lookup: &HashMap<(&str, &str), PairBits>,
    encoder: &Encoder,
) -> Result<Option<f64>> {
    let params = encoder.flat_params();
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::new();
    for chunk in idx.chunks(encoder.config.batch_size) {
        let rows: Vec<_> = chunk
            .iter()
            .map(|&i| encoder.provider.vocab.rows(&corpus.records()[i]))
            .collect();
        let masks = channel_masks(corpus, chunk, lookup);
        if let Some(b) = batch_loss(&params, &encoder.config, &rows, &masks, false)? {
            losses.push(b.total);
        }
    }
    Ok((!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Trains a fresh encoder on `corpus` with contrastive pairs from `pairs`.
pub fn train_encoder(
    corpus: &Corpus,
    pairs: &PairSet,
    provider: EmbeddingProvider,
    cfg: &MgateConfig,
) -> Result<(Encoder, TrainReport)> {
    train_encoder_with_validation(corpus, None, pairs, provider, cfg)
}

/// As [`train_encoder`]; with a validation corpus and its own pair set the
/// parameters of the epoch with the lowest validation loss are kept.
pub fn train_encoder_with_validation(
    corpus: &Corpus,
    validation: Option<(&Corpus, &PairSet)>,
    pairs: &PairSet,
    provider: EmbeddingProvider,
    cfg: &MgateConfig,
) -> Result<(Encoder, TrainReport)> {
    cfg.validate()?;
    if provider.table.cols() != cfg.embed_dim {
        return Err(Error::Config(format!(
            "embedding table has {} columns but embed_dim is {}",
            provider.table.cols(),
            cfg.embed_dim
        )));
    }
    let cfg = MgateConfig {
        train_embeddings: provider.trainable,
        ..*cfg
    };
    let mut encoder = Encoder {
        config: cfg,
        provider,
        params: MgateParams::init(&cfg),
    };
    let mut report = TrainReport::default();
    check_pair_coverage(corpus, pairs, &mut report.warnings);
    if cfg.epochs == 0 {
        return Ok((encoder, report));
    }

    let lookup = pairs.lookup();
    let val_lookup = validation.map(|(c, p)| (c, p.lookup()));
    let rows: Vec<Vec<usize>> = corpus
        .records()
        .iter()
        .map(|r| encoder.provider.vocab.rows(r))
        .collect();
    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size) as u64;
    let schedule = WarmupSchedule::new(
        cfg.lr,
        cfg.epochs as u64 * batches_per_epoch,
        cfg.warmup_fraction,
    );
    let mut opt = OptimizerState::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        clip_norm: Some(cfg.clip_norm),
        ..AdamWConfig::default()
    });
    let mut params = encoder.flat_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for batch in make_batches(corpus, &lookup, cfg.batch_size, &mut rng) {
            let batch_rows: Vec<_> = batch.iter().map(|&i| rows[i].clone()).collect();
            let masks = channel_masks(corpus, &batch, &lookup);
            let Some(b) = batch_loss(&params, &cfg, &batch_rows, &masks, true)? else {
                report.warnings.push(format!(
                    "epoch {epoch}: skipped a batch with no contributing anchors"
                ));
                continue;
            };
            let lr = schedule.lr(opt.step);
            adamw_step(&mut params, &b.grads, &mut opt, lr)?;
            losses.push(b.total);
        }
        let mean = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        report.history.push(mean);

        if let Some((val, val_lookup)) = &val_lookup {
            encoder.set_flat_params(params.clone());
            let v = evaluate_loss(val, val_lookup, &encoder)?;
            report.validation_history.push(v);
            if let Some(v) = v {
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, epoch, params.clone()));
                }
            }
        }
    }
    report.steps = opt.step;
    match best {
        Some((_, epoch, kept)) => {
            report.best_epoch = Some(epoch);
            encoder.set_flat_params(kept);
        }
        None => encoder.set_flat_params(params),
    }
    Ok((encoder, report))
}

/// Central-difference check of the full batch loss against its analytic
/// gradient, over every parameter of `encoder` (embedding table included).
pub fn gradcheck_batch(
    corpus: &Corpus,
    pairs: &PairSet,
    encoder: &Encoder,
    h: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    let lookup = pairs.lookup();
    let batch: Vec<usize> = (0..corpus.len()).collect();
    let rows: Vec<_> = corpus
        .records()
        .iter()
        .map(|r| encoder.provider.vocab.rows(r))
        .collect();
    let masks = channel_masks(corpus, &batch, &lookup);
    let cfg = MgateConfig {
        train_embeddings: true,
        ..encoder.config
    };
    let params = encoder.flat_params();
    let analytic = batch_loss(&params, &cfg, &rows, &masks, true)?.ok_or(Error::DegenerateBatch)?;
    check_against(
        |p| {
            Ok(batch_loss(p, &cfg, &rows, &masks, false)?
                .ok_or(Error::DegenerateBatch)?
                .total)
        },
        &params,
        &analytic.grads,
        h,
        tol,
    )
}

/// Mean critic score over the labelled positive and negative pairs of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSeparation {
    pub channel: Channel,
    pub positive_mean: Option<f64>,
    pub negative_mean: Option<f64>,
}

impl CriticSeparation {
    /// `positive_mean - negative_mean`, when both classes occur.
    pub fn gap(&self) -> Option<f64> {
        Some(self.positive_mean? - self.negative_mean?)
    }
}

/// Critic separation of every channel over the pairs of `pairs` whose ids
/// are in `corpus`.
pub fn critic_separation(
    encoder: &Encoder,
    corpus: &Corpus,
    pairs: &PairSet,
) -> Result<[CriticSeparation; 4]> {
    let embeddings: HashMap<&str, _> = corpus
        .records()
        .iter()
        .map(|r| Ok((r.id.as_str(), encoder.encode(r)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(4);
    for c in Channel::ALL {
        let proj = encoder.params.projection(c);
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for l in &pairs.labels {
            let (Some(a), Some(b)) = (
                embeddings.get(l.anchor_id.as_str()),
                embeddings.get(l.other_id.as_str()),
            ) else {
                continue;
            };
            let Some(bit) = l.bits.get(c) else { continue };
            let g = critic(a.channel(c), b.channel(c), &proj)?;
            if bit {
                pos.push(g)
            } else {
                neg.push(g)
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        out.push(CriticSeparation {
            channel: c,
            positive_mean: mean(&pos),
            negative_mean: mean(&neg),
        });
    }
    Ok(out.try_into().expect("four channels"))
}
