//! Multi-head graph attention encoder.
//!
//! Each sentence is embedded token by token, then three feature heads
//! (`lig`, `dom`, `sen`) each build an adaptive adjacency
//! `A = sigmoid(H W Hᵀ)`, run masked graph attention over neighbors with
//! `A_ij > delta`, layer-normalize and mean-pool into a graph-level vector.
//! The fourth vector (`avg`) is the mean of the three heads.

mod checkpoint;
mod forward;
mod loss;
mod train;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::corpus::{Corpus, SentenceRecord};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor2};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{adaptive_adjacency, attention_layer, critic, embed_tokens, encode_sentence};
pub use loss::{contrastive_loss, total_loss, ChannelMasks};
pub use train::{
    batch_loss, critic_separation, gradcheck_batch, make_batches, pair_masks, train_encoder,
    train_encoder_with_validation, CriticSeparation, TrainReport,
};

pub const UNK_TOKEN: &str = "<unk>";

/// Half-width of the random embedding table. Small next to the layer-norm
/// scale, so token updates move the heads quickly.
pub const EMBEDDING_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgateConfig {
    pub embed_dim: usize,
    pub delta: f64,
    pub tau: f64,
    pub betas: [f64; 3],
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_fraction: f64,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
    pub share_attention_params: bool,
    pub train_embeddings: bool,
}

impl Default for MgateConfig {
    fn default() -> Self {
        MgateConfig {
            embed_dim: 64,
            delta: 0.2,
            tau: 0.1,
            betas: [1.0, 1.0, 1.0],
            lr: 2e-4,
            epochs: 10,
            batch_size: 128,
            seed: 42,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_fraction: 0.05,
            leaky_slope: 0.01,
            layer_norm_eps: 1e-5,
            share_attention_params: false,
            train_embeddings: true,
        }
    }
}

impl MgateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return bad(format!("betas must be non-negative, got {:?}", self.betas));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.weight_decay < 0.0 || self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("weight_decay must be >= 0 and clip_norm > 0".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 || self.leaky_slope < 0.0 {
            return bad("layer_norm_eps must be > 0 and leaky_slope >= 0".into());
        }
        Ok(())
    }
}

/// Token-to-row lookup. Row 0 is the unknown-token row.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocabulary {
        let mut v = Vocabulary {
            tokens: vec![UNK_TOKEN.to_string()],
            index: HashMap::from([(UNK_TOKEN.to_string(), 0)]),
        };
        for t in tokens {
            let t = normalize_token(&t);
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Vocabulary over every token of the corpus, in first-encounter order.
    pub fn from_corpus(corpus: &Corpus) -> Vocabulary {
        Self::from_tokens(
            corpus
                .records()
                .iter()
                .flat_map(|r| r.tokens.iter().cloned()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row(&self, token: &str) -> usize {
        self.index
            .get(&normalize_token(token))
            .copied()
            .unwrap_or(0)
    }

    pub fn rows(&self, rec: &SentenceRecord) -> Vec<usize> {
        rec.tokens.iter().map(|t| self.row(t)).collect()
    }
}

fn normalize_token(t: &str) -> String {
    t.to_lowercase()
}

/// Trainable lookup table standing in for a contextual token encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProvider {
    pub vocab: Vocabulary,
    pub table: Tensor2,
    pub trainable: bool,
}

impl EmbeddingProvider {
    pub fn zeros(vocab: Vocabulary, dim: usize) -> EmbeddingProvider {
        let table = Tensor2::zeros(vocab.len(), dim);
        EmbeddingProvider {
            vocab,
            table,
            trainable: true,
        }
    }

    /// Uniform `(-EMBEDDING_INIT_SCALE, EMBEDDING_INIT_SCALE)` initialization.
    pub fn random(vocab: Vocabulary, dim: usize, seed: u64) -> EmbeddingProvider {
        EmbeddingProvider::random_with_scale(vocab, dim, seed, EMBEDDING_INIT_SCALE)
    }

    /// Uniform `(-scale, scale)` initialization.
    pub fn random_with_scale(
        vocab: Vocabulary,
        dim: usize,
        seed: u64,
        scale: f64,
    ) -> EmbeddingProvider {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0);
        let b = scale;
        let table = Tensor2::from_fn(vocab.len(), dim, |_, _| rng.random_range(-b..b));
        EmbeddingProvider {
            vocab,
            table,
            trainable: true,
        }
    }

    /// Overwrites rows of known tokens from a whitespace-separated text file
    /// (`token v1 v2 ... vd` per line). Returns how many rows were set.
    pub fn load_word_vectors(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dim = self.table.cols();
        let mut set = 0;
        for (k, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedLine {
                    line: k + 1,
                    message: format!("bad vector component: {e}"),
                })?;
            if values.len() != dim {
                return Err(Error::MalformedLine {
                    line: k + 1,
                    message: format!("expected {dim} components, got {}", values.len()),
                });
            }
            let t = normalize_token(token);
            if let Some(&row) = self.vocab.index.get(&t) {
                self.table.row_mut(row).copy_from_slice(&values);
                set += 1;
            }
        }
        Ok(set)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor2 {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Per-head attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d x d` transform applied to token vectors.
    pub w_a: Tensor2,
    /// `2 x d`: row 0 scores the attending token, row 1 the neighbor.
    pub a: Tensor2,
    pub gamma: Tensor2,
    pub beta: Tensor2,
}

/// Two-layer projection used inside the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub w1: Tensor2,
    pub b1: Tensor2,
    pub w2: Tensor2,
    pub b2: Tensor2,
}

/// Parameter names for the store behind [`MgateParams`].
pub mod names {
    use crate::channel::Channel;

    pub const EMBED: &str = "embed";

    pub fn adjacency(f: Channel) -> String {
        format!("adj.{f}")
    }

    /// Attention parameter prefix; shared across heads when requested.
    pub fn attention(f: Channel, shared: bool) -> String {
        if shared {
            "att.shared".to_string()
        } else {
            format!("att.{f}")
        }
    }

    pub fn projection(c: Channel) -> String {
        format!("proj.{c}")
    }
}

/// Every learnable tensor except the embedding table, by name.
#[derive(Debug, Clone, PartialEq)]
pub struct MgateParams {
    pub store: ParamStore,
    pub shared_attention: bool,
}

impl MgateParams {
    /// Uniform fan-in initialization for weights; zero biases; unit LayerNorm gain.
    pub fn init(cfg: &MgateConfig) -> MgateParams {
        let d = cfg.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        for f in Channel::FEATURES {
            store.insert(names::adjacency(f), uniform(&mut rng, d, d, d));
        }
        let heads: &[Channel] = if cfg.share_attention_params {
            &Channel::FEATURES[..1]
        } else {
            &Channel::FEATURES
        };
        for &f in heads {
            let p = names::attention(f, cfg.share_attention_params);
            store.insert(format!("{p}.w"), uniform(&mut rng, d, d, d));
            store.insert(format!("{p}.a"), uniform(&mut rng, 2, d, d));
            store.insert(format!("{p}.gamma"), Tensor2::filled(1, d, 1.0));
            store.insert(format!("{p}.beta"), Tensor2::zeros(1, d));
        }
        for c in Channel::ALL {
            let p = names::projection(c);
            store.insert(format!("{p}.w1"), uniform(&mut rng, d, d, d));
            store.insert(format!("{p}.b1"), Tensor2::zeros(1, d));
            store.insert(format!("{p}.w2"), uniform(&mut rng, d, d, d));
            store.insert(format!("{p}.b2"), Tensor2::zeros(1, d));
        }
        MgateParams {
            store,
            shared_attention: cfg.share_attention_params,
        }
    }

    pub fn adjacency(&self, f: Channel) -> &Tensor2 {
        &self.store[&names::adjacency(f)]
    }

    pub fn head(&self, f: Channel) -> HeadParams {
        let p = names::attention(f, self.shared_attention);
        HeadParams {
            w_a: self.store[&format!("{p}.w")].clone(),
            a: self.store[&format!("{p}.a")].clone(),
            gamma: self.store[&format!("{p}.gamma")].clone(),
            beta: self.store[&format!("{p}.beta")].clone(),
        }
    }

    pub fn projection(&self, c: Channel) -> ProjectionParams {
        let p = names::projection(c);
        ProjectionParams {
            w1: self.store[&format!("{p}.w1")].clone(),
            b1: self.store[&format!("{p}.b1")].clone(),
            w2: self.store[&format!("{p}.w2")].clone(),
            b2: self.store[&format!("{p}.b2")].clone(),
        }
    }

    /// Expected shape of every parameter for this configuration.
    pub fn expected_shapes(cfg: &MgateConfig) -> Vec<(String, (usize, usize))> {
        MgateParams::init(cfg)
            .store
            .into_iter()
            .map(|(name, t)| (name, t.shape()))
            .collect()
    }
}

/// The four graph-level vectors of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbeddings {
    pub lig: Vec<f64>,
    pub dom: Vec<f64>,
    pub sen: Vec<f64>,
    pub avg: Vec<f64>,
}

impl FeatureEmbeddings {
    pub fn channel(&self, c: Channel) -> &[f64] {
        match c {
            Channel::Lig => &self.lig,
            Channel::Dom => &self.dom,
            Channel::Sen => &self.sen,
            Channel::Avg => &self.avg,
        }
    }
}

/// Embedding provider, encoder weights and configuration together.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: MgateConfig,
    pub provider: EmbeddingProvider,
    pub params: MgateParams,
}

impl Encoder {
    /// Fresh encoder with a random table over the corpus vocabulary.
    pub fn init(corpus: &Corpus, cfg: &MgateConfig) -> Result<Encoder> {
        cfg.validate()?;
        let mut provider =
            EmbeddingProvider::random(Vocabulary::from_corpus(corpus), cfg.embed_dim, cfg.seed);
        provider.trainable = cfg.train_embeddings;
        Ok(Encoder {
            config: *cfg,
            provider,
            params: MgateParams::init(cfg),
        })
    }

    /// Like [`Encoder::init`] with the embedding table drawn from
    /// `(-sqrt(1/d), sqrt(1/d))`, the weight-matrix scale. At the default
    /// table scale a finite-difference step of 1e-5 is about 1% of each entry.
    pub fn init_for_gradcheck(corpus: &Corpus, cfg: &MgateConfig) -> Result<Encoder> {
        let mut e = Encoder::init(corpus, cfg)?;
        let scale = (1.0 / cfg.embed_dim as f64).sqrt();
        e.provider = EmbeddingProvider::random_with_scale(
            Vocabulary::from_corpus(corpus),
            cfg.embed_dim,
            cfg.seed,
            scale,
        );
        e.provider.trainable = cfg.train_embeddings;
        Ok(e)
    }

    pub fn encode(&self, rec: &SentenceRecord) -> Result<FeatureEmbeddings> {
        encode_sentence(rec, &self.provider, &self.params, &self.config)
    }

    /// All tensors including the embedding table under [`names::EMBED`].
    pub fn flat_params(&self) -> ParamStore {
        let mut store = self.params.store.clone();
        store.insert(names::EMBED.to_string(), self.provider.table.clone());
        store
    }

    pub fn set_flat_params(&mut self, mut store: ParamStore) {
        if let Some(t) = store.remove(names::EMBED) {
            self.provider.table = t;
        }
        self.params.store = store;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_reserves_unk_row() {
        let v = Vocabulary::from_tokens(["Food".to_string(), "great".into(), "food".into()]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.row("food"), 1);
        assert_eq!(v.row("FOOD"), 1);
        assert_eq!(v.row("never-seen"), 0);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = MgateConfig::default();
        assert_eq!(
            (c.delta, c.tau, c.betas, c.lr, c.epochs, c.batch_size),
            (0.2, 0.1, [1.0; 3], 2e-4, 10, 128)
        );
        c.validate().unwrap();
        assert!(MgateConfig { tau: 1.0, ..c }.validate().is_err());
        assert!(MgateConfig { delta: 1.0, ..c }.validate().is_err());
        assert!(MgateConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn init_shapes_and_ranges() {
        let cfg = MgateConfig {
            embed_dim: 4,
            ..Default::default()
        };
        let p = MgateParams::init(&cfg);
        assert_eq!(p.store.len(), 3 + 3 * 4 + 4 * 4);
        let bound = 0.5;
        for f in Channel::FEATURES {
            assert!(p.adjacency(f).data().iter().all(|v| v.abs() < bound));
            let h = p.head(f);
            assert_eq!(h.a.shape(), (2, 4));
            assert!(h.gamma.data().iter().all(|v| *v == 1.0));
            assert!(h.beta.data().iter().all(|v| *v == 0.0));
        }
        let shapes = MgateParams::expected_shapes(&cfg);
        for (name, shape) in shapes {
            assert_eq!(p.store[&name].shape(), shape, "{name}");
        }
        let shared = MgateParams::init(&MgateConfig {
            share_attention_params: true,
            ..cfg
        });
        assert_eq!(shared.store.len(), 3 + 4 + 4 * 4);
        assert_eq!(shared.head(Channel::Lig), shared.head(Channel::Sen));
    }

    #[test]
    fn word_vectors_override_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "food 1 2\nunseen 3 4\n").unwrap();
        let mut p = EmbeddingProvider::zeros(Vocabulary::from_tokens(["food".to_string()]), 2);
        assert_eq!(p.load_word_vectors(&path).unwrap(), 1);
        assert_eq!(p.table.row(1), &[1.0, 2.0]);
        std::fs::write(&path, "food 1\n").unwrap();
        assert!(p.load_word_vectors(&path).is_err());
    }
}
