use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{names, EmbeddingProvider, Encoder, MgateConfig, MgateParams, Vocabulary};
use crate::container;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor2};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FAIMACKP";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: MgateConfig,
    vocab: Vec<String>,
    trainable_embeddings: bool,
    registry_path: Option<String>,
    history: Vec<Option<f64>>,
}

/// A trained encoder as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: Encoder,
    /// Registry snapshot the encoder's training corpus was built against.
    pub registry_path: Option<String>,
    /// Per-epoch mean loss; `None` for epochs without a usable batch.
    pub history: Vec<Option<f64>>,
    /// Hex SHA-256 of the file contents.
    pub digest: String,
}

/// Writes the encoder and returns the file digest.
pub fn save_checkpoint(
    encoder: &Encoder,
    history: &[f64],
    registry_path: Option<&str>,
    path: &Path,
) -> Result<String> {
    let meta = Meta {
        config: encoder.config,
        vocab: encoder.provider.vocab.tokens().to_vec(),
        trainable_embeddings: encoder.provider.trainable,
        registry_path: registry_path.map(str::to_string),
        history: history
            .iter()
            .map(|v| v.is_finite().then_some(*v))
            .collect(),
    };
    let flat = encoder.flat_params();
    let tensors: Vec<(&str, &Tensor2)> = flat.iter().map(|(n, t)| (n.as_str(), t)).collect();
    container::write(path, MAGIC, CHECKPOINT_VERSION, &meta, &tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let decoded = container::read::<Meta>(path, MAGIC, CHECKPOINT_VERSION)?;
    let meta = decoded.meta;
    meta.config
        .validate()
        .map_err(|e| Error::Corrupt(format!("stored config invalid: {e}")))?;
    let vocab = Vocabulary::from_tokens(meta.vocab.iter().skip(1).cloned());
    if vocab.tokens() != meta.vocab.as_slice() {
        return Err(Error::Corrupt("stored vocabulary is not canonical".into()));
    }

    let mut expected = MgateParams::expected_shapes(&meta.config);
    expected.push((
        names::EMBED.to_string(),
        (vocab.len(), meta.config.embed_dim),
    ));
    expected.sort();
    let mut found: Vec<(String, (usize, usize))> = decoded
        .tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.shape()))
        .collect();
    found.sort();
    if found != expected {
        return Err(Error::Corrupt(
            "tensor names or shapes do not match the stored config".into(),
        ));
    }

    let mut store: ParamStore = decoded.tensors.into_iter().collect();
    let table = store.remove(names::EMBED).expect("checked above");
    let encoder = Encoder {
        config: meta.config,
        provider: EmbeddingProvider {
            vocab,
            table,
            trainable: meta.trainable_embeddings,
        },
        params: MgateParams {
            store,
            shared_attention: meta.config.share_attention_params,
        },
    };
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        encoder,
        registry_path: meta.registry_path,
        history: meta.history,
        digest: decoded.digest,
    })
}
