//! Declarative pipeline configuration (TOML).
//!
//! ```toml
//! seed = 42
//! split_ratio = 0.1
//!
//! [paths]
//! corpus = "data/fixture.jsonl"
//! out_dir = "out"
//!
//! [heuristics]
//! theta_lig = 0.43
//! pair_budget = 5000
//!
//! [mgate]
//! epochs = 10
//!
//! [retrieval]
//! avg = 2
//! approximate = false
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::HeuristicConfig;
use crate::mgate::MgateConfig;
use crate::retrieval::{IndexMode, NswParams, RetrievalPolicy};

/// Artifact locations. Unset artifact paths resolve inside `out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub pairs: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub sft: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            out_dir: PathBuf::from("out"),
            pairs: None,
            registry: None,
            checkpoint: None,
            index: None,
            template: None,
            sft: None,
            predictions: None,
            word_vectors: None,
        }
    }
}

impl Paths {
    fn or_out(&self, p: &Option<PathBuf>, file: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir.join(file))
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::Config("paths.corpus is required for this command".into()))
    }

    pub fn pairs(&self) -> PathBuf {
        self.or_out(&self.pairs, "pairs.jsonl")
    }

    pub fn registry(&self) -> PathBuf {
        self.or_out(&self.registry, "registry.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.or_out(&self.checkpoint, "encoder.ckpt")
    }

    pub fn index(&self) -> PathBuf {
        self.or_out(&self.index, "index.bin")
    }

    pub fn sft(&self) -> PathBuf {
        self.or_out(&self.sft, "sft.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.or_out(&self.predictions, "predictions.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicsSection {
    pub sigma: f64,
    pub theta_lig: f64,
    pub theta_dom: f64,
    pub theta_sen: f64,
    pub pair_budget: usize,
}

impl Default for HeuristicsSection {
    fn default() -> Self {
        let h = HeuristicConfig::default();
        HeuristicsSection {
            sigma: h.sigma,
            theta_lig: h.theta_lig,
            theta_dom: h.theta_dom,
            theta_sen: h.theta_sen,
            pair_budget: 5000,
        }
    }
}

impl HeuristicsSection {
    pub fn config(&self) -> HeuristicConfig {
        HeuristicConfig {
            sigma: self.sigma,
            theta_lig: self.theta_lig,
            theta_dom: self.theta_dom,
            theta_sen: self.theta_sen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub avg: usize,
    pub lig: usize,
    pub dom: usize,
    pub sen: usize,
    pub keep_channel_order: bool,
    pub approximate: bool,
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let p = RetrievalPolicy::default();
        let n = NswParams::default();
        RetrievalSection {
            avg: p.avg,
            lig: p.lig,
            dom: p.dom,
            sen: p.sen,
            keep_channel_order: p.keep_channel_order,
            approximate: false,
            m: n.m,
            ef_construction: n.ef_construction,
            ef_search: n.ef_search,
        }
    }
}

impl RetrievalSection {
    pub fn policy(&self) -> RetrievalPolicy {
        RetrievalPolicy {
            avg: self.avg,
            lig: self.lig,
            dom: self.dom,
            sen: self.sen,
            keep_channel_order: self.keep_channel_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed for splitting, pair sampling and approximate index construction.
    pub seed: u64,
    /// Fraction of the corpus held out for validation during `train`; 0 disables.
    pub split_ratio: f64,
    pub paths: Paths,
    pub heuristics: HeuristicsSection,
    pub mgate: MgateConfig,
    pub retrieval: RetrievalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            split_ratio: 0.0,
            paths: Paths::default(),
            heuristics: HeuristicsSection::default(),
            mgate: MgateConfig::default(),
            retrieval: RetrievalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("[{name}] {m}")),
                other => other,
            })
        };
        if !(0.0..1.0).contains(&self.split_ratio) {
            return Err(Error::Config(format!(
                "split_ratio must lie in [0, 1), got {}",
                self.split_ratio
            )));
        }
        section("heuristics", self.heuristics.config().validate())?;
        if self.heuristics.pair_budget < 2 {
            return Err(Error::Config(format!(
                "[heuristics] pair_budget must be >= 2, got {}",
                self.heuristics.pair_budget
            )));
        }
        section("mgate", self.mgate.validate())?;
        section("retrieval", self.retrieval.policy().validate())?;
        if self.retrieval.approximate && (self.retrieval.m == 0 || self.retrieval.ef_search == 0) {
            return Err(Error::Config(
                "[retrieval] m and ef_search must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn index_mode(&self) -> IndexMode {
        if self.retrieval.approximate {
            IndexMode::Approximate(NswParams {
                m: self.retrieval.m,
                ef_construction: self.retrieval.ef_construction,
                ef_search: self.retrieval.ef_search,
                seed: self.seed,
            })
        } else {
            IndexMode::Exact
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let h = c.heuristics.config();
        assert_eq!((h.theta_lig, h.theta_dom, h.theta_sen), (0.43, 0.5, 0.8));
        assert_eq!(
            (c.mgate.tau, c.mgate.delta, c.mgate.batch_size),
            (0.1, 0.2, 128)
        );
        assert_eq!(c.retrieval.policy().total(), 5);
    }

    #[test]
    fn range_error_names_the_key() {
        let e = PipelineConfig::parse("[heuristics]\ntheta_lig = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("theta_lig"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "foo = 1",
            "[mgate]\nfoo = 1",
            "[paths]\nfoo = \"x\"",
            "[bar]\n",
        ] {
            let e = PipelineConfig::parse(text).unwrap_err();
            assert!(e.to_string().contains("unknown"), "{text}: {e}");
        }
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let e = PipelineConfig::parse("seed = 1\n[mgate]\ntau = \n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
