//! Heuristic sentence-pair similarity and contrastive pair labelling.
//!
//! Three similarities are computed for a sentence pair:
//!
//! * linguistic: a Gaussian-weighted Hamming distance between the dependency
//!   and POS-pair rows of the two sentences' center words, averaged over all
//!   center pairs and squashed with `sigmoid(-D)`, then symmetrized;
//! * domain: 1 if the domain labels match exactly, else 0;
//! * sentiment: `0.5 * cos(v_a, v_b) + 0.5` over polarity count vectors.
//!
//! Thresholding the profile gives a 3-bit positive/negative label per pair.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::corpus::{
    relation_matrices, select_center_words, Corpus, Polarity, RelationMatrices, RelationRegistry,
    SentenceRecord,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicConfig {
    pub sigma: f64,
    pub theta_lig: f64,
    pub theta_dom: f64,
    pub theta_sen: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            sigma: 2.0,
            theta_lig: 0.43,
            theta_dom: 0.5,
            theta_sen: 0.8,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        for (name, v) in [
            ("theta_lig", self.theta_lig),
            ("theta_dom", self.theta_dom),
            ("theta_sen", self.theta_sen),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> [f64; 3] {
        [self.theta_lig, self.theta_dom, self.theta_sen]
    }
}

/// `W_j = exp(-(j - k)^2 / (2 sigma^2))` for `j = 1..=n`, with `k` 1-based.
pub fn gaussian_weights(k: usize, n: usize, sigma: f64) -> Result<Vec<f64>> {
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!("center {k} outside 1..={n}")));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let denom = 2.0 * sigma * sigma;
    Ok((1..=n)
        .map(|j| {
            let d = j as f64 - k as f64;
            (-(d * d) / denom).exp()
        })
        .collect())
}

/// Normalized weighted mismatch between two center rows, in `[0, 1]`.
///
/// Rows are truncated to the shorter sentence; weights are centered on
/// `center_a` (0-based) over the first sentence.
pub fn weighted_hamming(
    mats_a: &RelationMatrices,
    center_a: usize,
    mats_b: &RelationMatrices,
    center_b: usize,
    sigma: f64,
) -> Result<f64> {
    if mats_a.registry_uid() != mats_b.registry_uid() {
        return Err(Error::RegistryMismatch(
            "matrices were built against different registries".into(),
        ));
    }
    if center_a >= mats_a.size() || center_b >= mats_b.size() {
        return Err(Error::OutOfRange(format!(
            "centers ({center_a}, {center_b}) for sizes ({}, {})",
            mats_a.size(),
            mats_b.size()
        )));
    }
    let weights = gaussian_weights(center_a + 1, mats_a.size(), sigma)?;
    Ok(hamming_rows(
        &weights,
        (mats_a.dep_row(center_a), mats_a.pos_row(center_a)),
        (mats_b.dep_row(center_b), mats_b.pos_row(center_b)),
    ))
}

fn hamming_rows(weights: &[f64], a: (&[u32], &[u32]), b: (&[u32], &[u32])) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let rows_a = a.0.iter().zip(a.1);
    let rows_b = b.0.iter().zip(b.1);
    for (w, ((da, pa), (db, pb))) in weights.iter().zip(rows_a.zip(rows_b)) {
        let mismatches = u32::from(da != db) + u32::from(pa != pb);
        num += w * f64::from(mismatches);
        den += w;
    }
    num / (2.0 * den)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Symmetrized linguistic similarity in `(sigmoid(-1), 0.5]`.
pub fn linguistic_similarity(
    rec_a: &SentenceRecord,
    rec_b: &SentenceRecord,
    cfg: &HeuristicConfig,
    registry: &RelationRegistry,
) -> Result<f64> {
    let a = LinguisticView::new(rec_a, registry, cfg.sigma)?;
    let b = LinguisticView::new(rec_b, registry, cfg.sigma)?;
    Ok(a.similarity(&b))
}

/// Exact-match domain indicator after trimming.
pub fn domain_similarity(rec_a: &SentenceRecord, rec_b: &SentenceRecord) -> f64 {
    if rec_a.domain.trim() == rec_b.domain.trim() {
        1.0
    } else {
        0.0
    }
}

/// Polarity counts ordered `[positive, neutral, negative]`.
pub fn sentiment_vector(rec: &SentenceRecord) -> [u32; 3] {
    let mut v = [0; 3];
    for p in &rec.pairs {
        match p.polarity {
            Polarity::Positive => v[0] += 1,
            Polarity::Neutral => v[1] += 1,
            Polarity::Negative => v[2] += 1,
        }
    }
    v
}

pub fn sentiment_similarity_vectors(a: [u32; 3], b: [u32; 3]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na2: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum();
    let nb2: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.5;
    }
    // single sqrt keeps parallel integer vectors at exactly 1
    let cos = (dot / (na2 * nb2).sqrt()).min(1.0);
    0.5 * cos + 0.5
}

pub fn sentiment_similarity(rec_a: &SentenceRecord, rec_b: &SentenceRecord) -> f64 {
    sentiment_similarity_vectors(sentiment_vector(rec_a), sentiment_vector(rec_b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub lig: f64,
    pub dom: f64,
    pub sen: f64,
}

impl SimilarityProfile {
    pub fn as_array(&self) -> [f64; 3] {
        [self.lig, self.dom, self.sen]
    }
}

pub fn similarity_profile(
    rec_a: &SentenceRecord,
    rec_b: &SentenceRecord,
    cfg: &HeuristicConfig,
    registry: &RelationRegistry,
) -> Result<SimilarityProfile> {
    Ok(SimilarityProfile {
        lig: linguistic_similarity(rec_a, rec_b, cfg, registry)?,
        dom: domain_similarity(rec_a, rec_b),
        sen: sentiment_similarity(rec_a, rec_b),
    })
}

/// Feature bits `(lig, dom, sen)`; a bit is set iff the score reaches its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PairBits(pub [bool; 3]);

impl PairBits {
    pub fn get(&self, channel: Channel) -> Option<bool> {
        match channel {
            Channel::Avg => {
                let ones = self.0.iter().filter(|b| **b).count();
                match ones {
                    3 => Some(true),
                    0 => Some(false),
                    _ => None,
                }
            }
            c => Some(self.0[c.index()]),
        }
    }

    fn pattern(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .map(|(k, &b)| usize::from(b) << k)
            .sum()
    }
}

pub fn label_pair(profile: &SimilarityProfile, cfg: &HeuristicConfig) -> PairBits {
    let p = profile.as_array();
    let t = cfg.thresholds();
    PairBits([p[0] >= t[0], p[1] >= t[1], p[2] >= t[2]])
}

/// Per-record data needed for linguistic comparisons: center rows and weights.
#[derive(Debug, Clone)]
struct LinguisticView {
    centers: Vec<(Vec<f64>, Vec<u32>, Vec<u32>)>,
}

impl LinguisticView {
    fn new(rec: &SentenceRecord, registry: &RelationRegistry, sigma: f64) -> Result<Self> {
        let mats = relation_matrices(rec, registry)?;
        Self::from_matrices(rec, &mats, sigma)
    }

    fn from_matrices(rec: &SentenceRecord, mats: &RelationMatrices, sigma: f64) -> Result<Self> {
        let centers = select_center_words(rec);
        if centers.is_empty() {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                rule: "no center words".into(),
            });
        }
        let centers = centers
            .into_iter()
            .map(|c| {
                Ok((
                    gaussian_weights(c + 1, mats.size(), sigma)?,
                    mats.dep_row(c).to_vec(),
                    mats.pos_row(c).to_vec(),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(LinguisticView { centers })
    }

    fn directed_distance(&self, other: &LinguisticView) -> f64 {
        let mut total = 0.0;
        for (w, dep_a, pos_a) in &self.centers {
            for (_, dep_b, pos_b) in &other.centers {
                total += hamming_rows(w, (dep_a, pos_a), (dep_b, pos_b));
            }
        }
        total / (self.centers.len() * other.centers.len()) as f64
    }

    fn similarity(&self, other: &LinguisticView) -> f64 {
        let ab = sigmoid(-self.directed_distance(other));
        let ba = sigmoid(-other.directed_distance(self));
        0.5 * (ab + ba)
    }
}

/// Precomputed per-record features for scoring many pairs of one corpus.
pub struct PairScorer<'a> {
    corpus: &'a Corpus,
    views: Vec<LinguisticView>,
    sentiments: Vec<[u32; 3]>,
    cfg: HeuristicConfig,
}

impl<'a> PairScorer<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &HeuristicConfig) -> Result<Self> {
        cfg.validate()?;
        let views = corpus
            .records()
            .iter()
            .enumerate()
            .map(|(i, rec)| LinguisticView::from_matrices(rec, &corpus.matrices(i), cfg.sigma))
            .collect::<Result<_>>()?;
        let sentiments = corpus.records().iter().map(sentiment_vector).collect();
        Ok(PairScorer {
            corpus,
            views,
            sentiments,
            cfg: *cfg,
        })
    }

    pub fn profile(&self, a: usize, b: usize) -> SimilarityProfile {
        let recs = self.corpus.records();
        SimilarityProfile {
            lig: self.views[a].similarity(&self.views[b]),
            dom: domain_similarity(&recs[a], &recs[b]),
            sen: sentiment_similarity_vectors(self.sentiments[a], self.sentiments[b]),
        }
    }

    pub fn label(&self, a: usize, b: usize) -> (SimilarityProfile, PairBits) {
        let p = self.profile(a, b);
        (p, label_pair(&p, &self.cfg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLabel {
    pub anchor_id: String,
    pub other_id: String,
    pub bits: PairBits,
    pub profile: SimilarityProfile,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

impl ClassCounts {
    /// `positive / negative`, or `None` when either class is absent.
    pub fn ratio(&self) -> Option<f64> {
        (self.positive > 0 && self.negative > 0)
            .then(|| self.positive as f64 / self.negative as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub labels: Vec<PairLabel>,
    /// Indexed by feature: lig, dom, sen.
    pub counts: [ClassCounts; 3],
}

const MAX_IMBALANCE: f64 = 3.0;

fn count_classes<'b>(bits: impl Iterator<Item = &'b PairBits>) -> [ClassCounts; 3] {
    let mut counts = [ClassCounts::default(); 3];
    for b in bits {
        for (k, &on) in b.0.iter().enumerate() {
            if on {
                counts[k].positive += 1;
            } else {
                counts[k].negative += 1;
            }
        }
    }
    counts
}

fn imbalance(counts: &[ClassCounts; 3]) -> f64 {
    let limit = MAX_IMBALANCE.ln();
    counts
        .iter()
        .filter_map(ClassCounts::ratio)
        .map(|r| (r.ln().abs() - limit).max(0.0))
        .sum()
}

/// Drops pairs from over-represented bit patterns until every feature's
/// positive:negative ratio is within `[1/3, 3]` or no single removal helps.
/// Each step removes from the most populated pattern whose removal lowers
/// the imbalance. A removal never empties a feature class that was present,
/// nor the all-ones or all-zeros pattern (the consensus classes).
fn rebalance(labels: Vec<PairLabel>, rng: &mut ChaCha8Rng) -> Vec<PairLabel> {
    let mut buckets: Vec<Vec<PairLabel>> = vec![Vec::new(); 8];
    for l in labels {
        buckets[l.bits.pattern()].push(l);
    }
    for b in &mut buckets {
        b.shuffle(rng);
    }
    let mut counts = count_classes(buckets.iter().flatten().map(|l| &l.bits));
    let mut current = imbalance(&counts);
    while current > 0.0 {
        let mut best: Option<(usize, f64, [ClassCounts; 3])> = None;
        for (pattern, bucket) in buckets.iter().enumerate() {
            let consensus = pattern == 0 || pattern == 7;
            if bucket.is_empty() || (consensus && bucket.len() == 1) {
                continue;
            }
            let mut next = counts;
            let mut empties_class = false;
            for (k, c) in next.iter_mut().enumerate() {
                let slot = if pattern >> k & 1 == 1 {
                    &mut c.positive
                } else {
                    &mut c.negative
                };
                *slot -= 1;
                empties_class |= *slot == 0;
            }
            if empties_class {
                continue;
            }
            let score = imbalance(&next);
            let better = |b: &(usize, f64, [ClassCounts; 3])| {
                let (len, best_len) = (bucket.len(), buckets[b.0].len());
                len > best_len || (len == best_len && score < b.1)
            };
            if score < current - 1e-12 && best.as_ref().is_none_or(better) {
                best = Some((pattern, score, next));
            }
        }
        let Some((pattern, score, next)) = best else {
            break;
        };
        buckets[pattern].pop();
        counts = next;
        current = score;
    }
    buckets.into_iter().flatten().collect()
}

/// Samples, labels and rebalances contrastive training pairs.
///
/// All unordered pairs are enumerated when `N^2 <= 4 * budget`; otherwise
/// `budget` distinct pairs are drawn uniformly. Output is ordered by the
/// corpus positions of `(anchor, other)`, anchor first in corpus order.
pub fn generate_pair_set(
    corpus: &Corpus,
    cfg: &HeuristicConfig,
    budget: usize,
    seed: u64,
) -> Result<PairSet> {
    if budget < 2 {
        return Err(Error::InvalidArgument(format!(
            "pair budget must be >= 2, got {budget}"
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 records to form pairs, got {n}"
        )));
    }
    let scorer = PairScorer::new(corpus, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n * (n - 1) / 2;
    let candidates: Vec<(usize, usize)> = if n * n <= budget * 4 || budget >= total {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect()
    } else {
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, total, budget).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| unrank_pair(k, n)).collect()
    };

    let recs = corpus.records();
    let labels: Vec<PairLabel> = candidates
        .into_iter()
        .map(|(i, j)| {
            let (profile, bits) = scorer.label(i, j);
            PairLabel {
                anchor_id: recs[i].id.clone(),
                other_id: recs[j].id.clone(),
                bits,
                profile,
            }
        })
        .collect();
    let mut labels = rebalance(labels, &mut rng);
    labels.sort_by_key(|l| {
        (
            corpus.position(&l.anchor_id).unwrap_or(usize::MAX),
            corpus.position(&l.other_id).unwrap_or(usize::MAX),
        )
    });
    let counts = count_classes(labels.iter().map(|l| &l.bits));
    Ok(PairSet { labels, counts })
}

/// Maps a linear index over `{(i, j) : i < j < n}` in row-major order to the pair.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    unreachable!("rank out of range")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLabel {
    a: String,
    b: String,
    bits: [u8; 3],
    profile: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSummary {
    lig: ClassCounts,
    dom: ClassCounts,
    sen: ClassCounts,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFooter {
    summary: WireSummary,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Bits keyed by unordered id pair (both orientations present).
    pub fn lookup(&self) -> HashMap<(&str, &str), PairBits> {
        let mut map = HashMap::with_capacity(self.labels.len() * 2);
        for l in &self.labels {
            map.insert((l.anchor_id.as_str(), l.other_id.as_str()), l.bits);
            map.insert((l.other_id.as_str(), l.anchor_id.as_str()), l.bits);
        }
        map
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for l in &self.labels {
            let wire = WireLabel {
                a: l.anchor_id.clone(),
                b: l.other_id.clone(),
                bits: l.bits.0.map(u8::from),
                profile: l.profile.as_array(),
            };
            writeln!(w, "{}", serde_json::to_string(&wire)?).map_err(io)?;
        }
        let footer = WireFooter {
            summary: WireSummary {
                lig: self.counts[0],
                dom: self.counts[1],
                sen: self.counts[2],
            },
        };
        writeln!(w, "{}", serde_json::to_string(&footer)?).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<PairSet> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut labels = Vec::new();
        let mut footer = None;
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(Error::MalformedLine {
                    line: k + 1,
                    message: "content after summary footer".into(),
                });
            }
            let malformed = |e: serde_json::Error| Error::MalformedLine {
                line: k + 1,
                message: e.to_string(),
            };
            if line.contains("\"summary\"") {
                let f: WireFooter = serde_json::from_str(&line).map_err(malformed)?;
                footer = Some([f.summary.lig, f.summary.dom, f.summary.sen]);
                continue;
            }
            let w: WireLabel = serde_json::from_str(&line).map_err(malformed)?;
            if w.bits.iter().any(|b| *b > 1) {
                return Err(Error::MalformedLine {
                    line: k + 1,
                    message: "bits must be 0 or 1".into(),
                });
            }
            if w.a == w.b {
                return Err(Error::MalformedLine {
                    line: k + 1,
                    message: "pair must join two distinct records".into(),
                });
            }
            labels.push(PairLabel {
                anchor_id: w.a,
                other_id: w.b,
                bits: PairBits(w.bits.map(|b| b == 1)),
                profile: SimilarityProfile {
                    lig: w.profile[0],
                    dom: w.profile[1],
                    sen: w.profile[2],
                },
            });
        }
        let footer =
            footer.ok_or_else(|| Error::Corrupt("pair file lacks summary footer".into()))?;
        let counts = count_classes(labels.iter().map(|l| &l.bits));
        if counts != footer {
            return Err(Error::Corrupt(
                "pair summary does not match pair lines".into(),
            ));
        }
        Ok(PairSet { labels, counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DepEdge, SentimentPair};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn record(id: &str, domain: &str, pols: &[Polarity]) -> SentenceRecord {
        let n = pols.len().max(1) + 1;
        let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        SentenceRecord {
            id: id.into(),
            domain: domain.into(),
            pos_tags: vec!["X".into(); n],
            dep_edges: (0..n)
                .map(|i| DepEdge {
                    dependent: i,
                    head: (i + 1 < n).then_some(n - 1),
                    relation: if i + 1 < n {
                        "dep".into()
                    } else {
                        "root".into()
                    },
                })
                .collect(),
            pairs: pols
                .iter()
                .enumerate()
                .map(|(i, p)| SentimentPair {
                    aspect_text: tokens[i].clone(),
                    span: (i, i),
                    polarity: *p,
                })
                .collect(),
            tokens,
        }
    }

    #[test]
    fn gaussian_examples() {
        let w = gaussian_weights(2, 3, 1.0).unwrap();
        assert!(close(w[0], 0.606_530_659_712_633_4, 1e-12));
        assert_eq!(w[1], 1.0);
        assert_eq!(w[0], w[2]);
        assert_eq!(gaussian_weights(1, 1, 2.0).unwrap(), vec![1.0]);
        assert!(gaussian_weights(0, 3, 1.0).is_err());
        assert!(gaussian_weights(4, 3, 1.0).is_err());
    }

    #[test]
    fn sentiment_vectors_follow_pos_neu_neg_order() {
        use Polarity::*;
        assert_eq!(
            sentiment_vector(&record("a", "r", &[Positive; 3])),
            [3, 0, 0]
        );
        assert_eq!(
            sentiment_vector(&record("a", "r", &[Negative, Negative, Neutral])),
            [0, 1, 2]
        );
        assert_eq!(sentiment_vector(&record("a", "r", &[Neutral])), [0, 1, 0]);
    }

    #[test]
    fn sentiment_similarity_examples() {
        assert_eq!(sentiment_similarity_vectors([2, 1, 0], [2, 1, 0]), 1.0);
        assert_eq!(sentiment_similarity_vectors([1, 0, 0], [0, 0, 1]), 0.5);
        let expected = 0.5 * std::f64::consts::FRAC_1_SQRT_2 + 0.5;
        assert!(close(
            sentiment_similarity_vectors([1, 1, 0], [1, 0, 0]),
            expected,
            1e-12
        ));
        assert!(close(expected, 0.85355, 1e-5));
        assert_eq!(sentiment_similarity_vectors([0, 0, 0], [1, 0, 0]), 0.5);
    }

    #[test]
    fn domain_similarity_is_case_sensitive() {
        let a = record("a", "laptop", &[Polarity::Positive]);
        let b = record("b", "laptop", &[Polarity::Positive]);
        let c = record("c", "hotel", &[Polarity::Positive]);
        let d = record("d", "Laptop", &[Polarity::Positive]);
        assert_eq!(domain_similarity(&a, &b), 1.0);
        assert_eq!(domain_similarity(&a, &c), 0.0);
        assert_eq!(domain_similarity(&a, &d), 0.0);
    }

    #[test]
    fn label_thresholds_are_inclusive() {
        let cfg = HeuristicConfig::default();
        let p = |lig, dom, sen| SimilarityProfile { lig, dom, sen };
        assert_eq!(label_pair(&p(0.5, 1.0, 0.9), &cfg), PairBits([true; 3]));
        assert_eq!(label_pair(&p(0.27, 0.0, 0.5), &cfg), PairBits([false; 3]));
        assert_eq!(label_pair(&p(0.43, 0.5, 0.8), &cfg), PairBits([true; 3]));
    }

    #[test]
    fn self_profile_is_identity_point() {
        let c = Corpus::from_records(vec![record(
            "a",
            "r",
            &[Polarity::Positive, Polarity::Negative],
        )])
        .unwrap();
        let r = &c.records()[0];
        let p = similarity_profile(r, r, &HeuristicConfig::default(), c.registry()).unwrap();
        assert_eq!(p.as_array(), [0.5, 1.0, 1.0]);
    }

    #[test]
    fn hamming_rejects_foreign_registry() {
        let r = record("a", "r", &[Polarity::Positive]);
        let mut r1 = RelationRegistry::new();
        let mut r2 = RelationRegistry::new();
        let m1 = crate::corpus::build_relation_matrices(&r, &mut r1);
        let m2 = crate::corpus::build_relation_matrices(&r, &mut r2);
        assert!(matches!(
            weighted_hamming(&m1, 0, &m2, 0, 1.0),
            Err(Error::RegistryMismatch(_))
        ));
        assert_eq!(weighted_hamming(&m1, 0, &m1, 0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn unrank_covers_all_pairs_in_order() {
        let n = 6;
        let all: Vec<_> = (0..n * (n - 1) / 2).map(|k| unrank_pair(k, n)).collect();
        let expected: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn pair_generation_errors() {
        let c = Corpus::from_records(vec![record("a", "r", &[Polarity::Positive])]).unwrap();
        let cfg = HeuristicConfig::default();
        assert!(generate_pair_set(&c, &cfg, 10, 0).is_err());
        let c2 = Corpus::from_records(vec![
            record("a", "r", &[Polarity::Positive]),
            record("b", "r", &[Polarity::Negative]),
        ])
        .unwrap();
        assert!(generate_pair_set(&c2, &cfg, 1, 0).is_err());
        let set = generate_pair_set(&c2, &cfg, 10, 0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels[0].anchor_id, "a");
    }

    #[test]
    fn avg_bits_are_consensus() {
        assert_eq!(PairBits([true; 3]).get(Channel::Avg), Some(true));
        assert_eq!(PairBits([false; 3]).get(Channel::Avg), Some(false));
        assert_eq!(PairBits([true, false, true]).get(Channel::Avg), None);
        assert_eq!(PairBits([true, false, true]).get(Channel::Dom), Some(false));
    }
}
