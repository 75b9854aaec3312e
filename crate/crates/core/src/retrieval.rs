//! Per-channel nearest-neighbor indexes over training-set embeddings and
//! feature-aware exemplar retrieval.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::container;
use crate::corpus::{Corpus, RelationRegistry, SentenceRecord};
use crate::error::{Error, Result};
use crate::heuristics::{label_pair, HeuristicConfig, PairScorer};
use crate::mgate::{Checkpoint, Encoder};
use crate::numerics::Tensor2;

pub const INDEX_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FAIMAIDX";

/// Navigable small-world graph parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NswParams {
    /// Links made per inserted node; lists are pruned to `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for NswParams {
    fn default() -> Self {
        NswParams {
            m: 8,
            ef_construction: 64,
            ef_search: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum IndexMode {
    Exact,
    Approximate(NswParams),
}

#[derive(Debug, Clone, PartialEq)]
struct Graph {
    neighbors: Vec<Vec<usize>>,
    entry: usize,
}

/// Immutable search set: one `N x d` matrix per channel over the same ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    ids: Vec<String>,
    matrices: [Tensor2; 4],
    mode: IndexMode,
    checkpoint_digest: Option<String>,
    graphs: Option<[Graph; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exemplar {
    pub record_id: String,
    pub channel: Channel,
    /// Squared L2 distance in the channel's embedding space.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub query_id: String,
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn ids(&self) -> Vec<&str> {
        self.exemplars
            .iter()
            .map(|e| e.record_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalPolicy {
    pub avg: usize,
    pub lig: usize,
    pub dom: usize,
    pub sen: usize,
    /// Keep exemplars grouped in fill order instead of sorting by distance.
    pub keep_channel_order: bool,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        RetrievalPolicy {
            avg: 2,
            lig: 1,
            dom: 1,
            sen: 1,
            keep_channel_order: false,
        }
    }
}

impl RetrievalPolicy {
    /// One exemplar per feature channel and the remaining `k - 3` from Avg.
    pub fn for_k(k: usize) -> Result<RetrievalPolicy> {
        if k < 3 {
            return Err(Error::InvalidArgument(format!(
                "k must be at least 3, got {k}"
            )));
        }
        Ok(RetrievalPolicy {
            avg: k - 3,
            ..RetrievalPolicy::default()
        })
    }

    pub fn total(&self) -> usize {
        self.avg + self.lig + self.dom + self.sen
    }

    pub fn quota(&self, c: Channel) -> usize {
        match c {
            Channel::Lig => self.lig,
            Channel::Dom => self.dom,
            Channel::Sen => self.sen,
            Channel::Avg => self.avg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() < 3 {
            return Err(Error::Config(format!(
                "retrieval policy must request at least 3 exemplars, got {}",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Fill order of [`retrieve_exemplars`].
pub const FILL_ORDER: [Channel; 4] = [Channel::Avg, Channel::Lig, Channel::Dom, Channel::Sen];

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(distance, id)` ordering used everywhere results are ranked.
fn rank_cmp(a: (f64, &str), b: (f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

#[derive(PartialEq)]
struct Ranked {
    dist: f64,
    idx: usize,
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.idx.cmp(&other.idx))
    }
}

fn search_graph(data: &Tensor2, graph: &Graph, query: &[f64], ef: usize) -> Vec<usize> {
    let ef = ef.max(1);
    let mut visited = HashSet::new();
    let mut frontier = BinaryHeap::new();
    let mut best: BinaryHeap<Ranked> = BinaryHeap::new();
    let d0 = squared_l2(data.row(graph.entry), query);
    visited.insert(graph.entry);
    frontier.push(Reverse(Ranked {
        dist: d0,
        idx: graph.entry,
    }));
    best.push(Ranked {
        dist: d0,
        idx: graph.entry,
    });
    while let Some(Reverse(cur)) = frontier.pop() {
        if best.len() >= ef && cur.dist > best.peek().expect("non-empty").dist {
            break;
        }
        for &nb in &graph.neighbors[cur.idx] {
            if !visited.insert(nb) {
                continue;
            }
            let d = squared_l2(data.row(nb), query);
            if best.len() < ef || d < best.peek().expect("non-empty").dist {
                frontier.push(Reverse(Ranked { dist: d, idx: nb }));
                best.push(Ranked { dist: d, idx: nb });
                if best.len() > ef {
                    best.pop();
                }
            }
        }
    }
    best.into_sorted_vec().into_iter().map(|r| r.idx).collect()
}

fn build_graph(data: &Tensor2, p: &NswParams) -> Graph {
    let n = data.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(p.seed));
    let mut graph = Graph {
        neighbors: vec![Vec::new(); n],
        entry: order.first().copied().unwrap_or(0),
    };
    let cap = 2 * p.m.max(1);
    for &node in order.iter().skip(1) {
        let found = search_graph(data, &graph, data.row(node), p.ef_construction.max(p.m));
        for &nb in found.iter().take(p.m.max(1)) {
            graph.neighbors[node].push(nb);
            graph.neighbors[nb].push(node);
            if graph.neighbors[nb].len() > cap {
                let row = data.row(nb);
                let mut list = std::mem::take(&mut graph.neighbors[nb]);
                list.sort_by(|&a, &b| {
                    squared_l2(data.row(a), row)
                        .total_cmp(&squared_l2(data.row(b), row))
                        .then(a.cmp(&b))
                });
                // never drop the link just made, so the new node stays reachable
                list.truncate(cap);
                if !list.contains(&node) {
                    list.pop();
                    list.push(node);
                }
                graph.neighbors[nb] = list;
            }
        }
    }
    graph
}

impl FeatureIndex {
    /// Encodes every sentence of `corpus` once.
    pub fn from_encoder(
        corpus: &Corpus,
        encoder: &Encoder,
        mode: IndexMode,
        checkpoint_digest: Option<String>,
    ) -> Result<FeatureIndex> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let d = encoder.config.embed_dim;
        let mut data: [Vec<f64>; 4] = Default::default();
        for rec in corpus.records() {
            let e = encoder.encode(rec)?;
            for c in Channel::ALL {
                data[c.index()].extend_from_slice(e.channel(c));
            }
        }
        let n = corpus.len();
        let matrices = data.map(|v| Tensor2::new(n, d, v).expect("finite embeddings"));
        let ids = corpus.records().iter().map(|r| r.id.clone()).collect();
        Self::from_parts(ids, matrices, mode, checkpoint_digest)
    }

    fn from_parts(
        ids: Vec<String>,
        matrices: [Tensor2; 4],
        mode: IndexMode,
        checkpoint_digest: Option<String>,
    ) -> Result<FeatureIndex> {
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        let shape = matrices[0].shape();
        if shape.0 != ids.len() || matrices.iter().any(|m| m.shape() != shape) {
            return Err(Error::shape(
                "FeatureIndex",
                format!(
                    "{} ids with matrices {:?}",
                    ids.len(),
                    matrices.each_ref().map(|m| m.shape())
                ),
            ));
        }
        let graphs = match mode {
            IndexMode::Exact => None,
            IndexMode::Approximate(p) => Some(matrices.each_ref().map(|m| build_graph(m, &p))),
        };
        Ok(FeatureIndex {
            ids,
            matrices,
            mode,
            checkpoint_digest,
            graphs,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].cols()
    }

    pub fn matrix(&self, c: Channel) -> &Tensor2 {
        &self.matrices[c.index()]
    }

    pub fn checkpoint_digest(&self) -> Option<&str> {
        self.checkpoint_digest.as_deref()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    /// Writes the index and returns the file digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let meta = IndexMeta {
            ids: self.ids.clone(),
            mode: self.mode,
            checkpoint_digest: self.checkpoint_digest.clone(),
        };
        let tensors: Vec<(&str, &Tensor2)> = Channel::ALL
            .iter()
            .map(|c| (c.name(), &self.matrices[c.index()]))
            .collect();
        container::write(path, MAGIC, INDEX_VERSION, &meta, &tensors)
    }

    /// Reads an index; approximate graphs are rebuilt from the stored parameters.
    pub fn load(path: &Path) -> Result<FeatureIndex> {
        let decoded = container::read::<IndexMeta>(path, MAGIC, INDEX_VERSION)?;
        let mut by_name: BTreeMap<String, Tensor2> = decoded.tensors.into_iter().collect();
        let mut take = |c: Channel| {
            by_name
                .remove(c.name())
                .ok_or_else(|| Error::Corrupt(format!("index is missing the {c} matrix")))
        };
        let matrices = [
            take(Channel::Lig)?,
            take(Channel::Dom)?,
            take(Channel::Sen)?,
            take(Channel::Avg)?,
        ];
        let meta = decoded.meta;
        Self::from_parts(meta.ids, matrices, meta.mode, meta.checkpoint_digest)
            .map_err(|e| Error::Corrupt(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexMeta {
    ids: Vec<String>,
    mode: IndexMode,
    checkpoint_digest: Option<String>,
}

/// Builds the search set from a loaded checkpoint. When the checkpoint
/// names a registry snapshot, `corpus` must have been built against an
/// identical registry.
pub fn build_index(
    corpus: &Corpus,
    checkpoint: &Checkpoint,
    mode: IndexMode,
) -> Result<FeatureIndex> {
    if let Some(path) = &checkpoint.registry_path {
        let snapshot = RelationRegistry::load(Path::new(path))?;
        if &snapshot != corpus.registry() {
            return Err(Error::RegistryMismatch(format!(
                "corpus registry ({} POS pairs, {} relations) differs from the checkpoint's snapshot {path} ({} POS pairs, {} relations)",
                corpus.registry().pos_pair_count(),
                corpus.registry().dep_count(),
                snapshot.pos_pair_count(),
                snapshot.dep_count()
            )));
        }
    }
    FeatureIndex::from_encoder(
        corpus,
        &checkpoint.encoder,
        mode,
        Some(checkpoint.digest.clone()),
    )
}

/// The `k` stored vectors nearest to `query` in one channel, ascending by
/// squared L2 distance with ties broken by id.
pub fn nearest(
    index: &FeatureIndex,
    query: &[f64],
    channel: Channel,
    k: usize,
    exclude: &[&str],
) -> Result<Vec<Exemplar>> {
    if query.len() != index.dim() {
        return Err(Error::shape(
            "nearest",
            format!(
                "query of length {} for dimension {}",
                query.len(),
                index.dim()
            ),
        ));
    }
    let excluded: HashSet<&str> = exclude.iter().copied().collect();
    let available = index
        .ids
        .iter()
        .filter(|id| !excluded.contains(id.as_str()))
        .count();
    if k > available {
        return Err(Error::OutOfRange(format!(
            "k = {k} exceeds the {available} indexed sentences left after exclusions"
        )));
    }
    let data = &index.matrices[channel.index()];
    let candidates: Vec<usize> = match &index.graphs {
        None => (0..index.len()).collect(),
        Some(graphs) => {
            let IndexMode::Approximate(p) = index.mode else {
                unreachable!("graphs exist only in approximate mode")
            };
            let graph = &graphs[channel.index()];
            let found = search_graph(data, graph, query, p.ef_search.max(k + excluded.len()));
            let kept = found
                .iter()
                .filter(|&&i| !excluded.contains(index.ids[i].as_str()))
                .count();
            if kept >= k {
                found
            } else {
                search_graph(data, graph, query, index.len())
            }
        }
    };
    let mut scored: Vec<(f64, usize)> = candidates
        .into_iter()
        .filter(|&i| !excluded.contains(index.ids[i].as_str()))
        .map(|i| (squared_l2(data.row(i), query), i))
        .collect();
    scored.sort_by(|a, b| rank_cmp((a.0, &index.ids[a.1]), (b.0, &index.ids[b.1])));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(distance, i)| Exemplar {
            record_id: index.ids[i].clone(),
            channel,
            distance,
        })
        .collect())
}

/// Exemplars for `query` under `policy`: channels filled Avg, Lig, Dom, Sen,
/// each skipping ids already chosen and the query's own id.
pub fn retrieve_exemplars(
    index: &FeatureIndex,
    query: &SentenceRecord,
    encoder: &Encoder,
    policy: &RetrievalPolicy,
) -> Result<ExemplarSet> {
    policy.validate()?;
    let emb = encoder.encode(query)?;
    let mut exclude: Vec<String> = Vec::new();
    if index.contains(&query.id) {
        exclude.push(query.id.clone());
    }
    let available = index.len() - exclude.len();
    if policy.total() > available {
        return Err(Error::OutOfRange(format!(
            "policy asks for {} exemplars but only {available} indexed sentences are eligible",
            policy.total()
        )));
    }
    let mut exemplars = Vec::with_capacity(policy.total());
    for c in FILL_ORDER {
        let q = policy.quota(c);
        if q == 0 {
            continue;
        }
        let refs: Vec<&str> = exclude.iter().map(String::as_str).collect();
        let got = nearest(index, emb.channel(c), c, q, &refs)?;
        exclude.extend(got.iter().map(|e| e.record_id.clone()));
        exemplars.extend(got);
    }
    if !policy.keep_channel_order {
        exemplars.sort_by(|a, b| rank_cmp((a.distance, &a.record_id), (b.distance, &b.record_id)));
    }
    Ok(ExemplarSet {
        query_id: query.id.clone(),
        exemplars,
    })
}

/// Hit counts for the three feature channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ChannelHits {
    pub queries: usize,
    /// Exemplars judged, per feature channel (lig, dom, sen).
    pub judged: [usize; 3],
    pub hits: [usize; 3],
}

impl ChannelHits {
    /// Fraction of the channel's exemplars whose heuristic bit against the
    /// query is set; `None` for Avg or when nothing was judged.
    pub fn rate(&self, c: Channel) -> Option<f64> {
        if c == Channel::Avg || self.judged[c.index()] == 0 {
            return None;
        }
        Some(self.hits[c.index()] as f64 / self.judged[c.index()] as f64)
    }

    fn add(&mut self, other: &ChannelHits) {
        self.queries += other.queries;
        for k in 0..3 {
            self.judged[k] += other.judged[k];
            self.hits[k] += other.hits[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitRateReport {
    pub per_domain: BTreeMap<String, ChannelHits>,
    pub overall: ChannelHits,
}

impl fmt::Display for HitRateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self
            .per_domain
            .iter()
            .map(|(d, h)| (d.as_str(), h))
            .chain([("overall", &self.overall)]);
        for (name, h) in rows {
            write!(f, "hit_rate domain={name} queries={}", h.queries)?;
            for c in Channel::FEATURES {
                match h.rate(c) {
                    Some(r) => write!(f, " {c}={r:.4}")?,
                    None => write!(f, " {c}=na")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Retrieves exemplars for every sentence of `eval` and judges each feature
/// channel's exemplars with the heuristic thresholds against the query.
pub fn retrieval_hit_rate(
    index: &FeatureIndex,
    train: &Corpus,
    eval: &Corpus,
    encoder: &Encoder,
    cfg: &HeuristicConfig,
    policy: &RetrievalPolicy,
) -> Result<HitRateReport> {
    // One corpus over both sides so linguistic scores share a registry.
    let mut records: Vec<SentenceRecord> = train.records().to_vec();
    records.extend(
        eval.records()
            .iter()
            .filter(|r| train.get(&r.id).is_none())
            .cloned(),
    );
    let joint = Corpus::from_records_with_registry(records, train.registry().clone())?;
    let scorer = PairScorer::new(&joint, cfg)?;

    let mut per_domain: BTreeMap<String, ChannelHits> = BTreeMap::new();
    for q in eval.records() {
        let qpos = joint.position(&q.id).expect("query is in the joint corpus");
        let set = retrieve_exemplars(index, q, encoder, policy)?;
        let mut h = ChannelHits {
            queries: 1,
            ..ChannelHits::default()
        };
        for ex in &set.exemplars {
            let Some(k) = Channel::FEATURES.iter().position(|&c| c == ex.channel) else {
                continue;
            };
            let epos = joint.position(&ex.record_id).ok_or_else(|| {
                Error::UnknownId(format!(
                    "{} is indexed but not in the training corpus",
                    ex.record_id
                ))
            })?;
            let bits = label_pair(&scorer.profile(qpos, epos), cfg);
            h.judged[k] += 1;
            h.hits[k] += usize::from(bits.0[k]);
        }
        per_domain.entry(q.domain.clone()).or_default().add(&h);
    }
    let mut overall = ChannelHits::default();
    for h in per_domain.values() {
        overall.add(h);
    }
    Ok(HitRateReport {
        per_domain,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_from(points: &[[f64; 2]], mode: IndexMode) -> FeatureIndex {
        let n = points.len();
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let m = Tensor2::new(n, 2, flat).unwrap();
        let ids = (0..n).map(|i| format!("r{i:02}")).collect();
        FeatureIndex::from_parts(ids, [m.clone(), m.clone(), m.clone(), m], mode, None).unwrap()
    }

    #[test]
    fn stored_vector_comes_first() {
        let idx = index_from(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], IndexMode::Exact);
        let got = nearest(&idx, &[1.0, 0.0], Channel::Dom, 3, &[]).unwrap();
        assert_eq!(got[0].record_id, "r01");
        assert_eq!(got[0].distance, 0.0);
        let ids: Vec<_> = got.iter().map(|e| e.record_id.as_str()).collect();
        assert_eq!(ids, ["r01", "r00", "r02"]);
    }

    #[test]
    fn ties_break_by_id_and_k_is_bounded() {
        let idx = index_from(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]], IndexMode::Exact);
        let got = nearest(&idx, &[0.0, 0.0], Channel::Lig, 3, &[]).unwrap();
        let ids: Vec<_> = got.iter().map(|e| e.record_id.as_str()).collect();
        assert_eq!(ids, ["r00", "r01", "r02"]);
        assert!(nearest(&idx, &[0.0, 0.0], Channel::Lig, 3, &["r00"]).is_err());
    }

    #[test]
    fn approximate_finds_everything_on_small_sets() {
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
            .collect();
        let exact = index_from(&pts, IndexMode::Exact);
        let approx = index_from(&pts, IndexMode::Approximate(NswParams::default()));
        for q in &pts {
            let a = nearest(&exact, q, Channel::Sen, 5, &[]).unwrap();
            let b = nearest(&approx, q, Channel::Sen, 5, &[]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn policy_for_k() {
        assert_eq!(
            RetrievalPolicy::for_k(5).unwrap(),
            RetrievalPolicy::default()
        );
        assert_eq!(RetrievalPolicy::for_k(3).unwrap().avg, 0);
        assert!(RetrievalPolicy::for_k(2).is_err());
    }
}
