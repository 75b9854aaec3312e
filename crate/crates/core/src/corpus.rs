//! Annotated multi-domain corpora: loading, validation, relation matrices,
//! center-word selection, stratified splitting and summary statistics.
//!
//! A corpus file is line-delimited JSON, one sentence per line:
//!
//! ```text
//! {"id":"s1","domain":"laptop","tokens":["food","great"],"pos":["NOUN","ADJ"],
//!  "dep":[[0,1,"nsubj"],[1,-1,"root"]],
//!  "pairs":[{"aspect":"food","span":[0,0],"polarity":"positive"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }

    /// Case-insensitive, whitespace-trimmed parse.
    pub fn parse(text: &str) -> Option<Polarity> {
        match text.trim().to_ascii_lowercase().as_str() {
            "positive" => Some(Polarity::Positive),
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A gold (aspect, polarity) annotation. `span` is an inclusive token range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentPair {
    pub aspect_text: String,
    pub span: (usize, usize),
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepEdge {
    pub dependent: usize,
    /// `None` marks the root edge (`-1` on the wire).
    pub head: Option<usize>,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub id: String,
    pub domain: String,
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub dep_edges: Vec<DepEdge>,
    pub pairs: Vec<SentimentPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePair {
    aspect: String,
    span: [i64; 2],
    polarity: Polarity,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    domain: String,
    tokens: Vec<String>,
    pos: Vec<String>,
    dep: Vec<(i64, i64, String)>,
    pairs: Vec<WirePair>,
}

impl SentenceRecord {
    /// Parses one corpus line. Structural problems (negative indices, wrong
    /// keys) are reported as messages; semantic checks live in [`validate_record`].
    pub fn from_json(line: &str) -> std::result::Result<SentenceRecord, String> {
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut dep_edges = Vec::with_capacity(wire.dep.len());
        for (k, (dependent, head, relation)) in wire.dep.into_iter().enumerate() {
            if dependent < 0 {
                return Err(format!(
                    "dep edge {k}: negative dependent index {dependent}"
                ));
            }
            let head = match head {
                -1 => None,
                h if h < 0 => return Err(format!("dep edge {k}: invalid head index {h}")),
                h => Some(h as usize),
            };
            dep_edges.push(DepEdge {
                dependent: dependent as usize,
                head,
                relation,
            });
        }
        let mut pairs = Vec::with_capacity(wire.pairs.len());
        for (k, p) in wire.pairs.into_iter().enumerate() {
            if p.span[0] < 0 || p.span[1] < 0 {
                return Err(format!("pair {k}: negative span index"));
            }
            pairs.push(SentimentPair {
                aspect_text: p.aspect,
                span: (p.span[0] as usize, p.span[1] as usize),
                polarity: p.polarity,
            });
        }
        Ok(SentenceRecord {
            id: wire.id,
            domain: wire.domain,
            tokens: wire.tokens,
            pos_tags: wire.pos,
            dep_edges,
            pairs,
        })
    }

    pub fn to_json(&self) -> String {
        let wire = WireRecord {
            id: self.id.clone(),
            domain: self.domain.clone(),
            tokens: self.tokens.clone(),
            pos: self.pos_tags.clone(),
            dep: self
                .dep_edges
                .iter()
                .map(|e| {
                    let head = e.head.map_or(-1, |h| h as i64);
                    (e.dependent as i64, head, e.relation.clone())
                })
                .collect(),
            pairs: self
                .pairs
                .iter()
                .map(|p| WirePair {
                    aspect: p.aspect_text.clone(),
                    span: [p.span.0 as i64, p.span.1 as i64],
                    polarity: p.polarity,
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("record serialization is infallible")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whitespace-joined surface text.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lists every broken record invariant; an empty list means the record is valid.
pub fn validate_record(rec: &SentenceRecord) -> Vec<String> {
    let mut out = Vec::new();
    let n = rec.tokens.len();
    if rec.id.trim().is_empty() {
        out.push("id must be non-empty".to_string());
    }
    if n == 0 {
        out.push("tokens must be non-empty".to_string());
    }
    if rec.pos_tags.len() != n {
        out.push(format!(
            "pos length {} must equal tokens length {}",
            rec.pos_tags.len(),
            n
        ));
    }
    for (k, tag) in rec.pos_tags.iter().enumerate() {
        if tag.is_empty() || tag.chars().any(char::is_whitespace) {
            out.push(format!("pos tag {k} must be non-empty without whitespace"));
        }
    }

    let mut roots = 0;
    let mut seen_edges = HashSet::new();
    for (k, e) in rec.dep_edges.iter().enumerate() {
        if e.dependent >= n {
            out.push(format!(
                "dep edge {k}: dependent {} out of range",
                e.dependent
            ));
        }
        match e.head {
            None => roots += 1,
            Some(h) if h >= n => out.push(format!("dep edge {k}: head {h} out of range")),
            Some(h) if h == e.dependent => out.push(format!("dep edge {k}: self-loop on {h}")),
            Some(h) => {
                if !seen_edges.insert((e.dependent, h)) {
                    out.push(format!(
                        "dep edge {k}: duplicate edge {} -> {h}",
                        e.dependent
                    ));
                }
            }
        }
    }
    if roots != 1 {
        out.push(format!("exactly one root edge required, found {roots}"));
    }

    if rec.pairs.is_empty() {
        out.push("pairs must be non-empty".to_string());
    }
    let mut seen_pairs = HashSet::new();
    for (k, p) in rec.pairs.iter().enumerate() {
        let (s, e) = p.span;
        if s > e || e >= n {
            out.push(format!(
                "pair {k}: span [{s}, {e}] out of range for {n} tokens"
            ));
            continue;
        }
        let joined = rec.tokens[s..=e].join(" ");
        if joined != p.aspect_text {
            out.push(format!(
                "pair {k}: aspect text {:?} does not match span tokens {:?}",
                p.aspect_text, joined
            ));
        }
        if !seen_pairs.insert((s, e, p.polarity)) {
            out.push(format!("pair {k}: duplicate (span, polarity)"));
        }
    }
    out
}

static NEXT_REGISTRY_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_REGISTRY_UID.fetch_add(1, Ordering::Relaxed)
}

/// Interns POS-tag pairs and dependency labels as positive integer ids in
/// first-encounter order. Id 0 means "no relation".
#[derive(Debug, Clone)]
pub struct RelationRegistry {
    pos_pair_ids: HashMap<(String, String), u32>,
    dep_ids: HashMap<String, u32>,
    uid: u64,
}

impl Default for RelationRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for RelationRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.pos_pair_ids == other.pos_pair_ids && self.dep_ids == other.dep_ids
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistrySnapshot {
    pos_pair_ids: BTreeMap<String, u32>,
    dep_ids: BTreeMap<String, u32>,
}

impl RelationRegistry {
    pub fn new() -> Self {
        RelationRegistry {
            pos_pair_ids: HashMap::new(),
            dep_ids: HashMap::new(),
            uid: fresh_uid(),
        }
    }

    /// Identity of this registry lineage; matrices remember which one built them.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn pos_pair_count(&self) -> usize {
        self.pos_pair_ids.len()
    }

    pub fn dep_count(&self) -> usize {
        self.dep_ids.len()
    }

    pub fn pos_pair_id(&self, a: &str, b: &str) -> Option<u32> {
        self.pos_pair_ids
            .get(&(a.to_string(), b.to_string()))
            .copied()
    }

    pub fn dep_id(&self, rel: &str) -> Option<u32> {
        self.dep_ids.get(rel).copied()
    }

    fn intern_pos(&mut self, a: &str, b: &str) -> u32 {
        let next = self.pos_pair_ids.len() as u32 + 1;
        *self
            .pos_pair_ids
            .entry((a.to_string(), b.to_string()))
            .or_insert(next)
    }

    fn intern_dep(&mut self, rel: &str) -> u32 {
        let next = self.dep_ids.len() as u32 + 1;
        *self.dep_ids.entry(rel.to_string()).or_insert(next)
    }

    pub fn to_json(&self) -> String {
        let snap = RegistrySnapshot {
            pos_pair_ids: self
                .pos_pair_ids
                .iter()
                .map(|((a, b), id)| (format!("{a} {b}"), *id))
                .collect(),
            dep_ids: self.dep_ids.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        };
        serde_json::to_string_pretty(&snap).expect("registry serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<RelationRegistry> {
        let snap: RegistrySnapshot = serde_json::from_str(text)?;
        let mut pos_pair_ids = HashMap::new();
        for (key, id) in snap.pos_pair_ids {
            let mut parts = key.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Corrupt(format!("bad pos pair key {key:?}")));
            };
            pos_pair_ids.insert((a.to_string(), b.to_string()), id);
        }
        let dep_ids: HashMap<String, u32> = snap.dep_ids.into_iter().collect();
        check_dense_ids(pos_pair_ids.values().copied(), "pos_pair_ids")?;
        check_dense_ids(dep_ids.values().copied(), "dep_ids")?;
        Ok(RelationRegistry {
            pos_pair_ids,
            dep_ids,
            uid: fresh_uid(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RelationRegistry> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_dense_ids(ids: impl Iterator<Item = u32>, what: &str) -> Result<()> {
    let mut ids: Vec<u32> = ids.collect();
    ids.sort_unstable();
    for (k, id) in ids.iter().enumerate() {
        if *id != k as u32 + 1 {
            return Err(Error::Corrupt(format!(
                "{what}: ids must be exactly 1..={}",
                ids.len()
            )));
        }
    }
    Ok(())
}

/// Dense `n x n` relation-id matrices of one sentence, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMatrices {
    n: usize,
    r_pos: Vec<u32>,
    r_dep: Vec<u32>,
    registry_uid: u64,
}

impl RelationMatrices {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn pos(&self, i: usize, j: usize) -> u32 {
        self.r_pos[i * self.n + j]
    }

    pub fn dep(&self, i: usize, j: usize) -> u32 {
        self.r_dep[i * self.n + j]
    }

    pub fn pos_row(&self, i: usize) -> &[u32] {
        &self.r_pos[i * self.n..(i + 1) * self.n]
    }

    pub fn dep_row(&self, i: usize) -> &[u32] {
        &self.r_dep[i * self.n..(i + 1) * self.n]
    }

    pub fn registry_uid(&self) -> u64 {
        self.registry_uid
    }
}

/// Builds both matrices, growing the registry with unseen relations.
/// POS pairs are interned in row-major order before dependency labels.
pub fn build_relation_matrices(
    rec: &SentenceRecord,
    registry: &mut RelationRegistry,
) -> RelationMatrices {
    let n = rec.tokens.len();
    let mut r_pos = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            r_pos.push(registry.intern_pos(&rec.pos_tags[i], &rec.pos_tags[j]));
        }
    }
    let mut r_dep = vec![0; n * n];
    for e in &rec.dep_edges {
        if let Some(h) = e.head {
            r_dep[e.dependent * n + h] = registry.intern_dep(&e.relation);
        }
    }
    RelationMatrices {
        n,
        r_pos,
        r_dep,
        registry_uid: registry.uid,
    }
}

/// Lookup-only variant: fails if the record uses a relation the registry
/// has never seen.
pub fn relation_matrices(
    rec: &SentenceRecord,
    registry: &RelationRegistry,
) -> Result<RelationMatrices> {
    let n = rec.tokens.len();
    let mut r_pos = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let id = registry
                .pos_pair_id(&rec.pos_tags[i], &rec.pos_tags[j])
                .ok_or_else(|| {
                    Error::RegistryMismatch(format!(
                        "record {}: pos pair ({}, {}) not registered",
                        rec.id, rec.pos_tags[i], rec.pos_tags[j]
                    ))
                })?;
            r_pos.push(id);
        }
    }
    let mut r_dep = vec![0; n * n];
    for e in &rec.dep_edges {
        if let Some(h) = e.head {
            r_dep[e.dependent * n + h] = registry.dep_id(&e.relation).ok_or_else(|| {
                Error::RegistryMismatch(format!(
                    "record {}: dependency {:?} not registered",
                    rec.id, e.relation
                ))
            })?;
        }
    }
    Ok(RelationMatrices {
        n,
        r_pos,
        r_dep,
        registry_uid: registry.uid,
    })
}

/// Number of non-root dependency edges touching each token.
pub fn dependency_degrees(rec: &SentenceRecord) -> Vec<usize> {
    let mut degree = vec![0; rec.tokens.len()];
    for e in &rec.dep_edges {
        if let Some(h) = e.head {
            degree[e.dependent] += 1;
            degree[h] += 1;
        }
    }
    degree
}

/// One center token per gold pair: the aspect token with the highest
/// dependency degree, leftmost on ties.
pub fn select_center_words(rec: &SentenceRecord) -> Vec<usize> {
    let degree = dependency_degrees(rec);
    rec.pairs
        .iter()
        .map(|p| {
            let (s, e) = p.span;
            let mut best = s;
            for t in s..=e {
                if degree[t] > degree[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<SentenceRecord>,
    domains: BTreeSet<String>,
    registry: RelationRegistry,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates the records and populates a fresh registry in record order.
    pub fn from_records(records: Vec<SentenceRecord>) -> Result<Corpus> {
        Self::from_records_with_registry(records, RelationRegistry::new())
    }

    /// Like [`Corpus::from_records`] but extends an existing registry, so the
    /// result is comparable with corpora built against the same lineage.
    pub fn from_records_with_registry(
        records: Vec<SentenceRecord>,
        mut registry: RelationRegistry,
    ) -> Result<Corpus> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(records.len());
        let mut domains = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            if let Some(rule) = validate_record(rec).into_iter().next() {
                return Err(Error::InvalidRecord {
                    id: rec.id.clone(),
                    rule,
                });
            }
            if by_id.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
            domains.insert(rec.domain.clone());
            build_relation_matrices(rec, &mut registry);
        }
        Ok(Corpus {
            records,
            domains,
            registry,
            by_id,
        })
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        Self::from_records(read_records(path)?)
    }

    pub fn load_with_registry(path: &Path, registry: RelationRegistry) -> Result<Corpus> {
        Self::from_records_with_registry(read_records(path)?, registry)
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    pub fn registry(&self) -> &RelationRegistry {
        &self.registry
    }

    pub fn get(&self, id: &str) -> Option<&SentenceRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn matrices(&self, idx: usize) -> RelationMatrices {
        relation_matrices(&self.records[idx], &self.registry)
            .expect("corpus registry covers its own records")
    }

    /// Sub-corpus in this corpus's order, sharing the registry.
    pub fn subset(&self, keep: impl Fn(&SentenceRecord) -> bool) -> Result<Corpus> {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Self::from_records_with_registry(records, self.registry.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_records(&self.records, path)
    }
}

/// Convenience alias for [`Corpus::load`].
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path)
}

pub fn read_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = SentenceRecord::from_json(&line).map_err(|message| Error::MalformedLine {
            line: k + 1,
            message,
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// One problem found by [`validate_corpus_file`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// Checks every line of a corpus file, collecting all violations instead of
/// stopping at the first. Returns the record count and the violations.
pub fn validate_corpus_file(path: &Path) -> Result<(usize, Vec<Violation>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut count = 0;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        let rec = match SentenceRecord::from_json(&line) {
            Ok(r) => r,
            Err(message) => {
                out.push(Violation {
                    line: k + 1,
                    id: None,
                    message,
                });
                continue;
            }
        };
        for message in validate_record(&rec) {
            out.push(Violation {
                line: k + 1,
                id: Some(rec.id.clone()),
                message,
            });
        }
        if let Some(first) = seen.insert(rec.id.clone(), k + 1) {
            out.push(Violation {
                line: k + 1,
                id: Some(rec.id.clone()),
                message: format!("duplicate id (first seen on line {first})"),
            });
        }
    }
    if count == 0 {
        out.push(Violation {
            line: 0,
            id: None,
            message: "empty corpus".into(),
        });
    }
    Ok((count, out))
}

pub fn write_records(records: &[SentenceRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        writeln!(w, "{}", rec.to_json()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-domain stratified split. The validation part holds `round(ratio * N)`
/// records, apportioned across domains by largest remainder.
pub fn split_dataset(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, rec) in corpus.records.iter().enumerate() {
        by_domain.entry(rec.domain.as_str()).or_default().push(i);
    }
    let total = (ratio * corpus.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, f64)> = by_domain
        .values()
        .map(|members| {
            let exact = ratio * members.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // largest remainder first; stable sort keeps domain-name order on ties
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1));
    for &d in order.iter().take(total.saturating_sub(assigned)) {
        quotas[d].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held_out = vec![false; corpus.len()];
    for (members, (quota, _)) in by_domain.values().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(*quota) {
            held_out[i] = true;
        }
    }
    let validation_ids: HashSet<&str> = corpus
        .records
        .iter()
        .zip(&held_out)
        .filter(|(_, &h)| h)
        .map(|(r, _)| r.id.as_str())
        .collect();
    let train = corpus.subset(|r| !validation_ids.contains(r.id.as_str()))?;
    let validation = corpus.subset(|r| validation_ids.contains(r.id.as_str()))?;
    Ok((train, validation))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DomainStats {
    pub domain: String,
    pub sentences: usize,
    pub pairs: usize,
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
}

impl DomainStats {
    fn add(&mut self, rec: &SentenceRecord) {
        self.sentences += 1;
        self.pairs += rec.pairs.len();
        for p in &rec.pairs {
            match p.polarity {
                Polarity::Positive => self.positive += 1,
                Polarity::Negative => self.negative += 1,
                Polarity::Neutral => self.neutral += 1,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub rows: Vec<DomainStats>,
    pub overall: DomainStats,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "domain", "#S", "#P", "#Pos", "#Neg", "#Neu"
        )?;
        for row in self.rows.iter().chain(std::iter::once(&self.overall)) {
            writeln!(
                f,
                "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6}",
                row.domain, row.sentences, row.pairs, row.positive, row.negative, row.neutral
            )?;
        }
        Ok(())
    }
}

/// Per-domain sentence and pair counts plus an `Overall` column-sum row.
/// `domains = None` reports every domain; `Some(&[])` reports none.
pub fn corpus_stats(corpus: &Corpus, domains: Option<&[String]>) -> CorpusStats {
    let mut rows: BTreeMap<&str, DomainStats> = BTreeMap::new();
    for rec in &corpus.records {
        if let Some(filter) = domains {
            if !filter.iter().any(|d| d == &rec.domain) {
                continue;
            }
        }
        rows.entry(rec.domain.as_str())
            .or_insert_with(|| DomainStats {
                domain: rec.domain.clone(),
                ..Default::default()
            })
            .add(rec);
    }
    let rows: Vec<DomainStats> = rows.into_values().collect();
    let mut overall = DomainStats {
        domain: "Overall".to_string(),
        ..Default::default()
    };
    for r in &rows {
        overall.sentences += r.sentences;
        overall.pairs += r.pairs;
        overall.positive += r.positive;
        overall.negative += r.negative;
        overall.neutral += r.neutral;
    }
    CorpusStats { rows, overall }
}
