//! ICL prompt rendering, SFT dataset emission, output parsing and scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Polarity, SentenceRecord, SentimentPair};
use crate::error::{Error, Result};
use crate::mgate::{Checkpoint, Encoder};
use crate::retrieval::{retrieve_exemplars, FeatureIndex, RetrievalPolicy};

pub const EXAMPLE_INPUT: &str = "{example_input}";
pub const EXAMPLE_OUTPUT: &str = "{example_output}";
pub const INPUT: &str = "{input}";
pub const NONE_SENTINEL: &str = "NONE";

/// Template text shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../data/default_template.txt");

/// `[aspect, polarity]` items joined by `", "`, or `NONE` when empty.
pub fn format_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Polarity)>) -> String {
    let items: Vec<String> = pairs
        .into_iter()
        .map(|(a, p)| format!("[{a}, {p}]"))
        .collect();
    if items.is_empty() {
        NONE_SENTINEL.to_string()
    } else {
        items.join(", ")
    }
}

/// Canonical serialization in sentence order of span start.
pub fn serialize_pairs(pairs: &[SentimentPair]) -> String {
    let mut sorted: Vec<&SentimentPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| p.span);
    format_pairs(sorted.iter().map(|p| (p.aspect_text.as_str(), p.polarity)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPairs {
    pub pairs: Vec<(String, Polarity)>,
    pub diagnostics: Vec<String>,
}

/// Extracts every `[aspect, polarity]` group from free text. Never fails;
/// fragments that do not parse are reported in `diagnostics`.
pub fn parse_pairs(text: &str) -> ParsedPairs {
    let mut out = ParsedPairs::default();
    if text.trim() == NONE_SENTINEL {
        return out;
    }
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else {
            out.diagnostics
                .push(format!("unclosed '[' at byte {}", offset + open));
            break;
        };
        let group = &after[..close];
        let at = offset + open;
        match group.rsplit_once(',') {
            None => out
                .diagnostics
                .push(format!("fragment [{group}] at byte {at}: missing comma")),
            Some((aspect, pol)) => {
                let aspect = aspect.trim();
                match Polarity::parse(pol) {
                    _ if aspect.is_empty() => out
                        .diagnostics
                        .push(format!("fragment [{group}] at byte {at}: empty aspect")),
                    None => out.diagnostics.push(format!(
                        "fragment [{group}] at byte {at}: unknown polarity {:?}",
                        pol.trim()
                    )),
                    Some(p) => out.pairs.push((aspect.to_string(), p)),
                }
            }
        }
        let consumed = open + 1 + close + 1;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out
}

/// Instruction, one example block per exemplar, and a query pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub instruction: String,
    /// Contains `{example_input}` and `{example_output}` once each.
    pub example: String,
    /// Contains `{input}` once.
    pub query: String,
}

impl PromptTemplate {
    /// Splits template text at line granularity: the lines from the one
    /// holding `{example_input}` through the one holding `{example_output}`
    /// form the example block; lines before are the instruction, lines after
    /// the query pattern.
    pub fn parse(name: &str, text: &str) -> Result<PromptTemplate> {
        for ph in [EXAMPLE_INPUT, EXAMPLE_OUTPUT, INPUT] {
            let n = text.matches(ph).count();
            if n != 1 {
                return Err(Error::Template(format!(
                    "template {name:?} must contain {ph} exactly once, found {n}"
                )));
            }
        }
        let lines: Vec<&str> = text.lines().collect();
        let find = |ph: &str| {
            lines
                .iter()
                .position(|l| l.contains(ph))
                .expect("counted above")
        };
        let (start, end, input) = (find(EXAMPLE_INPUT), find(EXAMPLE_OUTPUT), find(INPUT));
        if start > end {
            return Err(Error::Template(format!(
                "template {name:?}: {EXAMPLE_INPUT} must come before {EXAMPLE_OUTPUT}"
            )));
        }
        if input <= end {
            return Err(Error::Template(format!(
                "template {name:?}: {INPUT} must follow the example block"
            )));
        }
        let join = |ls: &[&str]| ls.join("\n").trim_matches('\n').trim_end().to_string();
        Ok(PromptTemplate {
            name: name.to_string(),
            instruction: join(&lines[..start]),
            example: join(&lines[start..=end]),
            query: join(&lines[end + 1..]),
        })
    }

    pub fn load(path: &Path) -> Result<PromptTemplate> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&name, &text)
    }

    pub fn default_template() -> PromptTemplate {
        Self::parse("default", DEFAULT_TEMPLATE).expect("shipped template is valid")
    }
}

/// Single-pass placeholder substitution, so inserted text is never rescanned.
fn substitute(pattern: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(pattern.len());
    let mut rest = pattern;
    'outer: while !rest.is_empty() {
        if rest.starts_with('{') {
            for (ph, v) in values {
                if let Some(tail) = rest.strip_prefix(ph) {
                    out.push_str(v);
                    rest = tail;
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl PromptRecord {
    /// Instruction followed by the template's query pattern, as sent to a model.
    pub fn prompt_text(&self, template: &PromptTemplate) -> String {
        let query = substitute(&template.query, &[(INPUT, &self.input)]);
        format!("{}\n\n{query}", self.instruction)
    }
}

/// Renders `query` with one example block per exemplar, in the given order.
/// `output` holds the query's gold serialization.
pub fn render_prompt(
    template: &PromptTemplate,
    query: &SentenceRecord,
    exemplars: &[&SentenceRecord],
) -> PromptRecord {
    let mut instruction = template.instruction.clone();
    for ex in exemplars {
        let input = ex.tokens.join(" ");
        let output = serialize_pairs(&ex.pairs);
        instruction.push_str("\n\n");
        instruction.push_str(&substitute(
            &template.example,
            &[(EXAMPLE_INPUT, &input), (EXAMPLE_OUTPUT, &output)],
        ));
    }
    PromptRecord {
        instruction,
        input: query.tokens.join(" "),
        output: serialize_pairs(&query.pairs),
    }
}

/// One prompt record per sentence of `corpus`, with exemplars retrieved
/// from `index` and looked up in `library`.
pub fn build_sft_records(
    corpus: &Corpus,
    library: &Corpus,
    index: &FeatureIndex,
    encoder: &Encoder,
    template: &PromptTemplate,
    policy: &RetrievalPolicy,
) -> Result<Vec<PromptRecord>> {
    corpus
        .records()
        .iter()
        .map(|q| {
            let set = retrieve_exemplars(index, q, encoder, policy)?;
            let exemplars = set
                .exemplars
                .iter()
                .map(|e| {
                    library.get(&e.record_id).ok_or_else(|| {
                        Error::UnknownId(format!(
                            "exemplar {} is not in the library corpus",
                            e.record_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(render_prompt(template, q, &exemplars))
        })
        .collect()
}

/// Writes one JSON prompt record per line and returns the count.
pub fn emit_sft_dataset(
    corpus: &Corpus,
    library: &Corpus,
    index: &FeatureIndex,
    checkpoint: &Checkpoint,
    template: &PromptTemplate,
    policy: &RetrievalPolicy,
    path: &Path,
) -> Result<usize> {
    if let Some(d) = index.checkpoint_digest() {
        if d != checkpoint.digest {
            return Err(Error::DigestMismatch(format!(
                "index was built from checkpoint {d}, got {}",
                checkpoint.digest
            )));
        }
    }
    let records = build_sft_records(
        corpus,
        library,
        index,
        &checkpoint.encoder,
        template,
        policy,
    )?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

/// Case-folded, whitespace-collapsed aspect text.
pub fn normalize_aspect(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Counts for one polarity class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class counts ordered as [`Polarity::ALL`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DomainScores {
    pub classes: [ClassCounts; 3],
}

impl DomainScores {
    pub fn class(&self, p: Polarity) -> &ClassCounts {
        &self.classes[class_index(p)]
    }

    /// Mean F1 over classes present in gold or predictions; 0 when none is.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<f64> = self
            .classes
            .iter()
            .filter(|c| c.present())
            .map(ClassCounts::f1)
            .collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    fn add(&mut self, other: &DomainScores) {
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }
}

fn class_index(p: Polarity) -> usize {
    Polarity::ALL.iter().position(|&q| q == p).expect("listed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_domain: BTreeMap<String, DomainScores>,
    /// Pooled over all domains.
    pub overall: DomainScores,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self
            .per_domain
            .iter()
            .map(|(d, s)| (d.as_str(), s))
            .chain([("overall", &self.overall)]);
        for (name, s) in rows {
            write!(f, "eval domain={name} macro_f1={:.6}", s.macro_f1())?;
            for p in Polarity::ALL {
                let c = s.class(p);
                write!(
                    f,
                    " {p}_p={:.6} {p}_r={:.6} {p}_f1={:.6}",
                    c.precision(),
                    c.recall(),
                    c.f1()
                )?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn sentence_counts(gold: &[SentimentPair], predicted: &[(String, Polarity)]) -> DomainScores {
    let mut remaining: HashMap<(String, Polarity), usize> = HashMap::new();
    for g in gold {
        *remaining
            .entry((normalize_aspect(&g.aspect_text), g.polarity))
            .or_default() += 1;
    }
    let mut s = DomainScores::default();
    for (aspect, p) in predicted {
        let key = (normalize_aspect(aspect), *p);
        let c = &mut s.classes[class_index(*p)];
        match remaining.get_mut(&key) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    for ((_, p), n) in remaining {
        s.classes[class_index(p)].fn_ += n;
    }
    s
}

/// Scores model outputs (`id -> raw text`) against gold pairs. Sentences
/// without a prediction count as predicting nothing.
pub fn evaluate_predictions(
    gold: &Corpus,
    predictions: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    if let Some(id) = predictions.keys().find(|id| gold.get(id).is_none()) {
        return Err(Error::UnknownId(format!(
            "prediction for unknown sentence {id}"
        )));
    }
    let mut per_domain: BTreeMap<String, DomainScores> = gold
        .domains()
        .iter()
        .map(|d| (d.clone(), DomainScores::default()))
        .collect();
    for rec in gold.records() {
        let predicted = predictions
            .get(&rec.id)
            .map(|t| parse_pairs(t).pairs)
            .unwrap_or_default();
        let s = sentence_counts(&rec.pairs, &predicted);
        per_domain
            .get_mut(&rec.domain)
            .expect("domain listed")
            .add(&s);
    }
    let mut overall = DomainScores::default();
    for s in per_domain.values() {
        overall.add(s);
    }
    Ok(EvalReport {
        per_domain,
        overall,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: String,
    text: String,
}

/// Reads `{"id", "text"}` lines; blank lines are skipped.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: k + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.id.clone(), p.text).is_some() {
            return Err(Error::DuplicateId(p.id));
        }
    }
    Ok(out)
}
