use std::collections::HashSet;
use std::path::Path;

use faima::corpus::{corpus_stats, Corpus, DepEdge, Polarity, SentenceRecord, SentimentPair};
use faima::heuristics::{
    generate_pair_set, label_pair, similarity_profile, weighted_hamming, HeuristicConfig,
    PairScorer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

mod oracle;

#[test]
fn profiles_match_brute_force_oracle_on_random_pairs() {
    let corpus = Corpus::load(&data("fixture.jsonl")).unwrap();
    let cfg = HeuristicConfig::default();
    let scorer = PairScorer::new(&corpus, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let recs = corpus.records();
    for _ in 0..200 {
        let i = rng.random_range(0..recs.len());
        let j = rng.random_range(0..recs.len());
        let (a, b) = (&recs[i], &recs[j]);
        let want = [
            oracle::lig(a, b, cfg.sigma),
            oracle::dom(a, b),
            oracle::sen(a, b),
        ];
        let got = similarity_profile(a, b, &cfg, corpus.registry())
            .unwrap()
            .as_array();
        let batched = scorer.profile(i, j).as_array();
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 1e-9,
                "{} vs {} component {k}: {} != {}",
                a.id,
                b.id,
                got[k],
                want[k]
            );
            assert!((batched[k] - want[k]).abs() < 1e-9);
        }
        assert!(got[0] > 0.0 && got[0] <= 0.5);
        assert!((0.5..=1.0).contains(&got[2]));
    }
}

#[test]
fn oracle_agrees_at_other_sigmas() {
    let corpus = Corpus::load(&data("fixture.jsonl")).unwrap();
    for sigma in [0.3, 2.5, 10.0] {
        let cfg = HeuristicConfig {
            sigma,
            ..HeuristicConfig::default()
        };
        for (a, b) in corpus.records().iter().zip(corpus.records().iter().skip(7)) {
            let got = similarity_profile(a, b, &cfg, corpus.registry()).unwrap();
            assert!((got.lig - oracle::lig(a, b, sigma)).abs() < 1e-9);
        }
    }
}

fn rec(
    id: &str,
    domain: &str,
    tokens: &[&str],
    pos: &[&str],
    edges: &[(usize, Option<usize>, &str)],
    pairs: &[((usize, usize), Polarity)],
) -> SentenceRecord {
    SentenceRecord {
        id: id.into(),
        domain: domain.into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        pos_tags: pos.iter().map(|s| s.to_string()).collect(),
        dep_edges: edges
            .iter()
            .map(|&(d, h, r)| DepEdge {
                dependent: d,
                head: h,
                relation: r.into(),
            })
            .collect(),
        pairs: pairs
            .iter()
            .map(|&((s, e), polarity)| SentimentPair {
                aspect_text: tokens[s..=e].join(" "),
                span: (s, e),
                polarity,
            })
            .collect(),
    }
}

#[test]
fn three_versus_two_tokens_with_one_dep_mismatch() {
    let a = rec(
        "a",
        "laptop",
        &["the", "screen", "flickers"],
        &["DET", "NOUN", "VERB"],
        &[
            (0, Some(1), "det"),
            (1, Some(2), "nsubj"),
            (2, None, "root"),
        ],
        &[((1, 1), Polarity::Negative)],
    );
    let b = rec(
        "b",
        "laptop",
        &["the", "screen"],
        &["DET", "NOUN"],
        &[(0, None, "root"), (1, Some(0), "nmod")],
        &[((1, 1), Polarity::Negative)],
    );
    let corpus = Corpus::from_records(vec![a.clone(), b.clone()]).unwrap();
    let h = weighted_hamming(&corpus.matrices(0), 1, &corpus.matrices(1), 1, 1.0).unwrap();
    // W over the first sentence, truncated to two positions; only t = 0 mismatches.
    let w0 = (-0.5f64).exp();
    let hand = w0 / (2.0 * (w0 + 1.0));
    assert!((h - hand).abs() < 1e-12, "{h} vs {hand}");
    assert!((h - 0.188_770_334).abs() < 1e-8);
    assert!((oracle::hamming(&a, 1, &b, 1, 1.0) - hand).abs() < 1e-12);
}

#[test]
fn maximal_mismatch_gives_sigmoid_minus_one() {
    let a = rec(
        "a",
        "x",
        &["food"],
        &["NOUN"],
        &[(0, None, "root")],
        &[((0, 0), Polarity::Positive)],
    );
    let b = rec(
        "b",
        "x",
        &["good"],
        &["ADJ"],
        &[(0, None, "root")],
        &[((0, 0), Polarity::Positive)],
    );
    let corpus = Corpus::from_records(vec![a, b]).unwrap();
    let (ra, rb) = (&corpus.records()[0], &corpus.records()[1]);
    // POS rows differ; dep rows are both the empty diagonal, so H = 1/2 for one token.
    let p = similarity_profile(ra, rb, &HeuristicConfig::default(), corpus.registry()).unwrap();
    assert!((p.lig - 1.0 / (1.0 + 0.5f64.exp())).abs() < 1e-12);

    // Centers at opposite ends with disjoint tags: every position mismatches in both channels.
    let a = rec(
        "c",
        "x",
        &["food", "here"],
        &["NOUN", "ADV"],
        &[(0, Some(1), "dep"), (1, None, "root")],
        &[((0, 0), Polarity::Positive)],
    );
    let b = rec(
        "d",
        "x",
        &["very", "good"],
        &["PART", "ADJ"],
        &[(0, None, "root"), (1, Some(0), "dep")],
        &[((1, 1), Polarity::Positive)],
    );
    let corpus = Corpus::from_records(vec![a, b]).unwrap();
    let (ra, rb) = (&corpus.records()[0], &corpus.records()[1]);
    let h = weighted_hamming(&corpus.matrices(0), 0, &corpus.matrices(1), 1, 1.0).unwrap();
    assert_eq!(h, 1.0);
    let p = similarity_profile(ra, rb, &HeuristicConfig::default(), corpus.registry()).unwrap();
    assert!((p.lig - 0.268_941_421).abs() < 1e-8, "{}", p.lig);
}

#[test]
fn shipped_tiny_fixture_statistics() {
    let corpus = Corpus::load(&data("tiny.jsonl")).unwrap();
    let stats = corpus_stats(&corpus, None);
    let row = |d: &str| stats.rows.iter().find(|r| r.domain == d).unwrap().clone();
    assert_eq!(row("laptop").sentences, 2);
    assert_eq!(row("hotel").sentences, 1);
    let o = &stats.overall;
    assert_eq!((o.pairs, o.positive, o.negative, o.neutral), (4, 3, 1, 0));
    assert_eq!(stats.rows.iter().map(|r| r.pairs).sum::<usize>(), o.pairs);
    assert!(corpus_stats(&corpus, Some(&[])).rows.is_empty());
}

#[test]
fn pair_generation_on_two_records_is_exhaustive() {
    let corpus = Corpus::load(&data("tiny.jsonl")).unwrap();
    let two = corpus.subset(|r| r.id != "t2").unwrap();
    let set = generate_pair_set(&two, &HeuristicConfig::default(), 10, 3).unwrap();
    assert_eq!(set.len(), 1);
    let l = &set.labels[0];
    let (a, b) = (
        two.get(&l.anchor_id).unwrap(),
        two.get(&l.other_id).unwrap(),
    );
    let p = similarity_profile(a, b, &HeuristicConfig::default(), two.registry()).unwrap();
    assert_eq!(l.bits, label_pair(&p, &HeuristicConfig::default()));
}

#[test]
fn pair_sets_are_balanced_consistent_and_deterministic() {
    let corpus = Corpus::load(&data("fixture.jsonl")).unwrap();
    let cfg = HeuristicConfig::default();
    for budget in [300, 5000] {
        let set = generate_pair_set(&corpus, &cfg, budget, 11).unwrap();
        assert_eq!(set, generate_pair_set(&corpus, &cfg, budget, 11).unwrap());
        assert!(set.len() <= budget);
        let mut seen = HashSet::new();
        let mut pos = [0usize; 3];
        let mut neg = [0usize; 3];
        for l in &set.labels {
            assert_ne!(l.anchor_id, l.other_id);
            let key = if l.anchor_id < l.other_id {
                (l.anchor_id.clone(), l.other_id.clone())
            } else {
                (l.other_id.clone(), l.anchor_id.clone())
            };
            assert!(seen.insert(key), "duplicate unordered pair");
            let (a, b) = (
                corpus.get(&l.anchor_id).unwrap(),
                corpus.get(&l.other_id).unwrap(),
            );
            let p = [
                oracle::lig(a, b, cfg.sigma),
                oracle::dom(a, b),
                oracle::sen(a, b),
            ];
            for k in 0..3 {
                let th = cfg.thresholds()[k];
                assert_eq!(l.bits.0[k], p[k] >= th);
                if l.bits.0[k] {
                    pos[k] += 1;
                } else {
                    neg[k] += 1;
                }
            }
        }
        for k in 0..3 {
            assert_eq!(
                (set.counts[k].positive, set.counts[k].negative),
                (pos[k], neg[k])
            );
            if pos[k] > 0 && neg[k] > 0 {
                let r = pos[k] as f64 / neg[k] as f64;
                assert!(
                    (1.0 / 3.0..=3.0).contains(&r),
                    "budget {budget} feature {k}: ratio {r}"
                );
            }
        }
    }
    let other = generate_pair_set(&corpus, &cfg, 300, 12).unwrap();
    assert_ne!(other, generate_pair_set(&corpus, &cfg, 300, 11).unwrap());
}
