use std::collections::BTreeMap;
use std::path::Path;

use faima::corpus::{Corpus, Polarity, SentenceRecord, SentimentPair};
use faima::mgate::{load_checkpoint, save_checkpoint, Encoder, MgateConfig};
use faima::promptkit::{
    emit_sft_dataset, evaluate_predictions, format_pairs, parse_pairs, render_prompt,
    serialize_pairs, PromptRecord, PromptTemplate,
};
use faima::retrieval::{build_index, IndexMode, RetrievalPolicy};
use faima::Error;
use proptest::prelude::*;

fn fixture() -> Corpus {
    Corpus::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixture.jsonl")).unwrap()
}

fn pair(aspect: &str, span: (usize, usize), polarity: Polarity) -> SentimentPair {
    SentimentPair {
        aspect_text: aspect.into(),
        span,
        polarity,
    }
}

const CASE_ONE: &str = "[food, positive], [sushi, positive], [cooked food, positive]";

#[test]
fn case_one_round_trips_byte_exactly() {
    // "the food was great - sushi was good , but the cooked food amazed us ."
    let pairs = vec![
        pair("cooked food", (11, 12), Polarity::Positive),
        pair("food", (1, 1), Polarity::Positive),
        pair("sushi", (5, 5), Polarity::Positive),
    ];
    let text = serialize_pairs(&pairs);
    assert_eq!(text, CASE_ONE);
    let parsed = parse_pairs(&text);
    assert!(parsed.diagnostics.is_empty());
    let again = format_pairs(parsed.pairs.iter().map(|(a, p)| (a.as_str(), *p)));
    assert_eq!(again.as_bytes(), CASE_ONE.as_bytes());
}

#[test]
fn parse_examples() {
    let p = parse_pairs("Predict: [manager, negative], [bartender, negative]");
    assert_eq!(
        p.pairs,
        [
            ("manager".to_string(), Polarity::Negative),
            ("bartender".to_string(), Polarity::Negative)
        ]
    );
    assert!(p.diagnostics.is_empty());
    assert_eq!(parse_pairs("NONE"), Default::default());
    let bad = parse_pairs("[food positive]");
    assert!(bad.pairs.is_empty());
    assert_eq!(bad.diagnostics.len(), 1);
    let mixed = parse_pairs("[ Room ,  POSITIVE ] junk [x, great] [a, neutral");
    assert_eq!(mixed.pairs, [("Room".to_string(), Polarity::Positive)]);
    assert_eq!(mixed.diagnostics.len(), 2);
    assert_eq!(serialize_pairs(&[]), "NONE");
    assert_eq!(
        serialize_pairs(&[pair("manager", (3, 3), Polarity::Negative)]),
        "[manager, negative]"
    );
}

fn aspect() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,8}", 1..3).prop_map(|w| w.join(" "))
}

fn polarity() -> impl Strategy<Value = Polarity> {
    prop::sample::select(Polarity::ALL.to_vec())
}

proptest! {
    #[test]
    fn parse_inverts_serialize(items in prop::collection::vec((aspect(), polarity()), 0..6)) {
        let pairs: Vec<SentimentPair> =
            items.iter().enumerate().map(|(i, (a, p))| pair(a, (2 * i, 2 * i), *p)).collect();
        let parsed = parse_pairs(&serialize_pairs(&pairs));
        prop_assert!(parsed.diagnostics.is_empty());
        prop_assert_eq!(parsed.pairs, items);
    }
}

fn gold_corpus() -> Corpus {
    let line = |id: &str, domain: &str, tokens: &[&str], pairs: &str| {
        let pos: Vec<&str> = tokens.iter().map(|_| "NOUN").collect();
        let dep: Vec<String> = (0..tokens.len())
            .map(|i| {
                if i == 0 {
                    "[0,-1,\"root\"]".to_string()
                } else {
                    format!("[{i},0,\"dep\"]")
                }
            })
            .collect();
        format!(
            r#"{{"id":"{id}","domain":"{domain}","tokens":{},"pos":{},"dep":[{}],"pairs":[{pairs}]}}"#,
            serde_json::to_string(tokens).unwrap(),
            serde_json::to_string(&pos).unwrap(),
            dep.join(",")
        )
    };
    let records = [
        line(
            "g0",
            "restaurant",
            &["food", "and", "sushi", "ok"],
            r#"{"aspect":"food","span":[0,0],"polarity":"positive"},{"aspect":"sushi","span":[2,2],"polarity":"positive"}"#,
        ),
        line(
            "g1",
            "hotel",
            &["room", "was", "bad"],
            r#"{"aspect":"room","span":[0,0],"polarity":"negative"}"#,
        ),
    ];
    Corpus::from_records(
        records
            .iter()
            .map(|l| SentenceRecord::from_json(l).unwrap())
            .collect(),
    )
    .unwrap()
}

#[test]
fn macro_f1_hand_count() {
    let gold = gold_corpus().subset(|r| r.id == "g0").unwrap();
    let preds = BTreeMap::from([(
        "g0".to_string(),
        "[food, positive], [service, negative]".to_string(),
    )]);
    let r = evaluate_predictions(&gold, &preds).unwrap();
    let s = &r.per_domain["restaurant"];
    let pos = s.class(Polarity::Positive);
    assert!((pos.precision() - 1.0).abs() < 1e-12);
    assert!((pos.recall() - 0.5).abs() < 1e-12);
    assert!((pos.f1() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(s.class(Polarity::Negative).f1(), 0.0);
    assert!((s.macro_f1() - 1.0 / 3.0).abs() < 1e-9);
    assert!((r.overall.macro_f1() - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn evaluation_edge_cases() {
    let gold = gold_corpus();
    let perfect: BTreeMap<String, String> = gold
        .records()
        .iter()
        .map(|r| (r.id.clone(), serialize_pairs(&r.pairs)))
        .collect();
    let r = evaluate_predictions(&gold, &perfect).unwrap();
    assert_eq!(r.overall.macro_f1(), 1.0);
    assert!(r.per_domain.values().all(|s| s.macro_f1() == 1.0));

    let r = evaluate_predictions(&gold, &BTreeMap::new()).unwrap();
    assert_eq!(r.overall.macro_f1(), 0.0);

    let shuffled = BTreeMap::from([
        (
            "g0".to_string(),
            "[ SUSHI , positive], [food, positive]".to_string(),
        ),
        ("g1".to_string(), "[room, negative]".to_string()),
    ]);
    assert_eq!(
        evaluate_predictions(&gold, &shuffled).unwrap(),
        evaluate_predictions(&gold, &perfect).unwrap()
    );

    let doubled = BTreeMap::from([(
        "g1".to_string(),
        "[room, negative], [room, negative]".to_string(),
    )]);
    let r = evaluate_predictions(&gold, &doubled).unwrap();
    let neg = r.per_domain["hotel"].class(Polarity::Negative);
    assert_eq!((neg.tp, neg.fp, neg.fn_), (1, 1, 0));

    let unknown = BTreeMap::from([("zz".to_string(), "NONE".to_string())]);
    assert!(matches!(
        evaluate_predictions(&gold, &unknown),
        Err(Error::UnknownId(_))
    ));
}

#[test]
fn rendering_blocks_and_placeholders() {
    let t = PromptTemplate::default_template();
    let corpus = fixture();
    let q = &corpus.records()[0];
    let bare = render_prompt(&t, q, &[]);
    assert_eq!(bare.instruction, t.instruction);
    assert_eq!(bare.input, q.tokens.join(" "));
    assert_eq!(bare.output, serialize_pairs(&q.pairs));

    let ex: Vec<&SentenceRecord> = corpus.records()[1..6].iter().collect();
    let five = render_prompt(&t, q, &ex);
    assert_eq!(five.instruction.matches("Input: ").count(), 5);
    let mut at = 0;
    for e in &ex {
        let block = format!(
            "Input: {}\nOutput: {}",
            e.tokens.join(" "),
            serialize_pairs(&e.pairs)
        );
        let found = five.instruction[at..].find(&block).expect("block in order");
        at += found + block.len();
    }
    assert_eq!(five, render_prompt(&t, q, &ex));
    let prompt = five.prompt_text(&t);
    for ph in ["{example_input}", "{example_output}", "{input}"] {
        assert!(!prompt.contains(ph));
    }
    assert!(prompt.ends_with(&format!("Input: {}\nOutput:", q.tokens.join(" "))));
    let one = render_prompt(&t, q, &ex[..1]).instruction.len();
    let two = render_prompt(&t, q, &ex[..2]).instruction.len();
    assert!(two > one);

    assert!(matches!(
        PromptTemplate::parse("x", "no placeholders"),
        Err(Error::Template(_))
    ));
    assert!(PromptTemplate::parse("x", "{example_output}\n{example_input}\n{input}").is_err());
}

#[test]
fn sft_emission_is_reproducible_and_self_excluding() {
    let corpus = fixture();
    let cfg = MgateConfig {
        embed_dim: 8,
        ..MgateConfig::default()
    };
    let enc = Encoder::init(&corpus, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("enc.ckpt");
    save_checkpoint(&enc, &[], None, &ckpt_path).unwrap();
    let ck = load_checkpoint(&ckpt_path).unwrap();
    let index = build_index(&corpus, &ck, IndexMode::Exact).unwrap();
    let t = PromptTemplate::default_template();
    let policy = RetrievalPolicy::default();

    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert_eq!(
        emit_sft_dataset(&corpus, &corpus, &index, &ck, &t, &policy, &a).unwrap(),
        60
    );
    assert_eq!(
        emit_sft_dataset(&corpus, &corpus, &index, &ck, &t, &policy, &b).unwrap(),
        60
    );
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().count(), 60);
    for (line, q) in text.lines().zip(corpus.records()) {
        let r: PromptRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.input, q.tokens.join(" "));
        assert_eq!(parse_pairs(&r.output).pairs.len(), q.pairs.len());
        assert_eq!(r.instruction.matches("Input: ").count(), 5);
        assert!(!r.instruction.contains(&format!("Input: {}\n", r.input)));
    }

    let mut other = enc.clone();
    other.config.seed += 1;
    let other_path = dir.path().join("other.ckpt");
    save_checkpoint(&other, &[], None, &other_path).unwrap();
    let other_ck = load_checkpoint(&other_path).unwrap();
    let c = dir.path().join("c.jsonl");
    assert!(matches!(
        emit_sft_dataset(&corpus, &corpus, &index, &other_ck, &t, &policy, &c),
        Err(Error::DigestMismatch(_))
    ));
}
