//! Straight-from-the-definitions similarity reference, comparing tag pairs
//! and relation labels as strings instead of registry ids.
#![allow(dead_code)]

use faima::corpus::{Polarity, SentenceRecord};

fn degree(r: &SentenceRecord, t: usize) -> usize {
    r.dep_edges
        .iter()
        .filter(|e| e.head.is_some() && (e.dependent == t || e.head == Some(t)))
        .count()
}

pub fn centers(r: &SentenceRecord) -> Vec<usize> {
    let mut out = Vec::new();
    for p in &r.pairs {
        let mut best = p.span.0;
        for t in p.span.0..=p.span.1 {
            if degree(r, t) > degree(r, best) {
                best = t;
            }
        }
        out.push(best);
    }
    out
}

fn relation(r: &SentenceRecord, i: usize, j: usize) -> Option<&str> {
    if i == j {
        return None;
    }
    r.dep_edges
        .iter()
        .find(|e| e.dependent == i && e.head == Some(j))
        .map(|e| e.relation.as_str())
}

pub fn hamming(a: &SentenceRecord, ca: usize, b: &SentenceRecord, cb: usize, sigma: f64) -> f64 {
    let l = a.tokens.len().min(b.tokens.len());
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..l {
        let d = t as f64 - ca as f64;
        let w = (-d * d / (2.0 * sigma * sigma)).exp();
        let mut m = 0.0;
        if relation(a, ca, t) != relation(b, cb, t) {
            m += 1.0;
        }
        if (&a.pos_tags[ca], &a.pos_tags[t]) != (&b.pos_tags[cb], &b.pos_tags[t]) {
            m += 1.0;
        }
        num += w * m;
        den += w;
    }
    num / (2.0 * den)
}

fn directed(a: &SentenceRecord, b: &SentenceRecord, sigma: f64) -> f64 {
    let (ca, cb) = (centers(a), centers(b));
    let mut sum = 0.0;
    for &i in &ca {
        for &j in &cb {
            sum += hamming(a, i, b, j, sigma);
        }
    }
    let d = sum / (ca.len() * cb.len()) as f64;
    1.0 / (1.0 + d.exp())
}

pub fn lig(a: &SentenceRecord, b: &SentenceRecord, sigma: f64) -> f64 {
    (directed(a, b, sigma) + directed(b, a, sigma)) / 2.0
}

pub fn dom(a: &SentenceRecord, b: &SentenceRecord) -> f64 {
    if a.domain.trim() == b.domain.trim() {
        1.0
    } else {
        0.0
    }
}

fn counts(r: &SentenceRecord) -> [f64; 3] {
    let mut v = [0.0; 3];
    for p in &r.pairs {
        let k = match p.polarity {
            Polarity::Positive => 0,
            Polarity::Neutral => 1,
            Polarity::Negative => 2,
        };
        v[k] += 1.0;
    }
    v
}

pub fn sen(a: &SentenceRecord, b: &SentenceRecord) -> f64 {
    let (x, y) = (counts(a), counts(b));
    let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let nx = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let ny = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return 0.5;
    }
    0.5 * dot / (nx * ny) + 0.5
}
