use std::collections::BTreeMap;
use std::rc::Rc;

use super::{
    names, EmbeddingProvider, FeatureEmbeddings, HeadParams, MgateConfig, MgateParams,
    ProjectionParams,
};
use crate::channel::Channel;
use crate::corpus::SentenceRecord;
use crate::error::{Error, Result};
use crate::numerics::{
    ParamStore, Tape, Tensor2, Var, DEFAULT_LAYER_NORM_EPS, DEFAULT_LEAKY_SLOPE,
};

/// Parameters placed on a tape, by name.
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
    shared_attention: bool,
}

impl Bound {
    pub(crate) fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub(crate) fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }
}

/// Puts every tensor of `store` on the tape; names for which `trainable`
/// is false become constants.
pub(crate) fn bind_params(
    tape: &mut Tape,
    store: &ParamStore,
    shared_attention: bool,
    trainable: impl Fn(&str) -> bool,
) -> Bound {
    let vars = store
        .iter()
        .map(|(name, t)| {
            let v = if trainable(name) {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect();
    Bound {
        vars,
        shared_attention,
    }
}

struct HeadVars {
    w_a: Var,
    a_src: Var,
    a_dst: Var,
    gamma: Var,
    beta: Var,
}

fn head_vars(tape: &mut Tape, w_a: Var, a: Var, gamma: Var, beta: Var) -> Result<HeadVars> {
    Ok(HeadVars {
        w_a,
        a_src: tape.gather_rows(a, &[0])?,
        a_dst: tape.gather_rows(a, &[1])?,
        gamma,
        beta,
    })
}

/// Neighbor mask `A_ij > delta`; a row with no such entry keeps its argmax.
fn neighbor_mask(adj: &Tensor2, delta: f64) -> Rc<[bool]> {
    let n = adj.cols();
    let mut mask = Vec::with_capacity(adj.rows() * n);
    for i in 0..adj.rows() {
        let row = adj.row(i);
        let start = mask.len();
        mask.extend(row.iter().map(|&v| v > delta));
        if !mask[start..].iter().any(|&m| m) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            mask[start + best] = true;
        }
    }
    mask.into()
}

fn adjacency_on_tape(tape: &mut Tape, h: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let ht = tape.transpose(h);
    let logits = tape.matmul(hw, ht)?;
    Ok(tape.sigmoid(logits))
}

/// `E_i = LayerNorm(sum_j alpha_ij A_ij W_a h_j)` over the thresholded neighbors.
fn attend_on_tape(
    tape: &mut Tape,
    h: Var,
    adj: Var,
    head: &HeadVars,
    delta: f64,
    slope: f64,
    eps: f64,
) -> Result<Var> {
    let mask = neighbor_mask(tape.value(adj), delta);
    let g = tape.matmul(h, head.w_a)?;
    let a_src_t = tape.transpose(head.a_src);
    let a_dst_t = tape.transpose(head.a_dst);
    let src = tape.matmul(g, a_src_t)?;
    let dst = tape.matmul(g, a_dst_t)?;
    let raw = tape.outer_sum(src, dst)?;
    let scores = tape.leaky_relu(raw, slope);
    let alpha = tape.masked_softmax_rows(scores, mask)?;
    let weights = tape.mul(alpha, adj)?;
    let mixed = tape.matmul(weights, g)?;
    tape.layer_norm_rows(mixed, head.gamma, head.beta, eps)
}

/// Encodes one sentence given its vocabulary rows; returns `1 x d` vars
/// ordered lig, dom, sen, avg.
pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    rows: &[usize],
    cfg: &MgateConfig,
) -> Result<[Var; 4]> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot encode an empty sentence".into(),
        ));
    }
    let h = tape.gather_rows(bound.var(names::EMBED), rows)?;
    let mut pooled = Vec::with_capacity(3);
    for f in Channel::FEATURES {
        let adj = adjacency_on_tape(tape, h, bound.var(&names::adjacency(f)))?;
        let p = names::attention(f, bound.shared_attention);
        let head = head_vars(
            tape,
            bound.var(&format!("{p}.w")),
            bound.var(&format!("{p}.a")),
            bound.var(&format!("{p}.gamma")),
            bound.var(&format!("{p}.beta")),
        )?;
        let e = attend_on_tape(
            tape,
            h,
            adj,
            &head,
            cfg.delta,
            cfg.leaky_slope,
            cfg.layer_norm_eps,
        )?;
        pooled.push(tape.mean_rows(e)?);
    }
    let sum = tape.add(pooled[0], pooled[1])?;
    let sum = tape.add(sum, pooled[2])?;
    let avg = tape.scale(sum, 1.0 / 3.0);
    Ok([pooled[0], pooled[1], pooled[2], avg])
}

/// Two-layer projection followed by row normalization: `b x d -> b x d`.
pub(crate) fn project_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    channel: Channel,
    slope: f64,
) -> Result<Var> {
    let p = names::projection(channel);
    project_with(
        tape,
        x,
        [
            bound.var(&format!("{p}.w1")),
            bound.var(&format!("{p}.b1")),
            bound.var(&format!("{p}.w2")),
            bound.var(&format!("{p}.b2")),
        ],
        slope,
    )
}

fn project_with(tape: &mut Tape, x: Var, [w1, b1, w2, b2]: [Var; 4], slope: f64) -> Result<Var> {
    let z = tape.matmul(x, w1)?;
    let z = tape.add_row_broadcast(z, b1)?;
    let z = tape.leaky_relu(z, slope);
    let z = tape.matmul(z, w2)?;
    let z = tape.add_row_broadcast(z, b2)?;
    Ok(tape.l2_normalize_rows(z))
}

/// Token matrix `H`: one table row per token, unknown tokens on the UNK row.
pub fn embed_tokens(rec: &SentenceRecord, provider: &EmbeddingProvider) -> Tensor2 {
    provider.table.select_rows(&provider.vocab.rows(rec))
}

/// `sigmoid(H W Hᵀ)`.
pub fn adaptive_adjacency(h: &Tensor2, w: &Tensor2) -> Result<Tensor2> {
    if w.rows() != h.cols() || w.cols() != h.cols() {
        return Err(Error::shape(
            "adaptive_adjacency",
            format!("H {:?} with W {:?}", h.shape(), w.shape()),
        ));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let wv = tape.constant(w.clone());
    let a = adjacency_on_tape(&mut tape, hv, wv)?;
    Ok(tape.value(a).clone())
}

/// One attention head over a precomputed adjacency, with the default
/// LeakyReLU slope and LayerNorm epsilon.
pub fn attention_layer(
    h: &Tensor2,
    adj: &Tensor2,
    head: &HeadParams,
    delta: f64,
) -> Result<Tensor2> {
    let n = h.rows();
    if adj.shape() != (n, n) {
        return Err(Error::shape(
            "attention_layer",
            format!("H {:?} with A {:?}", h.shape(), adj.shape()),
        ));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let av = tape.constant(adj.clone());
    let w_a = tape.constant(head.w_a.clone());
    let a = tape.constant(head.a.clone());
    let gamma = tape.constant(head.gamma.clone());
    let beta = tape.constant(head.beta.clone());
    let hv_head = head_vars(&mut tape, w_a, a, gamma, beta)?;
    let e = attend_on_tape(
        &mut tape,
        hv,
        av,
        &hv_head,
        delta,
        DEFAULT_LEAKY_SLOPE,
        DEFAULT_LAYER_NORM_EPS,
    )?;
    Ok(tape.value(e).clone())
}

pub fn encode_sentence(
    rec: &SentenceRecord,
    provider: &EmbeddingProvider,
    params: &MgateParams,
    cfg: &MgateConfig,
) -> Result<FeatureEmbeddings> {
    let mut tape = Tape::new();
    let mut store = params.store.clone();
    store.insert(names::EMBED.to_string(), provider.table.clone());
    let bound = bind_params(&mut tape, &store, params.shared_attention, |_| false);
    let out = encode_on_tape(&mut tape, &bound, &provider.vocab.rows(rec), cfg)?;
    let take = |v: Var| tape.value(v).data().to_vec();
    Ok(FeatureEmbeddings {
        lig: take(out[0]),
        dom: take(out[1]),
        sen: take(out[2]),
        avg: take(out[3]),
    })
}

/// Cosine between the projections of `u` and `v`; 0 if either projection vanishes.
pub fn critic(u: &[f64], v: &[f64], proj: &ProjectionParams) -> Result<f64> {
    let d = proj.w1.rows();
    if u.len() != d || v.len() != d {
        return Err(Error::shape(
            "critic",
            format!(
                "inputs of length {} and {} for dimension {d}",
                u.len(),
                v.len()
            ),
        ));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::new(2, d, [u, v].concat())?);
    let w = [
        tape.constant(proj.w1.clone()),
        tape.constant(proj.b1.clone()),
        tape.constant(proj.w2.clone()),
        tape.constant(proj.b2.clone()),
    ];
    let z = project_with(&mut tape, x, w, DEFAULT_LEAKY_SLOPE)?;
    let zt = tape.value(z);
    Ok(zt.row(0).iter().zip(zt.row(1)).map(|(a, b)| a * b).sum())
}
