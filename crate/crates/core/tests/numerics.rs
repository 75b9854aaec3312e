use std::rc::Rc;

use faima::numerics::{
    adamw_step, AdamWConfig, GradStore, OptimizerState, ParamStore, Tape, Tensor2, Var,
};
use faima::Result;
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Fixed output weights so every output element gets a distinct cotangent.
fn cotangent(rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |i, j| {
        0.7 + 0.13 * ((3 * i + 5 * j) % 7) as f64 - 0.4 * ((i + j) % 2) as f64
    })
}

fn mask(rows: usize, cols: usize) -> Rc<[bool]> {
    (0..rows * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            j == i % cols || (i + 2 * j) % 3 != 0
        })
        .collect()
}

type Op = fn(&mut Tape, &[Var]) -> Result<Var>;

fn weighted_output(inputs: &[Tensor2], op: Op) -> Result<(f64, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(cotangent(r, c));
    let loss = tape.dot(out, w)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols()))
        })
        .collect();
    Ok((value, g))
}

/// Largest `max|a - n| / max(max|a|, max|n|, 1e-6)` over the input tensors,
/// each compared at its own gradient scale.
fn max_fd_error(inputs: &[Tensor2], op: Op) -> f64 {
    let (_, analytic) = weighted_output(inputs, op).unwrap();
    let mut worst: f64 = 0.0;
    for (p, tensor) in inputs.iter().enumerate() {
        let (mut diff, mut scale): (f64, f64) = (0.0, 1e-6);
        for k in 0..tensor.data().len() {
            let mut probe = inputs.to_vec();
            probe[p].data_mut()[k] += H;
            let up = weighted_output(&probe, op).unwrap().0;
            probe[p].data_mut()[k] -= 2.0 * H;
            let down = weighted_output(&probe, op).unwrap().0;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[p].data()[k];
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        worst = worst.max(diff / scale);
    }
    worst
}

const OPS: &[(&str, Op)] = &[
    ("matmul", |t, v| {
        let bt = t.transpose(v[1]);
        t.matmul(v[0], bt)
    }),
    ("add", |t, v| t.add(v[0], v[1])),
    ("sub", |t, v| t.sub(v[0], v[1])),
    ("mul", |t, v| t.mul(v[0], v[1])),
    ("scale", |t, v| Ok(t.scale(v[0], -1.7))),
    ("transpose", |t, v| Ok(t.transpose(v[0]))),
    ("concat_rows", |t, v| t.concat_rows(&[v[0], v[1]])),
    ("sigmoid", |t, v| Ok(t.sigmoid(v[0]))),
    ("tanh", |t, v| Ok(t.tanh(v[0]))),
    ("mean_rows", |t, v| t.mean_rows(v[0])),
    ("l2_normalize_rows", |t, v| Ok(t.l2_normalize_rows(v[0]))),
    ("dot", |t, v| t.dot(v[0], v[1])),
    ("add_row_broadcast", |t, v| {
        let b = t.gather_rows(v[1], &[2])?;
        t.add_row_broadcast(v[0], b)
    }),
    ("outer_sum", |t, v| {
        let ones4 = t.constant(Tensor2::filled(4, 1, 1.0));
        let ones3 = t.constant(Tensor2::filled(3, 1, 1.0));
        let u = t.matmul(v[0], ones4)?;
        let bt = t.transpose(v[1]);
        let w = t.matmul(bt, ones3)?;
        t.outer_sum(u, w)
    }),
    ("gather_rows", |t, v| t.gather_rows(v[0], &[2, 0, 2, 1])),
    ("masked_softmax_rows", |t, v| {
        t.masked_softmax_rows(v[0], mask(3, 4))
    }),
    ("masked_logsumexp_rows", |t, v| {
        t.masked_logsumexp_rows(v[0], mask(3, 4))
    }),
    ("layer_norm_rows", |t, v| {
        let g = t.gather_rows(v[1], &[0])?;
        let b = t.gather_rows(v[1], &[1])?;
        t.layer_norm_rows(v[0], g, b, 1e-5)
    }),
    ("mean_all", |t, v| t.mean_all(v[0])),
    ("sum_all", |t, v| Ok(t.sum_all(v[0]))),
];

fn tensor34() -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(-2.0f64..2.0, 12).prop_map(|d| Tensor2::new(3, 4, d).unwrap())
}

/// Operands bounded away from the LeakyReLU kink by more than the step.
fn tensor34_off_kink() -> impl Strategy<Value = Tensor2> {
    prop::collection::vec((0.01f64..2.0, any::<bool>()), 12).prop_map(|d| {
        Tensor2::new(
            3,
            4,
            d.into_iter().map(|(x, s)| if s { x } else { -x }).collect(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 120, ..ProptestConfig::default() })]

    #[test]
    fn every_primitive_matches_central_differences(a in tensor34(), b in tensor34()) {
        for (name, op) in OPS {
            let err = max_fd_error(&[a.clone(), b.clone()], *op);
            prop_assert!(err < TOL, "{name}: relative error {err:e}");
        }
    }

    #[test]
    fn leaky_relu_matches_central_differences(a in tensor34_off_kink()) {
        let err = max_fd_error(&[a], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
        prop_assert!(err < TOL, "leaky_relu: relative error {err:e}");
    }

    #[test]
    fn composed_graph_matches_central_differences(a in tensor34(), b in tensor34()) {
        let err = max_fd_error(&[a, b], |t, v| {
            let bt = t.transpose(v[1]);
            let s = t.matmul(v[0], bt)?;
            let s = t.sigmoid(s);
            let p = t.masked_softmax_rows(s, mask(3, 3))?;
            let m = t.matmul(p, v[0])?;
            let g = t.gather_rows(v[1], &[0])?;
            let z = t.gather_rows(v[1], &[1])?;
            let n = t.layer_norm_rows(m, g, z, 1e-5)?;
            let n = t.tanh(n);
            Ok(t.l2_normalize_rows(n))
        });
        prop_assert!(err < TOL, "composed: relative error {err:e}");
    }

    #[test]
    fn adamw_zero_gradient_without_decay_is_identity(a in tensor34()) {
        let mut params = ParamStore::new();
        params.insert("w".into(), a.clone());
        let mut grads = GradStore::new();
        grads.insert("w".into(), Tensor2::zeros(3, 4));
        let mut st = OptimizerState::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
        adamw_step(&mut params, &grads, &mut st, 1e-3).unwrap();
        prop_assert_eq!(&params["w"], &a);
    }
}

#[test]
fn sigmoid_at_zero_on_the_tape() {
    let mut t = Tape::new();
    let x = t.param(Tensor2::scalar(0.0));
    let y = t.sigmoid(x);
    assert_eq!(t.value(y).item(), 0.5);
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 0.25);
}
