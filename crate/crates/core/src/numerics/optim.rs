use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
pub type ParamStore = BTreeMap<String, Tensor2>;
/// Gradients keyed like a [`ParamStore`].
pub type GradStore = BTreeMap<String, Tensor2>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first: BTreeMap<String, Tensor2>,
    second: BTreeMap<String, Tensor2>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// Global L2 norm across every gradient tensor.
pub fn global_norm(grads: &GradStore) -> f64 {
    grads.values().map(Tensor2::norm_sq).sum::<f64>().sqrt()
}

/// One AdamW update with bias correction and decoupled weight decay, using
/// `lr` for this step. Gradients are clipped to the configured global norm
/// first. Parameters without a gradient are left untouched.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &GradStore,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (name, g) in grads {
        let Some(p) = params.get(name) else {
            return Err(Error::InvalidArgument(format!(
                "gradient for unknown parameter {name}"
            )));
        };
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adamw_step",
                format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    let cfg = state.config;
    let clip_scale = match cfg.clip_norm {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows(), g.cols()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows(), g.cols()));
        let decay = 1.0 - lr * cfg.weight_decay;
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gv = gv * clip_scale;
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Linear warmup over the first `warmup_steps` steps, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    /// Warmup covering `fraction` of `total_steps`, rounded up.
    pub fn new(base_lr: f64, total_steps: u64, fraction: f64) -> Self {
        WarmupSchedule {
            base_lr,
            warmup_steps: (total_steps as f64 * fraction).ceil() as u64,
        }
    }

    /// Learning rate for 0-based step `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        [("w".to_string(), Tensor2::scalar(v))]
            .into_iter()
            .collect()
    }

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = store(1.0);
        let mut st = OptimizerState::new(no_decay());
        adamw_step(&mut p, &store(0.5), &mut st, 1e-3).unwrap();
        // m_hat = g, v_hat = g^2  =>  step = lr * g / (|g| + eps)
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p["w"].item() - expected).abs() < 1e-15);
        assert!((p["w"].item() - 0.999).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_identity_without_decay() {
        let mut p = store(0.7);
        let mut st = OptimizerState::new(no_decay());
        for _ in 0..5 {
            adamw_step(&mut p, &store(0.0), &mut st, 1e-2).unwrap();
        }
        assert_eq!(p["w"].item(), 0.7);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut p = store(2.0);
        let mut st = OptimizerState::new(AdamWConfig {
            weight_decay: 0.01,
            ..AdamWConfig::default()
        });
        adamw_step(&mut p, &store(0.0), &mut st, 1e-3).unwrap();
        assert_eq!(p["w"].item(), 2.0 * (1.0 - 1e-3 * 0.01));
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        // with clipping the first moment sees g * (1 / |g|)
        let mut st = OptimizerState::new(no_decay());
        let mut p = store(0.0);
        adamw_step(&mut p, &store(100.0), &mut st, 1.0).unwrap();
        assert!((st.first["w"].item() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(1.0);
        let mut st = OptimizerState::new(no_decay());
        let mut g = store(0.0);
        g.get_mut("w").unwrap().data_mut()[0] = f64::NAN;
        let err = adamw_step(&mut p, &g, &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p["w"].item(), 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn warmup_schedule() {
        let s = WarmupSchedule::new(1.0, 100, 0.05);
        assert_eq!(s.warmup_steps, 5);
        assert_eq!(s.lr(0), 0.2);
        assert_eq!(s.lr(4), 1.0);
        assert_eq!(s.lr(50), 1.0);
        assert_eq!(WarmupSchedule::new(2e-4, 0, 0.05).lr(0), 2e-4);
    }
}
