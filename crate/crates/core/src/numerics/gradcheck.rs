use serde::Serialize;

use super::optim::{GradStore, ParamStore};
use crate::error::Result;

/// Gradient magnitudes below this floor are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }

    pub fn max_relative_error(&self) -> f64 {
        self.worst().map_or(0.0, |w| w.max_relative_error)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic gradients against central differences
/// `(f(x + h) - f(x - h)) / 2h`, element by element.
///
/// `loss` returns the loss value and its analytic gradients. Parameters
/// absent from the analytic gradients are treated as having zero gradient.
pub fn gradcheck<F>(loss: F, params: &ParamStore, h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, GradStore)>,
{
    let (_, analytic) = loss(params)?;
    check_against(|p| Ok(loss(p)?.0), params, &analytic, h, tol)
}

/// Same as [`gradcheck`] with the analytic gradients supplied separately.
pub fn check_against<F>(
    value: F,
    params: &ParamStore,
    analytic: &GradStore,
    h: f64,
    tol: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut reports = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..tensor.data().len() {
            let orig = tensor.data()[k];
            probe.get_mut(name).expect("same keys").data_mut()[k] = orig + h;
            let up = value(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[k] = orig - h;
            let down = value(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(a, numeric);
            if err > worst.max_relative_error {
                worst = ParamCheck {
                    name: name.clone(),
                    max_relative_error: err,
                    worst_index: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        reports.push(worst);
    }
    Ok(GradcheckReport {
        params: reports,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    fn quadratic(p: &ParamStore) -> Result<(f64, GradStore)> {
        let value = p.values().map(|t| t.norm_sq()).sum::<f64>() / 2.0;
        Ok((value, p.clone()))
    }

    fn params() -> ParamStore {
        [
            (
                "a".to_string(),
                Tensor2::from_fn(2, 3, |i, j| i as f64 - 0.3 * j as f64),
            ),
            ("b".to_string(), Tensor2::row_vector(vec![0.25, -4.0])),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn quadratic_is_exact() {
        let r = gradcheck(quadratic, &params(), 1e-5, 1e-8).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_relative_error() < 1e-8);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let corrupted = |p: &ParamStore| {
            let (v, mut g) = quadratic(p)?;
            g.get_mut("b").unwrap().data_mut()[1] += 0.5;
            Ok((v, g))
        };
        let r = gradcheck(corrupted, &params(), 1e-5, 1e-4).unwrap();
        assert!(!r.passed());
        let w = r.worst().unwrap();
        assert_eq!((w.name.as_str(), w.worst_index), ("b", 1));
    }
}
