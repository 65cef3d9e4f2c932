use crate::error::{CsclError, Result};

use super::NamedTensor;

/// Denominator floor for relative-error comparisons.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Worst `|analytic − numeric| / max(|numeric|, floor)` over all entries.
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(REL_ERR_FLOOR)
}

/// Central-difference check of the gradients stored in `params[..].grad`
/// against `f`. Each entry is perturbed by `±eps` in turn and restored.
pub fn grad_check<L>(mut f: L, params: &mut [NamedTensor<f64>], eps: f64) -> Result<GradCheck>
where
    L: FnMut(&[NamedTensor<f64>]) -> f64,
{
    if !(eps > 0.0) {
        return Err(CsclError::invalid("grad_check eps must be positive"));
    }
    let base = f(params);
    if !base.is_finite() {
        return Err(CsclError::NonFinite("grad_check objective".into()));
    }
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    for t in 0..params.len() {
        for i in 0..params[t].values.len() {
            let orig = params[t].values[i];
            params[t].values[i] = orig + eps;
            let up = f(params);
            params[t].values[i] = orig - eps;
            let down = f(params);
            params[t].values[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(CsclError::NonFinite(format!(
                    "grad_check objective at {}[{i}]",
                    params[t].name
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let analytic = params[t].grad[i];
            let err = relative_error(analytic, numeric);
            report.entries += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((params[t].name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64, g: f64) -> Vec<NamedTensor<f64>> {
        let mut t = NamedTensor::new("x", vec![1], vec![x]).unwrap();
        t.grad[0] = g;
        vec![t]
    }

    #[test]
    fn square_at_three() {
        let mut p = scalar(3.0, 6.0);
        let r = grad_check(|p| p[0].values[0].powi(2), &mut p, 1e-4).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut p = scalar(3.0, 12.0);
        let r = grad_check(|p| p[0].values[0].powi(2), &mut p, 1e-4).unwrap();
        assert!((r.max_rel_err - 1.0).abs() < 1e-6, "{r:?}");
        assert!(!r.passes(1e-5));
    }

    #[test]
    fn non_finite_objective_errors() {
        let mut p = scalar(0.0, 0.0);
        let r = grad_check(|p| (p[0].values[0]).ln(), &mut p, 1e-4);
        assert!(r.is_err());
    }

    #[test]
    fn params_restored_after_check() {
        let mut p = scalar(1.25, 2.5);
        grad_check(|p| p[0].values[0].powi(2), &mut p, 1e-3).unwrap();
        assert_eq!(p[0].values[0], 1.25);
    }
}
