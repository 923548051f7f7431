//! Central finite-difference verification of analytic gradients.

use crate::tensor::Parameter;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares the analytic gradients currently stored in a model's parameters
/// against central finite differences of `loss`.
///
/// The caller must already have run a forward/backward pass so that every
/// parameter's gradient holds the analytic value for the same loss that
/// `loss` evaluates. `params` exposes the model's parameters in a stable
/// order; `loss` re-evaluates the forward pass only.
///
/// Per entry the relative error is
/// `|g_analytic - g_numeric| / max(1e-8, |g_analytic| + |g_numeric|)`
/// and the maximum over all entries is reported.
pub fn grad_check<M>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Parameter>,
    loss: impl Fn(&mut M) -> f64,
    h: f64,
) -> GradCheckReport {
    assert!(h > 0.0, "finite-difference step must be positive");

    let analytic: Vec<(String, Vec<f64>)> = params(model)
        .iter()
        .map(|p| (p.name.clone(), p.grad().data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for ei in 0..grads.len() {
            let original = {
                let mut ps = params(model);
                let v = ps[pi].value_mut().data_mut();
                let orig = v[ei];
                v[ei] = orig + h;
                orig
            };
            let loss_plus = loss(model);
            {
                let mut ps = params(model);
                ps[pi].value_mut().data_mut()[ei] = original - h;
            }
            let loss_minus = loss(model);
            {
                let mut ps = params(model);
                ps[pi].value_mut().data_mut()[ei] = original;
            }

            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let ga = grads[ei];
            let rel = (ga - numeric).abs() / (1e-8f64).max(ga.abs() + numeric.abs());
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = ei;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Parameter, Tensor};

    #[test]
    fn quadratic_matches_closed_form() {
        // f(x) = x^2 at x = 3: analytic derivative 6
        let mut params = vec![Parameter::new("x", Tensor::scalar(3.0))];
        params[0].grad_mut().data_mut()[0] = 6.0;
        let report = grad_check(
            &mut params,
            |m| m.iter_mut().collect(),
            |m| {
                let x = m[0].value().data()[0];
                x * x
            },
            1e-6,
        );
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
        assert_eq!(report.entries_checked, 1);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut params = vec![Parameter::new("x", Tensor::scalar(1.5))];
        let report = grad_check(&mut params, |m| m.iter_mut().collect(), |_| 42.0, 1e-6);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut params = vec![Parameter::new("x", Tensor::scalar(2.0))];
        params[0].grad_mut().data_mut()[0] = 100.0; // truth is 4
        let report = grad_check(
            &mut params,
            |m| m.iter_mut().collect(),
            |m| {
                let x = m[0].value().data()[0];
                x * x
            },
            1e-6,
        );
        assert!(report.max_rel_err > 0.5);
        assert_eq!(report.worst_param, "x");
    }
}
