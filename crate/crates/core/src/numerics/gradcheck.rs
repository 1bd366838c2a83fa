use super::{NumericsError, Tensor};

/// Denominator floor for the relative error, so that a zero analytic
/// gradient paired with a zero difference scores 0.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Relative error of `analytic` against the central-difference `numeric`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(ABS_FLOOR)
}

/// Compares the analytic gradient returned by `f` against central
/// differences `(f(p+eps) - f(p-eps)) / 2eps`, element by element.
///
/// `f` maps parameters to `(loss, gradients)`. It is evaluated twice at the
/// unperturbed point first; any bitwise disagreement is reported as a
/// contract error since finite differences of a non-deterministic function
/// are meaningless.
pub fn grad_check<F, E>(mut f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>), E>,
    E: From<NumericsError>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(NumericsError::Contract(format!("grad_check eps must be positive, got {eps}")).into());
    }
    let (loss_a, grads) = f(params)?;
    let (loss_b, grads_b) = f(params)?;
    if loss_a.to_bits() != loss_b.to_bits() || grads != grads_b {
        return Err(NumericsError::Contract("function is not deterministic across evaluations".into()).into());
    }
    if grads.len() != params.len() {
        return Err(NumericsError::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        ))
        .into());
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tol,
    };
    for (pi, grad) in grads.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(NumericsError::Shape(format!("gradient {pi} has the wrong shape")).into());
        }
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let (up, _) = f(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let (down, _) = f(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.data()[ei];
            let err = rel_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, ei));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn quadratic(p: &[Tensor]) -> Result<(f64, Vec<Tensor>), NumericsError> {
        // loss = sum_i (i+1) * w_i^2 + w_0 w_1
        let w = p[0].data();
        let loss: f64 = w.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum::<f64>() + w[0] * w[1];
        let mut g: Vec<f64> = w.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect();
        g[0] += w[1];
        g[1] += w[0];
        Ok((loss, vec![Tensor::new(vec![w.len()], g)?]))
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap();
        let r = grad_check(quadratic, &[p], 1e-4, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!(r.passed());
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn zero_gradient_scores_zero() {
        let f = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>), NumericsError> {
            Ok((4.0, vec![Tensor::zeros(p[0].shape())]))
        };
        let r = grad_check(f, &[Tensor::ones(&[2])], 1e-6, 1e-4).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let f = |p: &[Tensor]| {
            let (l, g) = quadratic(p)?;
            Ok::<_, NumericsError>((l, vec![g[0].map(|v| v * 1.1)?]))
        };
        let p = Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap();
        let r = grad_check(f, &[p], 1e-5, 1e-4).unwrap();
        assert!((r.max_rel_error - 0.1).abs() < 1e-6, "{r:?}");
        assert!(!r.passed());
    }

    #[test]
    fn nondeterminism_detected() {
        let calls = Cell::new(0u32);
        let f = |p: &[Tensor]| {
            calls.set(calls.get() + 1);
            Ok::<_, NumericsError>((calls.get() as f64, vec![Tensor::zeros(p[0].shape())]))
        };
        let err = grad_check(f, &[Tensor::ones(&[1])], 1e-6, 1e-4).unwrap_err();
        assert!(matches!(err, NumericsError::Contract(_)));
    }

    #[test]
    fn rejects_nonpositive_eps() {
        assert!(grad_check(quadratic, &[Tensor::ones(&[2])], 0.0, 1e-4).is_err());
    }
}
