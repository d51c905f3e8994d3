/// Outcome of a finite-difference comparison. `worst_coord` pinpoints the
/// parameter with the largest relative error so failures are actionable.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

/// Central-difference check of an analytic gradient.
///
/// `f` maps a parameter vector to (loss, gradient); it is re-evaluated with
/// each coordinate nudged by `±step`. Relative error uses an absolute floor
/// so near-zero gradients do not blow up the ratio.
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    step: f64,
    tol: f64,
) -> GradCheckReport {
    let (_, analytic_grad) = f(x0);
    assert_eq!(analytic_grad.len(), x0.len(), "gradient length must match parameter length");

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        analytic: if x0.is_empty() { 0.0 } else { analytic_grad[0] },
        numeric: 0.0,
        pass: true,
    };
    let mut x = x0.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (loss_hi, _) = f(&x);
        x[i] = orig - step;
        let (loss_lo, _) = f(&x);
        x[i] = orig;
        let numeric = (loss_hi - loss_lo) / (2.0 * step);
        let analytic = analytic_grad[i];
        let scale = analytic.abs().max(numeric.abs()).max(1e-3);
        let rel = (analytic - numeric).abs() / scale;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    report.pass = report.max_rel_err <= tol;
    report
}

#[cfg(test)]
mod tests {
    use super::grad_check;
    use crate::autodiff::Tape;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_passes() {
        let mut f = |x: &[f64]| {
            let tape = Tape::new();
            let t = tape.leaf(x.to_vec(), &[x.len()]).unwrap();
            let loss = t.mul(&t).unwrap().sum_all();
            loss.backward().unwrap();
            (loss.scalar_value(), t.grad().unwrap())
        };
        let report = grad_check(&mut f, &[3.0, -1.5], 1e-5, 1e-7);
        assert!(report.pass, "rel err {}", report.max_rel_err);
        assert_relative_eq!(report.analytic, report.numeric, max_relative = 1e-6);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut f = |x: &[f64]| {
            let loss = x[0] * x[0];
            (loss, vec![x[0]]) // deliberately missing the factor of 2
        };
        let report = grad_check(&mut f, &[3.0], 1e-5, 1e-4);
        assert!(!report.pass);
        assert_eq!(report.worst_coord, 0);
        assert_relative_eq!(report.numeric, 6.0, max_relative = 1e-6);
        assert_relative_eq!(report.analytic, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_gradients_use_absolute_floor() {
        let mut f = |_x: &[f64]| (7.0, vec![0.0, 0.0]);
        let report = grad_check(&mut f, &[1.0, 2.0], 1e-5, 1e-6);
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }
}
