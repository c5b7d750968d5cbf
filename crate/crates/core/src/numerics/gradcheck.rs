use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic gradients against central differences on every coordinate.
///
/// The error for coordinate `k` is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(f: F, theta: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_coords(f, theta, analytic, eps, 0..theta.len())
}

/// Like [`grad_check`], restricted to the given coordinates.
pub fn grad_check_coords<F, I>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: I,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
    I: IntoIterator<Item = usize>,
{
    if theta.len() != analytic.len() {
        return Err(Error::Shape {
            op: "grad_check",
            expected: vec![theta.len()],
            got: vec![analytic.len()],
        });
    }
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for k in coords {
        probe[k] = theta[k] + eps;
        let up = f(&probe);
        probe[k] = theta[k] - eps;
        let down = f(&probe);
        probe[k] = theta[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: k,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
