//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

/// Pass criteria for a single coordinate.
#[derive(Debug, Clone, Copy)]
pub struct GradTolerance {
    pub step: f64,
    pub rel: f64,
    /// Coordinates whose absolute error is below this pass regardless of
    /// relative error.
    pub abs: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-5,
            abs: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateError {
    pub point: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub points: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: usize,
    /// Coordinate with the largest relative error among failures, or overall
    /// when everything passed.
    pub worst: Option<CoordinateError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Central difference `(f(x + h e_k) − f(x − h e_k)) / 2h` for every `k`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares `grad` against central differences of `f` at every point.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    points: &[Vec<f64>],
    tol: GradTolerance,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        points: points.len(),
        coordinates: points.first().map_or(0, Vec::len),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: 0,
        worst: None,
    };
    let mut worst_fail: Option<CoordinateError> = None;
    let mut worst_any: Option<CoordinateError> = None;
    for (pi, x) in points.iter().enumerate() {
        let analytic = grad(x);
        let numeric = central_difference(&f, x, tol.step);
        for (k, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let abs_error = (a - n).abs();
            let scale = a.abs().max(n.abs());
            let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
            let e = CoordinateError {
                point: pi,
                coordinate: k,
                analytic: a,
                numeric: n,
                abs_error,
                rel_error,
            };
            report.max_abs_error = report.max_abs_error.max(abs_error);
            let failed = !(abs_error < tol.abs || rel_error < tol.rel);
            if failed {
                report.failures += 1;
                if worst_fail.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                    worst_fail = Some(e.clone());
                }
            }
            if abs_error >= tol.abs {
                report.max_rel_error = report.max_rel_error.max(rel_error);
            }
            if worst_any.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                worst_any = Some(e);
            }
        }
    }
    report.worst = worst_fail.or(worst_any);
    report
}
