//! Central-difference gradient checking.

/// Largest relative error between `analytic` and a central-difference
/// estimate of ∇f at `point`, using `|a − n| / max(|a|, 1e-6)` per coordinate.
pub fn finite_difference_check<F>(f: F, analytic: &[f64], point: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len(), "gradient/point length mismatch");
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = central(&f, &mut x, i, h).0;
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared (|g| above the floor and not straddling a kink).
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree: the perturbation
    /// crossed a ReLU or hinge corner, where central differences are not an
    /// estimate of the derivative.
    pub kinks: usize,
    /// Coordinates with |g| at or below the floor.
    pub tiny: usize,
}

/// Gradient check that tolerates piecewise-linear corners.
///
/// A coordinate is compared only if `|g| > floor` and its forward and
/// backward one-sided differences agree to within `tol·|g|`. If a corner lies
/// inside the stencil, the central estimate is off by half the one-sided
/// disagreement, so skipped coordinates are exactly those where the central
/// estimate could exceed `tol / 2` for reasons other than a wrong gradient.
pub fn gradient_check<F>(
    f: F,
    analytic: &[f64],
    point: &[f64],
    h: f64,
    tol: f64,
    floor: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), point.len(), "gradient/point length mismatch");
    let mut x = point.to_vec();
    let f0 = f(point);
    let mut report = GradCheckReport::default();
    for i in 0..x.len() {
        let g = analytic[i];
        let (numeric, fp, fm, step) = central(&f, &mut x, i, h);
        if g.abs() <= floor && numeric.abs() <= floor {
            report.tiny += 1;
            continue;
        }
        let forward = (fp - f0) / (step / 2.0);
        let backward = (f0 - fm) / (step / 2.0);
        if (forward - backward).abs() > tol * g.abs().max(floor) {
            report.kinks += 1;
            continue;
        }
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(relative_error(g, numeric));
    }
    report
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-6)
}

/// Returns (estimate, f(x+h), f(x−h), actual stencil width).
fn central<F: Fn(&[f64]) -> f64>(f: &F, x: &mut [f64], i: usize, h: f64) -> (f64, f64, f64, f64) {
    let orig = x[i];
    x[i] = orig + h;
    let up = x[i];
    let fp = f(x);
    x[i] = orig - h;
    let down = x[i];
    let fm = f(x);
    x[i] = orig;
    let width = up - down;
    ((fp - fm) / width, fp, fm, width)
}
