//! Central finite-difference gradient checking.
//!
//! Derivatives are estimated with a Richardson-extrapolated central
//! difference, `(4·D(h/2) − D(h)) / 3`, where
//! `D(h) = (f(x+h) − f(x−h)) / 2h`. Only `f` is evaluated, so the estimate is
//! independent of any backward pass.

use ndarray::Array2;

pub const STEP: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-5;

pub fn central_difference<F: FnMut(f64) -> f64>(x0: f64, mut f: F) -> f64 {
    let d = |h: f64, f: &mut F| (f(x0 + h) - f(x0 - h)) / (2.0 * h);
    let d1 = d(STEP, &mut f);
    let d2 = d(STEP / 2.0, &mut f);
    (4.0 * d2 - d1) / 3.0
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Numeric gradient of `f` with respect to every entry of `x`.
pub fn numeric_gradient<F>(x: &mut Array2<f64>, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let x0 = x[[r, c]];
        g[[r, c]] = central_difference(x0, |v| {
            x[[r, c]] = v;
            let out = f(x);
            x[[r, c]] = x0;
            out
        });
    }
    g
}

/// Like [`numeric_gradient`], but also reports which coordinates are smooth.
///
/// A coordinate counts as non-smooth when the difference quotients at `h`
/// and `h/4` disagree by more than `1e-6` relative: a ReLU kink within one
/// step of `x` shifts the wide quotient by a fixed fraction of the jump,
/// while a smooth function only moves it by `O(h²)`.
pub fn numeric_gradient_smooth<F>(x: &mut Array2<f64>, mut f: F) -> (Array2<f64>, Array2<bool>)
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut g = Array2::zeros(x.raw_dim());
    let mut smooth = Array2::from_elem(x.raw_dim(), true);
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let x0 = x[[r, c]];
        let mut eval = |v: f64| {
            x[[r, c]] = v;
            let out = f(x);
            x[[r, c]] = x0;
            out
        };
        let mut d = |h: f64| (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
        let (d1, d2, d4) = (d(STEP), d(STEP / 2.0), d(STEP / 4.0));
        g[[r, c]] = (4.0 * d2 - d1) / 3.0;
        smooth[[r, c]] = (d1 - d4).abs() <= 1e-6 * d1.abs().max(d4.abs()).max(FLOOR);
    }
    (g, smooth)
}

/// Largest relative error over the coordinates flagged in `keep`.
pub fn max_relative_error_masked(
    analytic: &Array2<f64>,
    numeric: &Array2<f64>,
    keep: &Array2<bool>,
) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((&a, &n), _)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Largest relative error between two gradient arrays.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivative() {
        let d = central_difference(1.3, |x| x.powi(5) - 2.0 * x);
        let exact = 5.0 * 1.3f64.powi(4) - 2.0;
        assert!(relative_error(exact, d) < 1e-10);
    }

    #[test]
    fn kink_is_flagged() {
        let mut x = Array2::from_elem((1, 2), 0.0);
        x[[0, 0]] = 3e-5;
        x[[0, 1]] = 0.7;
        let (g, smooth) = numeric_gradient_smooth(&mut x, |x| x.mapv(|v| v.max(0.0) + v * v).sum());
        assert!(!smooth[[0, 0]]);
        assert!(smooth[[0, 1]]);
        assert!(relative_error(1.0 + 1.4, g[[0, 1]]) < 1e-9);
    }
}
