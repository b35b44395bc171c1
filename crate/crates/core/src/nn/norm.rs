use ndarray::{Array1, Array2, Axis};

const EPS: f64 = 1e-8;

/// Per-row L2 normalization `x / sqrt(‖x‖² + ε)`. Returns the normalized
/// rows and the row norms needed by the backward pass.
pub fn l2_normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| (r.dot(&r) + EPS).sqrt());
    let y = x / &norms.view().insert_axis(Axis(1));
    (y, norms)
}

pub fn l2_normalize_rows_backward(
    y: &Array2<f64>,
    norms: &Array1<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    // dx = (dy - y (y·dy)) / n
    let proj = (y * dy).sum_axis(Axis(1));
    let mut dx = dy - &(y * &proj.insert_axis(Axis(1)));
    dx /= &norms.view().insert_axis(Axis(1));
    dx
}
