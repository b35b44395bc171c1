use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the multiplicative mask (already
/// scaled by `1/(1-rate)`), which is also the backward multiplier.
pub fn dropout<R: Rng>(
    x: &Array2<f64>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> (Array2<f64>, Option<Array2<f64>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if mode == DropoutMode::Eval || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    (x * &mask, Some(mask))
}
