use ndarray::{Array2, Axis};
use rand::Rng;

use super::tensor::shape_err;
use super::{check_finite, glorot, Activation, NnError, Param};

/// `act(X·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Array2<f64>,
    out: Array2<f64>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            w: Param::new(glorot(inputs, outputs, inputs, outputs, rng)),
            b: Param::zeros(1, outputs),
            act,
        }
    }

    pub fn from_weights(w: Array2<f64>, b: Array2<f64>, act: Activation) -> Self {
        Self {
            w: Param::new(w),
            b: Param::new(b),
            act,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DenseCache), NnError> {
        if x.ncols() != self.w.value.nrows() {
            return Err(shape_err(
                "dense",
                format!("input has {} columns, weight expects {}", x.ncols(), self.w.value.nrows()),
            ));
        }
        let mut out = x.dot(&self.w.value) + &self.b.value;
        self.act.apply_inplace(&mut out);
        check_finite(&out, "dense")?;
        Ok((
            out.clone(),
            DenseCache {
                x: x.clone(),
                out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DenseCache, dout: &Array2<f64>) -> Array2<f64> {
        let dz = self.act.backprop(&cache.out, dout);
        self.w.grad += &cache.x.t().dot(&dz);
        self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        dz.dot(&self.w.value.t())
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.w, &self.b]
    }
}
