use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// A trainable matrix with its gradient accumulator and ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let z = Array2::zeros(value.raw_dim());
        Self {
            grad: z.clone(),
            m: z.clone(),
            v: z,
            value,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Glorot-uniform initialised matrix.
pub fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

/// Named parameter values, serialized as `{name: {shape, values}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet(pub BTreeMap<String, Tensor>);

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: &Array2<f64>) {
        self.0.insert(name.into(), Tensor::from_array2(value));
    }

    pub fn get(&self, name: &str) -> Result<Array2<f64>, NnError> {
        self.0
            .get(name)
            .ok_or_else(|| NnError::Params(format!("missing parameter {name:?}")))?
            .to_array2()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let set: ParamSet = serde_json::from_str(text).map_err(|e| NnError::Params(e.to_string()))?;
        for (name, t) in &set.0 {
            Tensor::new(t.shape.clone(), t.values.clone())
                .map_err(|e| NnError::Params(format!("{name}: {e}")))?;
        }
        Ok(set)
    }
}
