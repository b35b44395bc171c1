use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parameter file: {0}")]
    Params(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Dense row-major tensor of `f64`. Used for parameter (de)serialization and
/// as the interchange type at module boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        Self {
            shape: vec![a.nrows(), a.ncols()],
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>, NnError> {
        match self.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.values.clone())
                .map_err(|e| shape_err("tensor", e.to_string())),
            _ => Err(shape_err("tensor", format!("expected 2-d, got {:?}", self.shape))),
        }
    }

    pub fn to_arrayd(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.values.clone()).expect("validated shape")
    }
}

pub fn check_finite<'a, I>(values: I, op: &'static str) -> Result<(), NnError>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(op))
    }
}
