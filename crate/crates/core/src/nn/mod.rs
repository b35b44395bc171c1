//! Hand-differentiated building blocks: every layer exposes a `forward`
//! returning its output plus a cache, and a `backward` that accumulates
//! parameter gradients and returns the input gradient.

mod activation;
mod adam;
mod conv;
mod dense;
mod dropout;
pub mod early_stop;
pub mod gradcheck;
mod gat;
mod gcn;
mod loss;
mod lstm;
mod norm;
mod param;
mod tensor;

pub use activation::Activation;
pub use adam::Adam;
pub use conv::{ConvCache, ConvParticipants};
pub use dense::{Dense, DenseCache};
pub use dropout::{dropout, DropoutMode};
pub use early_stop::{EarlyStopper, StopDecision};
pub use gat::{GatCache, GatLayer, LEAKY_SLOPE};
pub use gcn::{normalize_adjacency, GcnCache, GcnLayer};
pub use loss::{bce_loss, l2_prob_loss, sigmoid, LossKind};
pub use lstm::{Lstm, LstmCache};
pub use norm::{l2_normalize_rows, l2_normalize_rows_backward};
pub use param::{glorot, Param, ParamSet};
pub use tensor::{check_finite, NnError, Tensor};

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            patience: 30,
            min_delta: 0.01,
            max_epochs: 200,
            batch_size: 32,
            seed: 0,
            dropout_rate: 0.2,
            loss: LossKind::Bce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.lr > 0.0) {
            return Err(NnError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.patience < 1 {
            return Err(NnError::Config("patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(NnError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::Config(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
