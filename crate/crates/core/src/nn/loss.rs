use ndarray::Array1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean binary cross-entropy on sigmoid outputs.
    Bce,
    /// Mean squared error between probabilities and labels.
    L2,
}

/// Mean binary cross-entropy of probabilities `p` against labels `y`, over
/// entries where `mask` is true. Returns `(loss, dloss/dlogit)`; the gradient
/// is with respect to the pre-sigmoid logits, i.e. `(p - y) / count`.
pub fn bce_loss(p: &Array1<f64>, y: &Array1<f64>, mask: &[bool]) -> (f64, Array1<f64>) {
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(p.len());
    for k in 0..p.len() {
        if !mask[k] {
            continue;
        }
        let pk = p[k].clamp(CLAMP, 1.0 - CLAMP);
        loss -= y[k] * pk.ln() + (1.0 - y[k]) * (1.0 - pk).ln();
        grad[k] = (p[k] - y[k]) / count;
    }
    (loss / count, grad)
}

/// Mean squared error on probabilities. Gradient is with respect to logits.
pub fn l2_prob_loss(p: &Array1<f64>, y: &Array1<f64>, mask: &[bool]) -> (f64, Array1<f64>) {
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(p.len());
    for k in 0..p.len() {
        if !mask[k] {
            continue;
        }
        let d = p[k] - y[k];
        loss += d * d;
        grad[k] = 2.0 * d * p[k] * (1.0 - p[k]) / count;
    }
    (loss / count, grad)
}

impl LossKind {
    pub fn eval(self, p: &Array1<f64>, y: &Array1<f64>, mask: &[bool]) -> (f64, Array1<f64>) {
        match self {
            LossKind::Bce => bce_loss(p, y, mask),
            LossKind::L2 => l2_prob_loss(p, y, mask),
        }
    }
}
