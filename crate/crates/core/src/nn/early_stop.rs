/// Outcome of feeding one epoch's validation loss to an [`EarlyStopper`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    /// The loss beat the best so far by more than `min_delta`; snapshot the
    /// parameters.
    pub improved: bool,
    pub stop: bool,
}

/// Stops once `patience` consecutive epochs fail to improve on the best
/// validation loss by more than `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = self.best - val_loss > self.min_delta;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        StopDecision {
            improved,
            stop: self.wait >= self.patience,
        }
    }

    /// 1-based epoch of the best loss (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Replay a loss stream; returns the 1-based stop epoch (if the stopper fired)
/// and the best epoch.
pub fn replay(losses: &[f64], patience: usize, min_delta: f64) -> (Option<usize>, usize) {
    let mut es = EarlyStopper::new(patience, min_delta);
    for (k, &l) in losses.iter().enumerate() {
        if es.observe(l).stop {
            return (Some(k + 1), es.best_epoch());
        }
    }
    (None, es.best_epoch())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_improvement_never_stops() {
        let losses: Vec<f64> = (0..200).map(|k| 10.0 - 0.02 * k as f64).collect();
        assert_eq!(replay(&losses, 30, 0.01).0, None);
    }

    #[test]
    fn constant_loss_stops_after_patience() {
        assert_eq!(replay(&[0.7; 100], 30, 0.01), (Some(31), 1));
    }

    #[test]
    fn drop_then_flat() {
        let mut losses = vec![1.0];
        losses.extend([0.5; 100]);
        assert_eq!(replay(&losses, 30, 0.01), (Some(32), 2));
    }
}
