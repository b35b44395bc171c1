//! Masked accuracy, overall and per centrality category.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::Serialize;

use super::EvalError;
use crate::commgraph::{Category, CentralityProfile, Metric, WeightedGraph};
use crate::models::{threshold_label, Bundle};

pub const THRESHOLD: f64 = 0.5;

/// Correct over scored predictions.
pub fn accuracy(preds: &[u8], labels: &[u8], mask: &[bool]) -> Result<f64, EvalError> {
    if preds.len() != labels.len() || preds.len() != mask.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions, {} labels, {} mask entries",
            preds.len(),
            labels.len(),
            mask.len()
        )));
    }
    let scored = mask.iter().filter(|m| **m).count();
    if scored == 0 {
        return Err(EvalError::NothingScored);
    }
    let correct = (0..preds.len()).filter(|&i| mask[i] && preds[i] == labels[i]).count();
    Ok(correct as f64 / scored as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub scored: usize,
}

impl Tally {
    pub fn add(&mut self, correct: bool) {
        self.scored += 1;
        self.correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: Tally) {
        self.correct += other.correct;
        self.scored += other.scored;
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.scored > 0).then(|| self.correct as f64 / self.scored as f64)
    }
}

/// Overall tally plus tallies keyed `degree/<category>` and
/// `eigen/<category>`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StratifiedTally {
    pub overall: Tally,
    pub categories: BTreeMap<String, Tally>,
}

impl StratifiedTally {
    pub fn merge(&mut self, other: &StratifiedTally) {
        self.overall.merge(other.overall);
        for (k, t) in &other.categories {
            self.categories.entry(k.clone()).or_default().merge(*t);
        }
    }
}

pub fn category_key(metric: Metric, cat: Category) -> String {
    let m = match metric {
        Metric::Degree => "degree",
        Metric::Eigen => "eigen",
    };
    format!("{m}/{}", cat.name())
}

/// Centrality categories of every bundle row, computed on the bundle's own
/// adjacency.
pub fn bundle_categories(b: &Bundle) -> Vec<[(Metric, Category); 2]> {
    let ids = (0..b.eta()).map(|i| i.to_string()).collect();
    let g = WeightedGraph::from_adjacency(ids, b.adj.clone());
    let profile = CentralityProfile::compute(&g).expect("power iteration on a bundle graph");
    (0..b.eta())
        .map(|i| {
            [
                (Metric::Degree, profile.category(Metric::Degree, i)),
                (Metric::Eigen, profile.category(Metric::Eigen, i)),
            ]
        })
        .collect()
}

/// Score one bundle's probabilities against its labels and mask.
pub fn score_bundle(b: &Bundle, probs: &Array1<f64>, categories: &[[(Metric, Category); 2]]) -> StratifiedTally {
    let mut t = StratifiedTally::default();
    for metric in [Metric::Degree, Metric::Eigen] {
        for cat in Category::ALL {
            t.categories.insert(category_key(metric, cat), Tally::default());
        }
    }
    for r in 0..b.eta() {
        if !b.mask[r] {
            continue;
        }
        let ok = threshold_label(probs[r], THRESHOLD) == b.y_next[r] as u8;
        t.overall.add(ok);
        for (metric, cat) in categories[r] {
            t.categories.get_mut(&category_key(metric, cat)).expect("all keys inserted").add(ok);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0], &[true; 4]).unwrap(), 0.5);
        assert_eq!(accuracy(&[1, 0], &[1, 0], &[true; 2]).unwrap(), 1.0);
        // masking one row shrinks the denominator
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0], &[true, true, true, false]).unwrap(), 2.0 / 3.0);
        assert!(matches!(accuracy(&[1], &[1], &[false]), Err(EvalError::NothingScored)));
    }

    #[test]
    fn categories_recombine() {
        let b = crate::models::testutil::random_bundle(8, 3, 2, 5);
        let probs = Array1::from_shape_fn(8, |i| i as f64 / 8.0);
        let t = score_bundle(&b, &probs, &bundle_categories(&b));
        for metric in ["degree", "eigen"] {
            let sum = t
                .categories
                .iter()
                .filter(|(k, _)| k.starts_with(metric))
                .fold(Tally::default(), |mut acc, (_, v)| {
                    acc.merge(*v);
                    acc
                });
            assert_eq!(sum, t.overall);
        }
    }
}
