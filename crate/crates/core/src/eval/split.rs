//! Random and leave-one-cohort-out bundle splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::models::Bundle;
use crate::seed;

pub const RANDOM_FRACTIONS: [f64; 3] = [0.5, 0.1, 0.4];
pub const LOCO_VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Random,
    Loco,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Random => "random",
            SplitKind::Loco => "loco",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(SplitKind::Random),
            "loco" => Ok(SplitKind::Loco),
            _ => Err(format!("unknown split `{s}` (random|loco)")),
        }
    }
}

/// Indices into a bundle list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a>(bundles: &'a [Bundle], idx: &[usize]) -> Vec<&'a Bundle> {
        idx.iter().map(|&i| &bundles[i]).collect()
    }
}

/// Shuffle `0..n` and cut it into train/val/test parts whose sizes are the
/// rounded fractions (the test part takes the remainder).
pub fn split_random(n: usize, fractions: [f64; 3], seed_value: u64) -> Result<Split, EvalError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(EvalError::Split(format!("fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    if n < 3 {
        return Err(EvalError::Split(format!("{n} bundles are too few to split three ways")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed_value, "split"));
    let n_train = ((n as f64 * fractions[0]).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * fractions[1]).round() as usize).clamp(1, n - n_train - 1);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

/// Cohort ids in first-appearance order.
pub fn cohorts(bundles: &[Bundle]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for b in bundles {
        if !out.contains(&b.cohort) {
            out.push(b.cohort.clone());
        }
    }
    out
}

/// Hold out every bundle of `held`; a shuffled tenth of the rest validates.
pub fn split_loco(bundles: &[Bundle], held: &str, seed_value: u64) -> Result<Split, EvalError> {
    let ids = cohorts(bundles);
    if ids.len() < 2 {
        return Err(EvalError::Split("leave-one-cohort-out needs at least two cohorts".into()));
    }
    if !ids.iter().any(|c| c == held) {
        return Err(EvalError::UnknownCohort(held.to_string()));
    }
    let test: Vec<usize> = (0..bundles.len()).filter(|&i| bundles[i].cohort == held).collect();
    let mut rest: Vec<usize> = (0..bundles.len()).filter(|&i| bundles[i].cohort != held).collect();
    rest.shuffle(&mut seed::stream(seed_value, "split"));
    let n_val = ((rest.len() as f64 * LOCO_VAL_FRACTION).round() as usize).min(rest.len().saturating_sub(1));
    let mut val = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_sizes_and_partition() {
        let s = split_random(100, RANDOM_FRACTIONS, 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (50, 10, 40));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_random(100, RANDOM_FRACTIONS, 4).unwrap());
        assert_ne!(s, split_random(100, RANDOM_FRACTIONS, 5).unwrap());
    }

    #[test]
    fn random_sizes_within_one_of_exact() {
        for n in 3..200 {
            let s = split_random(n, RANDOM_FRACTIONS, 1).unwrap();
            for (len, f) in [s.train.len(), s.val.len(), s.test.len()].into_iter().zip(RANDOM_FRACTIONS) {
                assert!((len as f64 - f * n as f64).abs() <= 1.0 + 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn errors() {
        assert!(split_random(2, RANDOM_FRACTIONS, 0).is_err());
        assert!(split_random(10, [0.5, 0.5, 0.5], 0).is_err());
    }
}
