//! Next-day labels and fixed-size training bundles.

use ndarray::{Array1, Array2, Array3, Axis};

use super::{CohortDataset, DataError};
use crate::gedd::gedd_partition;
use crate::models::{Bundle, NodeRef};

pub const LABEL_THRESHOLD_MIN: f64 = 480.0;

/// 1 when the night's sleep reaches eight hours.
pub fn make_label(minutes: f64) -> u8 {
    u8::from(minutes >= LABEL_THRESHOLD_MIN)
}

#[derive(Debug, Clone, Default)]
pub struct BundleSet {
    pub bundles: Vec<Bundle>,
    /// Days without a full `L`-day history or without any next-day label.
    pub skipped_days: usize,
}

/// Build bundles for every day `k` with days `k−L+1..=k` available and at
/// least one label on day `k+1`. Each day's graph is split by GEDD into
/// `eta`-node graphs; unlabelled and repeated nodes are masked out.
pub fn make_bundles(ds: &CohortDataset, seq_len: usize, eta: usize) -> Result<BundleSet, DataError> {
    ds.validate()?;
    if seq_len == 0 || eta == 0 {
        return Err(DataError::Shape("sequence length and eta must be positive".into()));
    }
    let (_, days, m) = ds.features.dim();
    let mut set = BundleSet::default();
    for k in 0..days {
        let has_history = k + 1 >= seq_len;
        let has_labels = k + 1 < days && ds.sleep_minutes.column(k + 1).iter().any(|v| !v.is_nan());
        if !(has_history && has_labels) {
            set.skipped_days += 1;
            continue;
        }
        let parts = gedd_partition(&ds.graphs[k], eta).expect("eta checked above");
        for eg in parts.graphs {
            let mut x_day = Array2::zeros((eta, m));
            let mut s_seq = Array3::zeros((seq_len, eta, m));
            let mut y = Array1::zeros(eta);
            let mut mask = Vec::with_capacity(eta);
            let mut nodes = Vec::with_capacity(eta);
            for (r, slot) in eg.slots.iter().enumerate() {
                let p = slot.src;
                x_day.row_mut(r).assign(&ds.features.slice(ndarray::s![p, k, ..]));
                for t in 0..seq_len {
                    let day = k + 1 + t - seq_len;
                    s_seq
                        .index_axis_mut(Axis(0), t)
                        .row_mut(r)
                        .assign(&ds.features.slice(ndarray::s![p, day, ..]));
                }
                let minutes = ds.sleep_minutes[[p, k + 1]];
                let known = !minutes.is_nan();
                y[r] = if known { f64::from(make_label(minutes)) } else { 0.0 };
                mask.push(known && !slot.duplicated);
                nodes.push(NodeRef {
                    cohort: ds.cohort_id.clone(),
                    participant: ds.participants[p].clone(),
                    duplicated: slot.duplicated,
                });
            }
            set.bundles.push(Bundle::new(
                ds.cohort_id.clone(),
                k,
                x_day,
                s_seq,
                eg.graph.adj,
                y,
                mask,
                nodes,
            ));
        }
    }
    Ok(set)
}

/// Bundles of several cohorts, built in parallel and concatenated in input
/// order.
pub fn make_bundles_all(
    cohorts: &[CohortDataset],
    seq_len: usize,
    eta: usize,
) -> Result<BundleSet, DataError> {
    use rayon::prelude::*;

    let sets: Result<Vec<BundleSet>, DataError> = cohorts
        .par_iter()
        .map(|ds| make_bundles(ds, seq_len, eta))
        .collect();
    let mut out = BundleSet::default();
    for s in sets? {
        out.bundles.extend(s.bundles);
        out.skipped_days += s.skipped_days;
    }
    Ok(out)
}
