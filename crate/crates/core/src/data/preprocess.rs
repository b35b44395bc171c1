//! Sparse-column removal, two-pass kNN imputation, z-score outlier removal
//! and train-only standardization.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{CohortDataset, DataError};
use crate::models::Bundle;

/// Columns missing in more than this fraction of rows are dropped.
pub const SPARSE_FRACTION: f64 = 0.5;
pub const KNN_K: usize = 5;
pub const OUTLIER_CUTOFF: f64 = 4.0;

/// Indices of columns whose missing fraction exceeds [`SPARSE_FRACTION`].
pub fn sparse_columns(ds: &CohortDataset) -> Vec<usize> {
    let rows = ds.rows();
    let n = rows.nrows().max(1) as f64;
    rows.axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().filter(|v| v.is_nan()).count() as f64 / n > SPARSE_FRACTION)
        .map(|(j, _)| j)
        .collect()
}

pub fn drop_columns(ds: &CohortDataset, drop: &[usize]) -> Result<CohortDataset, DataError> {
    let keep: Vec<usize> = (0..ds.n_features()).filter(|j| !drop.contains(j)).collect();
    if keep.is_empty() {
        return Err(DataError::AllFeaturesDropped);
    }
    let mut out = ds.clone();
    out.features = ds.features.select(Axis(2), &keep);
    out.feature_names = keep.iter().map(|&j| ds.feature_names[j].clone()).collect();
    out.modalities = keep.iter().map(|&j| ds.modalities[j]).collect();
    Ok(out)
}

/// Remove columns that are missing in more than half of the cohort's rows.
pub fn drop_sparse_features(ds: &CohortDataset) -> Result<(CohortDataset, Vec<String>), DataError> {
    let drop = sparse_columns(ds);
    let names = drop.iter().map(|&j| ds.feature_names[j].clone()).collect();
    Ok((drop_columns(ds, &drop)?, names))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputeReport {
    pub within_participant: usize,
    pub across_participants: usize,
    /// `(row, column)` cells that fell back to the column mean.
    pub mean_filled: Vec<(usize, usize)>,
}

/// Euclidean distance over co-observed dimensions, scaled up by
/// `m / observed` so rows with few shared dimensions are not favoured.
fn nan_euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> Option<f64> {
    let (mut sum, mut present) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            sum += (x - y) * (x - y);
            present += 1;
        }
    }
    (present > 0).then(|| (sum * a.len() as f64 / present as f64).sqrt())
}

/// Fill missing cells of `target` rows from their `k` nearest donor rows.
/// Donor values always come from `orig`. Returns the number of cells filled.
fn impute_from(
    x: &mut Array2<f64>,
    orig: &Array2<f64>,
    targets: &[usize],
    donors: &[usize],
    k: usize,
) -> usize {
    let mut filled = 0;
    for &r in targets {
        let missing: Vec<usize> = (0..x.ncols()).filter(|&c| x[[r, c]].is_nan()).collect();
        if missing.is_empty() {
            continue;
        }
        let mut near: Vec<(f64, usize)> = donors
            .iter()
            .filter(|&&d| d != r)
            .filter_map(|&d| nan_euclidean(orig.row(r), orig.row(d)).map(|dist| (dist, d)))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for c in missing {
            let vals: Vec<f64> = near
                .iter()
                .map(|&(_, d)| orig[[d, c]])
                .filter(|v| v.is_finite())
                .take(k)
                .collect();
            if !vals.is_empty() {
                x[[r, c]] = vals.iter().sum::<f64>() / vals.len() as f64;
                filled += 1;
            }
        }
    }
    filled
}

/// Two-pass kNN imputation on a row matrix. `groups[r]` is the participant
/// of row `r`: pass 1 draws donors from the same participant, pass 2 from
/// every row. Cells left after both passes take the column mean.
pub fn impute_matrix(x: &mut Array2<f64>, groups: &[usize], k: usize) -> ImputeReport {
    assert_eq!(groups.len(), x.nrows(), "one group per row");
    let orig = x.clone();
    let mut report = ImputeReport::default();
    let incomplete: Vec<usize> =
        (0..x.nrows()).filter(|&r| x.row(r).iter().any(|v| v.is_nan())).collect();
    if incomplete.is_empty() {
        return report;
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut members = vec![Vec::new(); n_groups];
    for (r, &g) in groups.iter().enumerate() {
        members[g].push(r);
    }
    let mut pending = vec![false; x.nrows()];
    for &r in &incomplete {
        pending[r] = true;
    }
    for rows in &members {
        let targets: Vec<usize> = rows.iter().copied().filter(|&r| pending[r]).collect();
        report.within_participant += impute_from(x, &orig, &targets, rows, k);
    }
    let left: Vec<usize> =
        incomplete.iter().copied().filter(|&r| x.row(r).iter().any(|v| v.is_nan())).collect();
    let all: Vec<usize> = (0..x.nrows()).collect();
    report.across_participants = impute_from(x, &orig, &left, &all, k);

    let means: Vec<f64> = orig
        .axis_iter(Axis(1))
        .map(|col| {
            let obs: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
            if obs.is_empty() {
                0.0
            } else {
                obs.iter().sum::<f64>() / obs.len() as f64
            }
        })
        .collect();
    for &r in &incomplete {
        for c in 0..x.ncols() {
            if x[[r, c]].is_nan() {
                x[[r, c]] = means[c];
                report.mean_filled.push((r, c));
            }
        }
    }
    report
}

pub fn knn_impute(ds: &CohortDataset, k: usize) -> (CohortDataset, ImputeReport) {
    let mut rows = ds.rows();
    let report = impute_matrix(&mut rows, &ds.row_groups(), k);
    let mut out = ds.clone();
    out.set_rows(rows);
    (out, report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub flagged: usize,
    /// Column means and population standard deviations used for flagging.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub reimpute: ImputeReport,
}

fn column_stats(rows: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = rows.nrows() as f64;
    let mean: Vec<f64> = rows.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
    let std = rows
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(c, &mu)| (c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

/// Set cells more than `cutoff` standard deviations from their column mean
/// to missing and re-impute them once. Constant columns are skipped.
pub fn remove_outliers(ds: &CohortDataset, cutoff: f64, k: usize) -> (CohortDataset, OutlierReport) {
    let mut rows = ds.rows();
    let (mean, std) = column_stats(rows.view());
    let mut flagged = 0;
    for mut row in rows.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            if std[c] > 0.0 && ((*v - mean[c]) / std[c]).abs() > cutoff {
                *v = f64::NAN;
                flagged += 1;
            }
        }
    }
    let reimpute = if flagged > 0 {
        impute_matrix(&mut rows, &ds.row_groups(), k)
    } else {
        ImputeReport::default()
    };
    let mut out = ds.clone();
    out.set_rows(rows);
    (
        out,
        OutlierReport {
            flagged,
            mean,
            std,
            reimpute,
        },
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped: Vec<String>,
    pub impute: ImputeReport,
    pub outliers: OutlierReport,
}

/// Drop sparse columns, impute, then remove outliers.
pub fn preprocess(ds: &CohortDataset) -> Result<(CohortDataset, PreprocessReport), DataError> {
    let (ds, dropped) = drop_sparse_features(ds)?;
    let (ds, impute) = knn_impute(&ds, KNN_K);
    let (ds, outliers) = remove_outliers(&ds, OUTLIER_CUTOFF, KNN_K);
    Ok((
        ds,
        PreprocessReport {
            dropped,
            impute,
            outliers,
        },
    ))
}

/// Preprocess several cohorts so they keep the same feature columns: a
/// column sparse in any cohort is dropped from all of them.
pub fn preprocess_cohorts(
    cohorts: &[CohortDataset],
) -> Result<(Vec<CohortDataset>, Vec<PreprocessReport>), DataError> {
    use rayon::prelude::*;

    let mut drop: Vec<usize> = cohorts.iter().flat_map(sparse_columns).collect();
    drop.sort_unstable();
    drop.dedup();
    let out: Result<Vec<_>, DataError> = cohorts
        .par_iter()
        .map(|ds| {
            let names = drop.iter().map(|&j| ds.feature_names[j].clone()).collect();
            let ds = drop_columns(ds, &drop)?;
            let (ds, impute) = knn_impute(&ds, KNN_K);
            let (ds, outliers) = remove_outliers(&ds, OUTLIER_CUTOFF, KNN_K);
            Ok((
                ds,
                PreprocessReport {
                    dropped: names,
                    impute,
                    outliers,
                },
            ))
        })
        .collect();
    Ok(out?.into_iter().unzip())
}

/// Per-column mean and population standard deviation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: ArrayView2<f64>) -> Self {
        let (mean, std) = column_stats(rows);
        Self { mean, std }
    }

    /// Fit on the day-`k` rows of the scored-or-labelled original nodes of
    /// training bundles; repetition copies are skipped.
    pub fn fit_bundles(bundles: &[Bundle]) -> Self {
        let rows: Vec<_> = bundles
            .iter()
            .flat_map(|b| {
                b.nodes
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| !n.duplicated)
                    .map(|(i, _)| b.x_day.row(i))
            })
            .collect();
        let m = bundles.first().map_or(0, |b| b.features());
        let mut mat = Array2::zeros((rows.len(), m));
        for (r, row) in rows.iter().enumerate() {
            mat.row_mut(r).assign(row);
        }
        Self::fit(mat.view())
    }

    fn scale(&self, c: usize, v: f64) -> f64 {
        let centered = v - self.mean[c];
        if self.std[c] > 0.0 {
            centered / self.std[c]
        } else {
            centered
        }
    }

    pub fn apply(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.scale(c, *v);
            }
        }
        out
    }

    /// Standardize the day features and every sequence step of a bundle.
    pub fn apply_bundle(&self, b: &Bundle) -> Bundle {
        let mut out = b.clone();
        out.x_day = self.apply(b.x_day.view());
        for mut lane in out.s_seq.lanes_mut(Axis(2)) {
            for (c, v) in lane.iter_mut().enumerate() {
                *v = self.scale(c, *v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nearest_row_fills_cell() {
        let mut x = array![[1.0, 2.0], [1.0, f64::NAN], [3.0, 4.0]];
        let r = impute_matrix(&mut x, &[0, 0, 0], 1);
        assert_eq!(x[[1, 1]], 2.0);
        assert_eq!(r.within_participant, 1);
    }

    #[test]
    fn cross_participant_pass() {
        // participant 0 never observes column 1
        let mut x = array![[1.0, f64::NAN], [2.0, f64::NAN], [1.1, 7.0], [9.0, 3.0]];
        let r = impute_matrix(&mut x, &[0, 0, 1, 1], 1);
        assert_eq!(x[[0, 1]], 7.0);
        assert_eq!(x[[1, 1]], 7.0);
        assert_eq!(r.across_participants, 2);
        assert!(r.mean_filled.is_empty());
    }

    #[test]
    fn fully_missing_row_takes_column_mean() {
        let mut x = array![[1.0, 2.0], [f64::NAN, f64::NAN], [3.0, 6.0]];
        let r = impute_matrix(&mut x, &[0, 1, 2], 2);
        assert_eq!(x.row(1).to_vec(), vec![2.0, 4.0]);
        assert_eq!(r.mean_filled, vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn complete_matrix_is_identity() {
        let mut x = array![[1.0, 2.0], [3.0, 4.0]];
        let before = x.clone();
        assert_eq!(impute_matrix(&mut x, &[0, 1], 5), ImputeReport::default());
        assert_eq!(x, before);
    }

    #[test]
    fn standardizer_hand_values() {
        let s = Standardizer::fit(array![[2.0, 5.0], [4.0, 5.0]].view());
        assert_eq!(s.mean, vec![3.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 0.0]);
        let y = s.apply(array![[2.0, 5.0], [4.0, 5.0]].view());
        assert_eq!(y, array![[-1.0, 0.0], [1.0, 0.0]]);
        // a test row is scaled with the training statistics
        assert_eq!(s.apply(array![[10.0, 6.0]].view()), array![[7.0, 1.0]]);
    }

    #[test]
    fn standardized_self_has_unit_moments() {
        use rand::Rng;
        let mut rng = crate::seed::stream(3, "std");
        let x = Array2::from_shape_simple_fn((200, 4), || rng.gen_range(-5.0..20.0));
        let y = Standardizer::fit(x.view()).apply(x.view());
        let s = Standardizer::fit(y.view());
        for c in 0..4 {
            assert!(s.mean[c].abs() <= 1e-9);
            assert!((s.std[c] - 1.0).abs() <= 1e-9);
        }
    }
}
