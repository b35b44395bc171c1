//! Group comparisons: one-way ANOVA, Kruskal–Wallis, Welch tests with
//! Bonferroni adjustment, a paired one-sided t-test and t intervals.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use super::EvalError;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (`n − 1` denominator).
pub fn sample_var(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (mean(x), sample_var(x).sqrt())
}

fn check_groups(groups: &[Vec<f64>]) -> Result<(), EvalError> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(EvalError::Stats("need at least two groups of at least two values".into()));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::Stats("values must be finite".into()));
    }
    Ok(())
}

/// One-way ANOVA `(F, p)`.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<(f64, f64), EvalError> {
    check_groups(groups)?;
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let ssb: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let (df1, df2) = (k - 1.0, n - k);
    let scale = groups.iter().flatten().map(|v| v.abs()).fold(1.0, f64::max);
    let tiny = 1e-24 * scale * scale * n;
    if ssw <= tiny {
        return Ok(if ssb <= tiny { (0.0, 1.0) } else { (f64::INFINITY, 0.0) });
    }
    let f = (ssb / df1) / (ssw / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    Ok((f, dist.sf(f)))
}

/// Average ranks (1-based) with ties sharing their mean rank, plus the tie
/// correction sum `Σ(t³ − t)`.
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (r, ties)
}

/// Kruskal–Wallis `(H, p)` with tie correction and a chi-squared p-value.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<(f64, f64), EvalError> {
    check_groups(groups)?;
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let (r, ties) = ranks(&all);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let rs: f64 = r[offset..offset + g.len()].iter().sum();
        sum += rs * rs / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let dist = ChiSquared::new(groups.len() as f64 - 1.0).expect("k >= 2");
    Ok((h, dist.sf(h)))
}

/// Two-sided Welch t-test `(t, df, p)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), EvalError> {
    check_groups(&[a.to_vec(), b.to_vec()])?;
    let (va, vb) = (sample_var(a) / a.len() as f64, sample_var(b) / b.len() as f64);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            (0.0, f64::NAN, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, f64::NAN, 0.0)
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2
        / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    Ok((t, df, 2.0 * dist.sf(t.abs())))
}

pub const POSTHOC_METHOD: &str = "Tukey-substitute (Welch t + Bonferroni)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosthocRow {
    pub a: String,
    pub b: String,
    pub mean_diff: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub method: &'static str,
}

/// Welch tests for the requested pairs, Bonferroni-adjusted over the pairs.
pub fn pairwise_posthoc(
    groups: &[(String, Vec<f64>)],
    pairs: &[(usize, usize)],
) -> Result<Vec<PosthocRow>, EvalError> {
    let n_pairs = pairs.len() as f64;
    pairs
        .iter()
        .map(|&(i, j)| {
            let (ga, gb) = match (groups.get(i), groups.get(j)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(EvalError::Stats(format!("pair ({i}, {j}) is out of range"))),
            };
            let (_, _, p) = welch_t(&ga.1, &gb.1)?;
            Ok(PosthocRow {
                a: ga.0.clone(),
                b: gb.0.clone(),
                mean_diff: mean(&ga.1) - mean(&gb.1),
                raw_p: p,
                adjusted_p: (p * n_pairs).min(1.0),
                method: POSTHOC_METHOD,
            })
        })
        .collect()
}

/// One-sided paired t-test of `mean(a − b) > 0`; returns `(t, p)`.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::Stats("paired test needs two equal samples of size >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = mean_std(&d);
    if s == 0.0 {
        return Ok(if m > 0.0 { (f64::INFINITY, 0.0) } else if m < 0.0 { (f64::NEG_INFINITY, 1.0) } else { (0.0, 0.5) });
    }
    let t = m / (s / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("df >= 1");
    Ok((t, dist.sf(t)))
}

/// Mean and 95% t-interval half-width; a single value has width 0.
pub fn t_interval95(x: &[f64]) -> (f64, f64) {
    let (m, s) = mean_std(x);
    if x.len() < 2 {
        return (m, 0.0);
    }
    let dist = StudentsT::new(0.0, 1.0, (x.len() - 1) as f64).expect("df >= 1");
    (m, dist.inverse_cdf(0.975) * s / (x.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        assert_eq!(anova_oneway(&g).unwrap(), (0.0, 1.0));
        let (h, p) = kruskal_wallis(&g).unwrap();
        assert_eq!(h, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let all_tied = vec![vec![2.0, 2.0], vec![2.0, 2.0, 2.0]];
        assert_eq!(kruskal_wallis(&all_tied).unwrap(), (0.0, 1.0));
        assert_eq!(anova_oneway(&all_tied).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn separated_groups() {
        let g = vec![vec![0.0, 1e-6, -1e-6], vec![1.0, 1.0 + 1e-6, 1.0 - 1e-6]];
        let (_, p) = anova_oneway(&g).unwrap();
        assert!(p < 1e-6);
        // ranks {1,2,3} vs {4,5,6}: H = 12/42·(36/3 + 225/3) − 21 = 27/7
        let (h, _) = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((h - 27.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn anova_hand_value() {
        // means 2 and 5, SSB = 13.5, SSW = 4, F = 13.5 / (4/4) = 13.5
        let (f, _) = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((f - 13.5).abs() < 1e-12);
    }

    #[test]
    fn bonferroni() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0, 4.0]),
            ("b".to_string(), vec![1.0, 2.0, 3.0, 4.0]),
            ("c".to_string(), vec![2.0, 3.5, 4.0, 6.0]),
        ];
        let rows = pairwise_posthoc(&groups, &[(0, 1), (0, 2)]).unwrap();
        assert_eq!(rows[0].adjusted_p, 1.0);
        assert_eq!(rows[1].adjusted_p, (rows[1].raw_p * 2.0).min(1.0));
        assert_eq!(rows[1].method, POSTHOC_METHOD);
    }

    #[test]
    fn t_interval_hand_value() {
        // n = 4, sd = 1.2909944, t(0.975, 3) = 3.1824463
        let (m, h) = t_interval95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((h - 3.182_446_305_284_263 * 1.290_994_448_735_805_6 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn paired_one_sided() {
        let a = [0.8, 0.82, 0.79, 0.81];
        let b = [0.7, 0.71, 0.72, 0.69];
        let (t, p) = paired_t_greater(&a, &b).unwrap();
        assert!(t > 0.0 && p < 0.01);
        let (_, p_rev) = paired_t_greater(&b, &a).unwrap();
        assert!((p + p_rev - 1.0).abs() < 1e-12);
    }
}
