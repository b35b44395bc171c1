//! Feature-replacement perturbations and the repeated trial grid.
//!
//! Perturbed cells are redrawn from per-feature Gaussians fitted on clean
//! training rows, with the variance inflated threefold.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commgraph::{Category, Metric};
use crate::eval::{
    bundle_categories, category_key, prepare_trial, score_bundle, train_and_score, EvalError, SplitKind,
    StratifiedTally,
};
use crate::models::{Ablation, Bundle, ModelConfig, ModelKind, SleepModel};
use crate::nn::TrainConfig;
use crate::seed;

pub const VARIANCE_INFLATION: f64 = 3.0;
pub const SD_FLOOR: f64 = 1e-6;
pub const DEFAULT_TRAIN_REPEATS: usize = 10;
pub const DEFAULT_PERTURB_REPEATS: usize = 50;
pub const DEFAULT_FEATURE_PERCENTS: [usize; 4] = [0, 25, 50, 75];

#[derive(Debug, thiserror::Error)]
pub enum RobustnessError {
    #[error("cannot fit feature distributions on zero rows")]
    NoRows,
    #[error("perturbation plan does not fit the bundle: {0}")]
    Plan(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-feature sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGaussian {
    pub mean: Vec<f64>,
    /// Standard deviation after variance inflation.
    pub sd: Vec<f64>,
    /// Features whose variance was zero and use [`SD_FLOOR`].
    pub floored: Vec<bool>,
}

/// Maximum-likelihood mean and variance per column, variance times three.
pub fn fit_feature_gaussians(rows: ArrayView2<f64>) -> Result<FeatureGaussian, RobustnessError> {
    let v = rows.nrows();
    if v == 0 {
        return Err(RobustnessError::NoRows);
    }
    let mut g = FeatureGaussian {
        mean: Vec::new(),
        sd: Vec::new(),
        floored: Vec::new(),
    };
    for col in rows.axis_iter(Axis(1)) {
        let mu = col.sum() / v as f64;
        let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v as f64;
        let sd = (VARIANCE_INFLATION * var).sqrt();
        g.mean.push(mu);
        g.floored.push(sd < SD_FLOOR);
        g.sd.push(sd.max(SD_FLOOR));
    }
    Ok(g)
}

/// Fit on the day rows of the original nodes of training bundles.
pub fn fit_bundle_gaussians(bundles: &[Bundle]) -> Result<FeatureGaussian, RobustnessError> {
    let m = bundles.first().map_or(0, |b| b.features());
    let rows: Vec<f64> = bundles
        .iter()
        .flat_map(|b| {
            (0..b.eta())
                .filter(|&r| !b.nodes[r].duplicated)
                .flat_map(move |r| b.x_day.row(r).to_vec())
        })
        .collect();
    let n = if m == 0 { 0 } else { rows.len() / m };
    let mat = ndarray::Array2::from_shape_vec((n, m), rows).expect("whole rows");
    fit_feature_gaussians(mat.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Day-`k` features of every node.
    FeaturesAllUsers,
    /// Day-`k` features of a few nodes.
    FeaturesUserSubset,
    /// Features on a few sequence days, every node.
    TemporalSubset,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::FeaturesAllUsers,
        Scenario::FeaturesUserSubset,
        Scenario::TemporalSubset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FeaturesAllUsers => "features_all_users",
            Scenario::FeaturesUserSubset => "features_user_subset",
            Scenario::TemporalSubset => "temporal_subset",
        }
    }

    pub fn number(self) -> usize {
        match self {
            Scenario::FeaturesAllUsers => 1,
            Scenario::FeaturesUserSubset => 2,
            Scenario::TemporalSubset => 3,
        }
    }

    pub fn from_number(n: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub scenario: Scenario,
    /// Number of feature columns redrawn.
    pub features: usize,
    /// Number of nodes redrawn (user-subset scenario).
    pub users: usize,
    /// Number of sequence days redrawn (temporal scenario).
    pub days: usize,
}

impl PerturbationPlan {
    pub fn check(&self, b: &Bundle) -> Result<(), RobustnessError> {
        let err = |m: String| Err(RobustnessError::Plan(m));
        if self.features >= b.features() && self.features > 0 {
            return err(format!("{} of {} features", self.features, b.features()));
        }
        match self.scenario {
            Scenario::FeaturesUserSubset if self.users >= b.eta() => {
                err(format!("{} of {} users", self.users, b.eta()))
            }
            Scenario::TemporalSubset if self.days >= b.seq_len() => {
                err(format!("{} of {} sequence days", self.days, b.seq_len()))
            }
            _ => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        self.features == 0
            || (self.scenario == Scenario::FeaturesUserSubset && self.users == 0)
            || (self.scenario == Scenario::TemporalSubset && self.days == 0)
    }
}

/// Redraw the planned cells; every other cell is copied unchanged.
pub fn perturb(
    b: &Bundle,
    plan: &PerturbationPlan,
    g: &FeatureGaussian,
    rng: &mut seed::Rng,
) -> Result<Bundle, RobustnessError> {
    plan.check(b)?;
    if g.mean.len() != b.features() {
        return Err(RobustnessError::Plan(format!(
            "distribution over {} features, bundle has {}",
            g.mean.len(),
            b.features()
        )));
    }
    let mut out = b.clone();
    if plan.is_identity() {
        return Ok(out);
    }
    let cols = sample(rng, b.features(), plan.features).into_vec();
    let draw = |rng: &mut seed::Rng, c: usize| g.mean[c] + g.sd[c] * rng.sample::<f64, _>(StandardNormal);
    match plan.scenario {
        Scenario::FeaturesAllUsers => {
            for r in 0..b.eta() {
                for &c in &cols {
                    out.x_day[[r, c]] = draw(rng, c);
                }
            }
        }
        Scenario::FeaturesUserSubset => {
            for r in sample(rng, b.eta(), plan.users).into_vec() {
                for &c in &cols {
                    out.x_day[[r, c]] = draw(rng, c);
                }
            }
        }
        Scenario::TemporalSubset => {
            for t in sample(rng, b.seq_len(), plan.days).into_vec() {
                for r in 0..b.eta() {
                    for &c in &cols {
                        out.s_seq[[t, r, c]] = draw(rng, c);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub scenario: Scenario,
    /// x values: percent of features (scenario 1), users (2) or days (3).
    pub grid: Vec<usize>,
    /// Percent of features redrawn in scenarios 2 and 3.
    pub feature_percent: usize,
    pub train_repeats: usize,
    pub perturb_repeats: usize,
    pub base_seed: u64,
}

impl RobustnessConfig {
    pub fn new(scenario: Scenario, base_seed: u64) -> Self {
        Self {
            scenario,
            grid: DEFAULT_FEATURE_PERCENTS.to_vec(),
            feature_percent: 50,
            train_repeats: DEFAULT_TRAIN_REPEATS,
            perturb_repeats: DEFAULT_PERTURB_REPEATS,
            base_seed,
        }
    }

    /// Plan for grid value `x` on bundles with `m` features.
    pub fn plan(&self, x: usize, m: usize) -> PerturbationPlan {
        let pct = |p: usize| (p as f64 / 100.0 * m as f64).round() as usize;
        match self.scenario {
            Scenario::FeaturesAllUsers => PerturbationPlan {
                scenario: self.scenario,
                features: pct(x),
                users: 0,
                days: 0,
            },
            Scenario::FeaturesUserSubset => PerturbationPlan {
                scenario: self.scenario,
                features: pct(self.feature_percent),
                users: x,
                days: 0,
            },
            Scenario::TemporalSubset => PerturbationPlan {
                scenario: self.scenario,
                features: pct(self.feature_percent),
                users: 0,
                days: x,
            },
        }
    }
}

/// Tallies of one (model, x, train repeat, perturbation repeat).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialTally {
    pub model: ModelKind,
    pub x: usize,
    pub train_repeat: usize,
    pub perturb_repeat: usize,
    pub tally: StratifiedTally,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCell {
    pub mean_acc: f64,
    pub ci: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCell {
    pub model: ModelKind,
    pub scenario: Scenario,
    pub x: usize,
    pub mean_acc: f64,
    /// Half-width of the 95% t-interval over all trials.
    pub ci: f64,
    pub trials: usize,
    /// Mean clean accuracy over the training repeats.
    pub clean_acc: f64,
    pub categories: BTreeMap<String, CategoryCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessOutput {
    pub cells: Vec<RobustnessCell>,
    #[serde(skip)]
    pub trials: Vec<TrialTally>,
}

impl RobustnessOutput {
    pub fn cell(&self, model: ModelKind, x: usize) -> Option<&RobustnessCell> {
        self.cells.iter().find(|c| c.model == model && c.x == x)
    }

    /// `model,scenario,x,mean_acc,ci,clean_acc,<category>...` rows.
    pub fn to_csv(&self) -> String {
        let cats: Vec<String> = [Metric::Degree, Metric::Eigen]
            .into_iter()
            .flat_map(|m| Category::ALL.into_iter().map(move |c| category_key(m, c)))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["model", "scenario", "x", "mean_acc", "ci", "clean_acc"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(cats.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for c in &self.cells {
            let mut rec = vec![
                c.model.name().to_string(),
                c.scenario.name().to_string(),
                c.x.to_string(),
                c.mean_acc.to_string(),
                c.ci.to_string(),
                c.clean_acc.to_string(),
            ];
            rec.extend(cats.iter().map(|k| {
                c.categories.get(k).map_or(String::new(), |cc| cc.mean_acc.to_string())
            }));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn score_all(model: &SleepModel, bundles: &[Bundle], cats: &[Vec<[(Metric, Category); 2]>]) -> Result<StratifiedTally, EvalError> {
    let probs = model.predict_proba(bundles)?;
    let mut t = StratifiedTally::default();
    for ((b, p), c) in bundles.iter().zip(&probs).zip(cats) {
        t.merge(&score_bundle(b, p, c));
    }
    Ok(t)
}

/// Outer loop: `train_repeats` fresh random splits, each variant trained on
/// clean data. Inner loop: `perturb_repeats` fresh perturbations of the test
/// bundles per grid value. Seeds follow `base ⊕ repeat`, so reruns are
/// bitwise identical regardless of thread count.
pub fn run_robustness(
    bundles: &[Bundle],
    kinds: &[ModelKind],
    cfg: &RobustnessConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<RobustnessOutput, RobustnessError> {
    if cfg.train_repeats == 0 || cfg.perturb_repeats == 0 {
        return Err(RobustnessError::Plan("repeat counts must be positive".into()));
    }
    let m = model_cfg.features;
    if let Some(b) = bundles.first() {
        for &x in &cfg.grid {
            cfg.plan(x, m).check(b)?;
        }
    }
    let per_repeat: Result<Vec<(Vec<(ModelKind, f64)>, Vec<TrialTally>)>, RobustnessError> = (0..cfg.train_repeats)
        .into_par_iter()
        .map(|t| {
            let prepared = prepare_trial(bundles, SplitKind::Random, t, cfg.base_seed)?;
            let gauss = fit_bundle_gaussians(&prepared.train)?;
            let cats: Vec<_> = prepared.test.iter().map(bundle_categories).collect();
            let mut clean = Vec::new();
            let mut tallies = Vec::new();
            for &kind in kinds {
                let (model, _, clean_tally) = train_and_score(kind, Ablation::None, &prepared, model_cfg, train_cfg)?;
                clean.push((kind, clean_tally.overall.accuracy().ok_or(EvalError::NothingScored)?));
                for &x in &cfg.grid {
                    let plan = cfg.plan(x, m);
                    for p in 0..cfg.perturb_repeats {
                        let tally = if plan.is_identity() {
                            clean_tally.clone()
                        } else {
                            let stream = format!("perturb/{}/{x}/{p}", cfg.scenario.name());
                            let mut rng = seed::stream(prepared.seed, &stream);
                            let test: Vec<Bundle> = prepared
                                .test
                                .iter()
                                .map(|b| perturb(b, &plan, &gauss, &mut rng))
                                .collect::<Result<_, _>>()?;
                            score_all(&model, &test, &cats)?
                        };
                        tallies.push(TrialTally {
                            model: kind,
                            x,
                            train_repeat: t,
                            perturb_repeat: p,
                            tally,
                        });
                    }
                }
            }
            Ok((clean, tallies))
        })
        .collect();
    let (clean, trials): (Vec<_>, Vec<_>) = per_repeat?.into_iter().unzip();
    let clean: Vec<(ModelKind, f64)> = clean.into_iter().flatten().collect();
    let trials: Vec<TrialTally> = trials.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &kind in kinds {
        let clean_vals: Vec<f64> = clean.iter().filter(|c| c.0 == kind).map(|c| c.1).collect();
        let clean_acc = clean_vals.iter().sum::<f64>() / clean_vals.len() as f64;
        for &x in &cfg.grid {
            let sel: Vec<&TrialTally> = trials.iter().filter(|t| t.model == kind && t.x == x).collect();
            let acc: Vec<f64> = sel.iter().filter_map(|t| t.tally.overall.accuracy()).collect();
            let (mean_acc, ci) = crate::eval::stats::t_interval95(&acc);
            let mut categories = BTreeMap::new();
            if let Some(first) = sel.first() {
                for key in first.tally.categories.keys() {
                    let vals: Vec<f64> = sel.iter().filter_map(|t| t.tally.categories[key].accuracy()).collect();
                    if !vals.is_empty() {
                        let (mean_acc, ci) = crate::eval::stats::t_interval95(&vals);
                        categories.insert(
                            key.clone(),
                            CategoryCell {
                                mean_acc,
                                ci,
                                trials: vals.len(),
                            },
                        );
                    }
                }
            }
            cells.push(RobustnessCell {
                model: kind,
                scenario: cfg.scenario,
                x,
                mean_acc,
                ci,
                trials: acc.len(),
                clean_acc,
                categories,
            });
        }
    }
    Ok(RobustnessOutput { cells, trials })
}
