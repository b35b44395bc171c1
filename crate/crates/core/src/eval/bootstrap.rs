//! Repeated train/test trials, parameter sweeps and the temporal ablation.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::metrics::{bundle_categories, score_bundle, StratifiedTally};
use super::split::{cohorts, split_loco, split_random, Split, SplitKind, RANDOM_FRACTIONS};
use super::stats::{mean_std, pairwise_posthoc, PosthocRow};
use super::EvalError;
use crate::data::{make_bundles_all, CohortDataset, Standardizer};
use crate::models::{Ablation, Bundle, History, ModelConfig, ModelKind, SleepModel};
use crate::nn::TrainConfig;
use crate::seed;

/// Standardized train/val/test bundles of one trial.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub trial: usize,
    pub seed: u64,
    pub split: Split,
    pub held_cohort: Option<String>,
    pub standardizer: Standardizer,
    pub train: Vec<Bundle>,
    pub val: Vec<Bundle>,
    pub test: Vec<Bundle>,
}

/// Hex SHA-256 over the content digests of `bundles`, in order.
pub fn bundles_hash(bundles: &[Bundle]) -> String {
    let mut h = Sha256::new();
    for b in bundles {
        h.update(b.digest());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Split for trial `trial` (seed `base ⊕ trial`): a fresh random split, or
/// the `trial`-th cohort held out. The standardizer sees training rows only.
pub fn prepare_trial(
    bundles: &[Bundle],
    kind: SplitKind,
    trial: usize,
    base_seed: u64,
) -> Result<PreparedTrial, EvalError> {
    let seed_value = seed::trial_seed(base_seed, trial);
    let (split, held) = match kind {
        SplitKind::Random => (split_random(bundles.len(), RANDOM_FRACTIONS, seed_value)?, None),
        SplitKind::Loco => {
            let ids = cohorts(bundles);
            if ids.is_empty() {
                return Err(EvalError::Split("no bundles".into()));
            }
            let held = ids[trial % ids.len()].clone();
            (split_loco(bundles, &held, seed_value)?, Some(held))
        }
    };
    let pick = |idx: &[usize]| -> Vec<Bundle> { idx.iter().map(|&i| bundles[i].clone()).collect() };
    let raw_train = pick(&split.train);
    let standardizer = Standardizer::fit_bundles(&raw_train);
    let apply = |v: Vec<Bundle>| -> Vec<Bundle> { v.iter().map(|b| standardizer.apply_bundle(b)).collect() };
    Ok(PreparedTrial {
        trial,
        seed: seed_value,
        train: apply(raw_train),
        val: apply(pick(&split.val)),
        test: apply(pick(&split.test)),
        split,
        held_cohort: held,
        standardizer,
    })
}

/// Train one variant on a prepared trial and score it on the test part.
pub fn train_and_score(
    kind: ModelKind,
    ablation: Ablation,
    prepared: &PreparedTrial,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(SleepModel, History, StratifiedTally), EvalError> {
    let tag = |source| EvalError::Trial {
        trial: prepared.trial,
        model: kind,
        source,
    };
    let mut model =
        SleepModel::new(kind, model_cfg.clone(), seed::derive(prepared.seed, "init")).with_ablation(ablation);
    let cfg = TrainConfig {
        seed: prepared.seed,
        ..train_cfg.clone()
    };
    let history = model.train(&prepared.train, &prepared.val, &cfg).map_err(tag)?;
    let tally = score(&model, &prepared.test).map_err(tag)?;
    Ok((model, history, tally))
}

/// Overall and per-category tallies of `model` on `bundles`.
pub fn score(model: &SleepModel, bundles: &[Bundle]) -> Result<StratifiedTally, crate::models::ModelError> {
    let probs = model.predict_proba(bundles)?;
    let mut total = StratifiedTally::default();
    for (b, p) in bundles.iter().zip(&probs) {
        total.merge(&score_bundle(b, p, &bundle_categories(b)));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAccuracy {
    pub scored: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub model: ModelKind,
    pub split: SplitKind,
    pub trial: usize,
    pub seed: u64,
    pub held_cohort: Option<String>,
    pub accuracy: f64,
    pub scored: usize,
    pub correct: usize,
    pub categories: BTreeMap<String, CategoryAccuracy>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub test_hash: String,
    /// Not serialized, so report files stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn check_config(bundles: &[Bundle], cfg: &ModelConfig) -> Result<(), EvalError> {
    match bundles.first() {
        None => Err(EvalError::Split("no bundles".into())),
        Some(b) if (b.eta(), b.features(), b.seq_len()) != (cfg.eta, cfg.features, cfg.seq_len) => {
            Err(EvalError::Config(format!(
                "bundles have eta={}, m={}, L={} but the model expects eta={}, m={}, L={}",
                b.eta(),
                b.features(),
                b.seq_len(),
                cfg.eta,
                cfg.features,
                cfg.seq_len
            )))
        }
        Some(_) => Ok(()),
    }
}

/// Report row of one trained variant on a prepared trial.
pub fn trial_report(
    kind: ModelKind,
    prepared: &PreparedTrial,
    split: SplitKind,
    history: &History,
    tally: &StratifiedTally,
    wall: f64,
) -> Result<TrialReport, EvalError> {
    let accuracy = tally.overall.accuracy().ok_or(EvalError::NothingScored)?;
    Ok(TrialReport {
        model: kind,
        split,
        trial: prepared.trial,
        seed: prepared.seed,
        held_cohort: prepared.held_cohort.clone(),
        accuracy,
        scored: tally.overall.scored,
        correct: tally.overall.correct,
        categories: tally
            .categories
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    CategoryAccuracy {
                        scored: t.scored,
                        correct: t.correct,
                        accuracy: t.accuracy(),
                    },
                )
            })
            .collect(),
        epochs: history.epochs(),
        best_epoch: history.best_epoch,
        test_hash: bundles_hash(&prepared.test),
        wall_time_s: wall,
    })
}

/// `trials` independent trials; within a trial every variant trains on the
/// same standardized bundles and is tested on the same bundles. Trials run
/// in parallel and are returned in trial order, variants in `kinds` order.
pub fn run_bootstrap(
    bundles: &[Bundle],
    kinds: &[ModelKind],
    split: SplitKind,
    trials: usize,
    base_seed: u64,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<TrialReport>, EvalError> {
    if trials == 0 {
        return Err(EvalError::Config("at least one trial is required".into()));
    }
    check_config(bundles, model_cfg)?;
    let per_trial: Result<Vec<Vec<TrialReport>>, EvalError> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let prepared = prepare_trial(bundles, split, t, base_seed)?;
            kinds
                .iter()
                .map(|&kind| {
                    let start = Instant::now();
                    let (_, history, tally) =
                        train_and_score(kind, Ablation::None, &prepared, model_cfg, train_cfg)?;
                    trial_report(kind, &prepared, split, &history, &tally, start.elapsed().as_secs_f64())
                })
                .collect()
        })
        .collect();
    Ok(per_trial?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub split: SplitKind,
    pub trials: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Mean and sample standard deviation of accuracy per (split, model), in
/// first-appearance order.
pub fn summarize(reports: &[TrialReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(SplitKind, ModelKind)> = Vec::new();
    for r in reports {
        if !keys.contains(&(r.split, r.model)) {
            keys.push((r.split, r.model));
        }
    }
    keys.into_iter()
        .map(|(split, model)| {
            let acc: Vec<f64> = reports
                .iter()
                .filter(|r| r.split == split && r.model == model)
                .map(|r| r.accuracy)
                .collect();
            let (mean_acc, std_acc) = mean_std(&acc);
            SummaryRow {
                model,
                split,
                trials: acc.len(),
                mean_acc,
                std_acc,
            }
        })
        .collect()
}

/// Per-model accuracies of one split, in trial order.
pub fn accuracies(reports: &[TrialReport], split: SplitKind, model: ModelKind) -> Vec<f64> {
    reports
        .iter()
        .filter(|r| r.split == split && r.model == model)
        .map(|r| r.accuracy)
        .collect()
}

/// Each graph-attention or graph-convolution variant against each benchmark
/// that is present in `reports`.
pub fn posthoc_table(reports: &[TrialReport], split: SplitKind) -> Result<Vec<PosthocRow>, EvalError> {
    let proposed = [ModelKind::GanLstm, ModelKind::GcnLstm];
    let benchmarks = [ModelKind::ConvLstm, ModelKind::LstmOnly];
    let groups: Vec<(String, Vec<f64>)> = proposed
        .iter()
        .chain(&benchmarks)
        .map(|&k| (k.name().to_string(), accuracies(reports, split, k)))
        .collect();
    let present = |i: usize| !groups[i].1.is_empty();
    let pairs: Vec<(usize, usize)> = (0..2)
        .flat_map(|a| (2..4).map(move |b| (a, b)))
        .filter(|&(a, b)| present(a) && present(b))
        .collect();
    pairwise_posthoc(&groups, &pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eta,
    SeqLen,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Eta => "eta",
            SweepParam::SeqLen => "seq_len",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub param: usize,
    pub model: ModelKind,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Rebuild bundles for each grid value (the other of eta/L held at
/// `fixed`) and bootstrap every variant on random splits.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cohorts: &[CohortDataset],
    param: SweepParam,
    values: &[usize],
    fixed: usize,
    kinds: &[ModelKind],
    trials: usize,
    base_seed: u64,
    model_template: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<CurveRow>, EvalError> {
    let mut rows = Vec::new();
    for &v in values {
        let (eta, seq_len) = match param {
            SweepParam::Eta => (v, fixed),
            SweepParam::SeqLen => (fixed, v),
        };
        let set = make_bundles_all(cohorts, seq_len, eta)?;
        let cfg = ModelConfig {
            eta,
            seq_len,
            ..model_template.clone()
        };
        let reports = run_bootstrap(&set.bundles, kinds, SplitKind::Random, trials, base_seed, &cfg, train_cfg)?;
        for s in summarize(&reports) {
            rows.push(CurveRow {
                param: v,
                model: s.model,
                mean_acc: s.mean_acc,
                std_acc: s.std_acc,
            });
        }
    }
    Ok(rows)
}

/// `param,model,mean_acc,std_acc` curve file.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["param", "model", "mean_acc", "std_acc"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.model.name().to_string(),
            r.mean_acc.to_string(),
            r.std_acc.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub variant: ModelKind,
    pub split: SplitKind,
    pub full_acc: Vec<f64>,
    pub ablated_acc: Vec<f64>,
    /// `100·(full − ablated)/full` per trial.
    pub drop_pct: Vec<f64>,
    pub mean_drop_pct: f64,
    pub std_drop_pct: f64,
}

impl AblationReport {
    pub fn sentence(&self) -> String {
        format!(
            "{} accuracy dropped by {:.1}% with a standard deviation of {:.1}% without the LSTM branch",
            self.variant, self.mean_drop_pct, self.std_drop_pct
        )
    }
}

/// Train the full variant and its LSTM-ablated twin on the same splits.
pub fn temporal_ablation(
    bundles: &[Bundle],
    variant: ModelKind,
    split: SplitKind,
    trials: usize,
    base_seed: u64,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<AblationReport, EvalError> {
    if !matches!(variant, ModelKind::GanLstm | ModelKind::GcnLstm) {
        return Err(EvalError::Config(format!("temporal ablation needs gan_lstm or gcn_lstm, not {variant}")));
    }
    if trials == 0 {
        return Err(EvalError::Config("at least one trial is required".into()));
    }
    check_config(bundles, model_cfg)?;
    let pairs: Result<Vec<(f64, f64)>, EvalError> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let prepared = prepare_trial(bundles, split, t, base_seed)?;
            let acc = |ablation| -> Result<f64, EvalError> {
                let (_, _, tally) = train_and_score(variant, ablation, &prepared, model_cfg, train_cfg)?;
                tally.overall.accuracy().ok_or(EvalError::NothingScored)
            };
            Ok((acc(Ablation::None)?, acc(Ablation::NoTemporal)?))
        })
        .collect();
    let (full_acc, ablated_acc): (Vec<f64>, Vec<f64>) = pairs?.into_iter().unzip();
    let drop_pct: Vec<f64> = full_acc
        .iter()
        .zip(&ablated_acc)
        .map(|(f, a)| 100.0 * (f - a) / f)
        .collect();
    let (mean_drop_pct, std_drop_pct) = mean_std(&drop_pct);
    Ok(AblationReport {
        variant,
        split,
        full_acc,
        ablated_acc,
        drop_pct,
        mean_drop_pct,
        std_drop_pct,
    })
}
