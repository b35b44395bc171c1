use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use sleepnet::commgraph::{
    build_call_graph, build_sms_graph, read_events_csv, symmetrize, CentralityProfile, CommEvent, EventKind,
    Window,
};
use sleepnet::data::{generate_synthetic, make_bundles_all, preprocess_cohorts, CohortDataset, PreprocessReport};
use sleepnet::eval::stats::{anova_oneway, kruskal_wallis, POSTHOC_METHOD};
use sleepnet::eval::{
    accuracies, curve_csv, posthoc_table, prepare_trial, run_bootstrap, saliency_importance, saliency_table,
    summarize, sweep, temporal_ablation, train_and_score, trial_report, SplitKind, SummaryRow, SweepParam,
    TrialReport, TOP_PER_MODALITY,
};
use sleepnet::models::{Ablation, Bundle};
use sleepnet::robustness::{run_robustness, RobustnessConfig, Scenario};

use crate::dataset::{read_dataset, write_dataset};
use crate::output::OutputDir;
use crate::settings::Settings;
use crate::{CliError, Command};

pub fn dispatch(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    match s.command {
        Command::Synth => synth(s, out),
        Command::Graphs => graphs(s, out),
        Command::Train => train(s, out),
        Command::Evaluate => evaluate(s, out),
        Command::Sweep => sweep_cmd(s, out),
        Command::Robustness => robustness(s, out),
        Command::Saliency => saliency(s, out),
        Command::Ablate => ablate(s, out),
    }
}

fn synth(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let cohorts = generate_synthetic(&s.synth)?;
    write_dataset(out, &cohorts)
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    kind: &'a str,
    events: usize,
    of_kind: usize,
    rejected: usize,
    nodes: usize,
    directed_edges: usize,
    undirected_edges: usize,
}

#[derive(Serialize)]
struct NodeCentrality<'a> {
    node_ids: &'a [String],
    #[serde(flatten)]
    profile: &'a CentralityProfile,
}

fn graphs(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let g = s.graphs.as_ref().expect("graphs settings");
    let text = std::fs::read_to_string(&g.events)
        .map_err(|e| CliError::Data(format!("{}: {e}", g.events.display())))?;
    let events = read_events_csv(text.as_bytes())
        .map_err(|e| CliError::Data(format!("{}: {e}", g.events.display())))?;
    let roster: Vec<String> = match &g.roster {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => {
            let mut ids: Vec<String> = events.iter().flat_map(|e| [e.src.clone(), e.dst.clone()]).collect();
            ids.sort();
            ids.dedup();
            ids
        }
    };
    let window = Window::new(g.window_start.unwrap_or(i64::MIN), g.window_end.unwrap_or(i64::MAX))?;
    // a log may mix both kinds; the builders take one
    let is_call = g.kind == "call";
    let chosen: Vec<CommEvent> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Call { .. }) == is_call)
        .cloned()
        .collect();
    let built = if is_call {
        build_call_graph(&chosen, window, &roster)?
    } else {
        build_sms_graph(&chosen, window, &roster, g.w1, g.w2)?
    };
    let sym = symmetrize(&built.graph);
    let profile = CentralityProfile::compute(&sym)?;
    let count = |g: &sleepnet::WeightedGraph| g.adj.iter().filter(|v| **v != 0.0).count();
    out.write("graph.json", built.graph.to_json().as_bytes())?;
    out.write("graph_symmetric.json", sym.to_json().as_bytes())?;
    out.write_json(
        "centrality.json",
        &NodeCentrality {
            node_ids: &sym.node_ids,
            profile: &profile,
        },
    )?;
    out.write_json(
        "summary.json",
        &GraphSummary {
            kind: &g.kind,
            events: events.len(),
            of_kind: chosen.len(),
            rejected: built.rejected,
            nodes: roster.len(),
            directed_edges: count(&built.graph),
            undirected_edges: count(&sym) / 2,
        },
    )
}

/// Cohorts from the `data` directory or generated inline, preprocessed.
fn load_cohorts(s: &Settings) -> Result<(Vec<CohortDataset>, Vec<PreprocessReport>), CliError> {
    let raw = match &s.data {
        Some(dir) => read_dataset(dir)?,
        None => generate_synthetic(&s.synth)?,
    };
    Ok(preprocess_cohorts(&raw)?)
}

fn bundles_of(cohorts: &[CohortDataset], s: &Settings) -> Result<Vec<Bundle>, CliError> {
    let set = make_bundles_all(cohorts, s.seq_len, s.eta)?;
    if set.bundles.is_empty() {
        return Err(CliError::Data(format!(
            "no bundles: every day lacks {} days of history or a next-day label",
            s.seq_len
        )));
    }
    Ok(set.bundles)
}

fn features_of(cohorts: &[CohortDataset]) -> usize {
    cohorts.first().map_or(0, CohortDataset::n_features)
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut text = String::from("model,split,trials,mean_acc,std_acc\n");
    for r in rows {
        let _ = writeln!(text, "{},{},{},{},{}", r.model, r.split.name(), r.trials, r.mean_acc, r.std_acc);
    }
    text
}

fn train(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, prep) = load_cohorts(s)?;
    let bundles = bundles_of(&cohorts, s)?;
    let model_cfg = s.model_config(features_of(&cohorts));
    let prepared = prepare_trial(&bundles, s.split, 0, s.seed)?;
    let mut reports = Vec::new();
    for &kind in &s.models {
        let (model, history, tally) = train_and_score(kind, Ablation::None, &prepared, &model_cfg, &s.train)?;
        let dir = format!("models/{kind}");
        out.write(&format!("{dir}/manifest.json"), model.manifest_json().as_bytes())?;
        out.write(&format!("{dir}/params.json"), model.param_set().to_json().as_bytes())?;
        out.write_json(&format!("{dir}/history.json"), &history)?;
        reports.push(trial_report(kind, &prepared, s.split, &history, &tally, 0.0)?);
    }
    out.write_json("standardizer.json", &prepared.standardizer)?;
    out.write_json("preprocess.json", &prep)?;
    out.write_json("trials.json", &reports)?;
    out.write("summary.csv", summary_csv(&summarize(&reports)).as_bytes())
}

#[derive(Serialize)]
struct OmnibusRow {
    split: SplitKind,
    groups: Vec<String>,
    anova_f: Option<f64>,
    anova_p: Option<f64>,
    kruskal_h: Option<f64>,
    kruskal_p: Option<f64>,
    note: Option<String>,
}

fn omnibus(reports: &[TrialReport], split: SplitKind, s: &Settings) -> OmnibusRow {
    let groups: Vec<Vec<f64>> = s.models.iter().map(|&k| accuracies(reports, split, k)).collect();
    let names = s.models.iter().map(ToString::to_string).collect();
    let a = anova_oneway(&groups);
    let k = kruskal_wallis(&groups);
    let note = [&a, &k].iter().find_map(|r| r.as_ref().err().map(ToString::to_string));
    OmnibusRow {
        split,
        groups: names,
        anova_f: a.as_ref().ok().map(|v| v.0),
        anova_p: a.as_ref().ok().map(|v| v.1),
        kruskal_h: k.as_ref().ok().map(|v| v.0),
        kruskal_p: k.as_ref().ok().map(|v| v.1),
        note,
    }
}

fn evaluate(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, prep) = load_cohorts(s)?;
    let bundles = bundles_of(&cohorts, s)?;
    let model_cfg = s.model_config(features_of(&cohorts));
    let mut reports = Vec::new();
    for &split in &s.splits {
        let trials = s.trials_for(split, cohorts.len())?;
        reports.extend(run_bootstrap(&bundles, &s.models, split, trials, s.seed, &model_cfg, &s.train)?);
    }
    let mut posthoc = String::from("split,a,b,mean_diff,raw_p,adjusted_p,method\n");
    let mut stats = Vec::new();
    for &split in &s.splits {
        if s.trials_for(split, cohorts.len())? >= 2 {
            for r in posthoc_table(&reports, split)? {
                let _ = writeln!(
                    posthoc,
                    "{},{},{},{},{},{},{}",
                    split.name(),
                    r.a,
                    r.b,
                    r.mean_diff,
                    r.raw_p,
                    r.adjusted_p,
                    POSTHOC_METHOD
                );
            }
        }
        stats.push(omnibus(&reports, split, s));
    }
    out.write_json("preprocess.json", &prep)?;
    out.write_json("trials.json", &reports)?;
    out.write("summary.csv", summary_csv(&summarize(&reports)).as_bytes())?;
    out.write("posthoc.csv", posthoc.as_bytes())?;
    out.write_json("stats.json", &stats)?;
    if let Some(param) = s.sweep_param {
        write_curve(s, &cohorts, param, out)?;
    }
    Ok(())
}

fn write_curve(s: &Settings, cohorts: &[CohortDataset], param: SweepParam, out: &mut OutputDir) -> Result<(), CliError> {
    let fixed = match param {
        SweepParam::Eta => s.seq_len,
        SweepParam::SeqLen => s.eta,
    };
    let template = s.model_config(features_of(cohorts));
    let rows = sweep(cohorts, param, &s.sweep_values, fixed, &s.models, s.trials, s.seed, &template, &s.train)?;
    out.write(&format!("curve_{}.csv", param.name()), curve_csv(&rows).as_bytes())
}

fn sweep_cmd(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, _) = load_cohorts(s)?;
    write_curve(s, &cohorts, s.sweep_param.expect("checked by settings"), out)
}

fn robustness(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, _) = load_cohorts(s)?;
    let bundles = bundles_of(&cohorts, s)?;
    let model_cfg = s.model_config(features_of(&cohorts));
    for &scenario in &s.scenarios {
        let cfg = RobustnessConfig {
            grid: match scenario {
                Scenario::FeaturesAllUsers => s.grid_features.clone(),
                Scenario::FeaturesUserSubset => s.grid_users.clone(),
                Scenario::TemporalSubset => s.grid_days.clone(),
            },
            feature_percent: s.feature_percent,
            train_repeats: s.train_repeats,
            perturb_repeats: s.perturb_repeats,
            ..RobustnessConfig::new(scenario, s.seed)
        };
        let res = run_robustness(&bundles, &s.models, &cfg, &model_cfg, &s.train)?;
        let n = scenario.number();
        out.write(&format!("robustness_scenario{n}.csv"), res.to_csv().as_bytes())?;
        out.write_json(&format!("robustness_scenario{n}.json"), &res)?;
    }
    Ok(())
}

fn saliency(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, _) = load_cohorts(s)?;
    let bundles = bundles_of(&cohorts, s)?;
    let model_cfg = s.model_config(features_of(&cohorts));
    let folds = match s.saliency_folds {
        Some(f) if f > cohorts.len() => {
            return Err(CliError::Usage(format!(
                "saliency_folds = {f} but the data has {} cohorts",
                cohorts.len()
            )))
        }
        Some(f) => f,
        None => cohorts.len(),
    };
    let repeats = (0..folds)
        .into_par_iter()
        .map(|t| -> Result<_, CliError> {
            let prepared = prepare_trial(&bundles, SplitKind::Loco, t, s.seed)?;
            let (model, ..) = train_and_score(s.saliency_model, Ablation::None, &prepared, &model_cfg, &s.train)?;
            Ok(saliency_importance(&model, &prepared.test)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let first = &cohorts[0];
    let rows = saliency_table(&repeats, &first.feature_names, &first.modalities, TOP_PER_MODALITY);
    let mut csv = String::from("modality,rank,feature,mean,ci_low,ci_high\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.modality.name(),
            r.rank,
            r.feature,
            r.mean,
            r.ci_low,
            r.ci_high
        );
    }
    out.write("saliency.csv", csv.as_bytes())?;
    out.write_json("saliency.json", &rows)
}

fn ablate(s: &Settings, out: &mut OutputDir) -> Result<(), CliError> {
    let (cohorts, _) = load_cohorts(s)?;
    let bundles = bundles_of(&cohorts, s)?;
    let model_cfg = s.model_config(features_of(&cohorts));
    let mut reports = Vec::new();
    let mut text = String::new();
    for &variant in &s.variants {
        let trials = s.trials_for(s.split, cohorts.len())?;
        let r = temporal_ablation(&bundles, variant, s.split, trials, s.seed, &model_cfg, &s.train)?;
        text.push_str(&r.sentence());
        text.push('\n');
        reports.push(r);
    }
    out.write_json("ablation.json", &reports)?;
    out.write("ablation.txt", text.as_bytes())
}
