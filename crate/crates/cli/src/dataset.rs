//! On-disk cohort datasets: one directory per cohort holding
//! `features.csv`, `labels.csv`, `events.csv` and `graphs/<date>.json`,
//! plus `cohorts.txt` giving the cohort order.

use std::fs;
use std::path::Path;

use sleepnet::commgraph::{read_events_csv, write_events_csv, WeightedGraph};
use sleepnet::data::{
    read_features_csv, read_labels_csv, write_features_csv, write_labels_csv, CohortDataset, Modality,
    DATE_FORMAT,
};

use crate::output::OutputDir;
use crate::CliError;

pub const COHORTS_FILE: &str = "cohorts.txt";

pub fn write_dataset(out: &mut OutputDir, cohorts: &[CohortDataset]) -> Result<(), CliError> {
    let mut order = String::new();
    for ds in cohorts {
        let id = &ds.cohort_id;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(CliError::Data(format!("cohort id {id:?} is not a usable directory name")));
        }
        order.push_str(id);
        order.push('\n');
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &ds.participants, &ds.dates, &ds.feature_names, &ds.features)?;
        out.write(&format!("{id}/features.csv"), &buf)?;
        let mut buf = Vec::new();
        write_labels_csv(&mut buf, &ds.participants, &ds.dates, &ds.sleep_minutes)?;
        out.write(&format!("{id}/labels.csv"), &buf)?;
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &ds.events).map_err(|e| CliError::Run(e.to_string()))?;
        out.write(&format!("{id}/events.csv"), &buf)?;
        for (d, g) in ds.dates.iter().zip(&ds.graphs) {
            out.write(&format!("{id}/graphs/{}.json", d.format(DATE_FORMAT)), g.to_json().as_bytes())?;
        }
    }
    out.write(COHORTS_FILE, order.as_bytes())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn in_file<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

pub fn read_cohort(dir: &Path, cohort_id: &str) -> Result<CohortDataset, CliError> {
    let path = dir.join("features.csv");
    let table = read_features_csv(read_text(&path)?.as_bytes()).map_err(in_file(&path))?;
    let path = dir.join("labels.csv");
    let sleep = read_labels_csv(read_text(&path)?.as_bytes(), &table.participants, &table.dates)
        .map_err(in_file(&path))?;
    let path = dir.join("events.csv");
    let events = if path.exists() {
        read_events_csv(read_text(&path)?.as_bytes()).map_err(in_file(&path))?
    } else {
        Vec::new()
    };
    let modalities = table
        .names
        .iter()
        .map(|n| {
            Modality::from_column(n)
                .ok_or_else(|| CliError::Data(format!("column {n:?} does not name a modality prefix")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let graphs = table
        .dates
        .iter()
        .map(|d| {
            let path = dir.join("graphs").join(format!("{}.json", d.format(DATE_FORMAT)));
            WeightedGraph::from_json(&read_text(&path)?).map_err(in_file(&path))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ds = CohortDataset {
        cohort_id: cohort_id.to_string(),
        participants: table.participants,
        dates: table.dates,
        features: table.values,
        sleep_minutes: sleep,
        graphs,
        feature_names: table.names,
        modalities,
        events,
    };
    ds.validate().map_err(in_file(dir))?;
    Ok(ds)
}

/// Read every cohort listed in `cohorts.txt`, or every subdirectory in
/// name order when the list is absent.
pub fn read_dataset(root: &Path) -> Result<Vec<CohortDataset>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Data(format!("dataset directory {} not found", root.display())));
    }
    let list = root.join(COHORTS_FILE);
    let ids: Vec<String> = if list.exists() {
        read_text(&list)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    } else {
        let mut ids = Vec::new();
        for entry in fs::read_dir(root)? {
            let entry = entry?;
            if entry.path().join("features.csv").exists() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        ids
    };
    if ids.is_empty() {
        return Err(CliError::Data(format!("no cohorts under {}", root.display())));
    }
    let cohorts = ids
        .iter()
        .map(|id| read_cohort(&root.join(id), id))
        .collect::<Result<Vec<_>, _>>()?;
    let names = &cohorts[0].feature_names;
    if let Some(bad) = cohorts.iter().find(|c| &c.feature_names != names) {
        return Err(CliError::Data(format!(
            "cohort {} has different feature columns from {}",
            bad.cohort_id, cohorts[0].cohort_id
        )));
    }
    Ok(cohorts)
}
