//! Feature and label CSV files. Empty cells are missing values.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use ndarray::{Array2, Array3};

use super::DataError;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_cell(s: &str, line: usize) -> Result<f64, DataError> {
    if s.trim().is_empty() {
        return Ok(f64::NAN);
    }
    s.trim().parse().map_err(|_| DataError::Csv {
        line,
        msg: format!("not a number: `{s}`"),
    })
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|e| DataError::Csv {
        line,
        msg: format!("bad date `{s}`: {e}"),
    })
}

fn csv_err(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    DataError::Csv {
        line,
        msg: e.to_string(),
    }
}

/// `participant_id,date,<feature columns>`, participant-major.
pub fn write_features_csv<W: Write>(
    w: W,
    participants: &[String],
    dates: &[NaiveDate],
    names: &[String],
    features: &Array3<f64>,
) -> Result<(), DataError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["participant_id".to_string(), "date".to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    for (i, p) in participants.iter().enumerate() {
        for (k, d) in dates.iter().enumerate() {
            let mut rec = vec![p.clone(), d.format(DATE_FORMAT).to_string()];
            rec.extend((0..names.len()).map(|j| fmt_cell(features[[i, k, j]])));
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_labels_csv<W: Write>(
    w: W,
    participants: &[String],
    dates: &[NaiveDate],
    minutes: &Array2<f64>,
) -> Result<(), DataError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["participant_id", "date", "sleep_minutes"]).map_err(csv_err)?;
    for (i, p) in participants.iter().enumerate() {
        for (k, d) in dates.iter().enumerate() {
            out.write_record([
                p.clone(),
                d.format(DATE_FORMAT).to_string(),
                fmt_cell(minutes[[i, k]]),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Participants in first-appearance order, dates sorted, features with
/// absent rows left missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub participants: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub values: Array3<f64>,
}

pub fn read_features_csv<R: Read>(r: R) -> Result<FeatureTable, DataError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "participant_id" || &header[1] != "date" {
        return Err(DataError::Csv {
            line: 1,
            msg: "header must start with participant_id,date and name a feature".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let date = parse_date(&rec[1], line)?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|c| parse_cell(c, line))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((rec[0].to_string(), date, vals, line));
    }
    let mut participants: Vec<String> = Vec::new();
    let mut pidx = HashMap::new();
    for (p, ..) in &rows {
        if !pidx.contains_key(p) {
            pidx.insert(p.clone(), participants.len());
            participants.push(p.clone());
        }
    }
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.1).collect();
    dates.sort_unstable();
    dates.dedup();
    let didx: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(k, d)| (*d, k)).collect();
    let mut values = Array3::from_elem((participants.len(), dates.len(), names.len()), f64::NAN);
    let mut seen = vec![false; participants.len() * dates.len()];
    for (p, d, vals, line) in rows {
        let (i, k) = (pidx[&p], didx[&d]);
        if std::mem::replace(&mut seen[i * dates.len() + k], true) {
            return Err(DataError::Csv {
                line,
                msg: format!("duplicate row for {p} on {d}"),
            });
        }
        for (j, v) in vals.into_iter().enumerate() {
            values[[i, k, j]] = v;
        }
    }
    Ok(FeatureTable {
        participants,
        dates,
        names,
        values,
    })
}

/// Sleep minutes aligned to the given roster and dates; unknown
/// participants or dates are errors, absent cells stay missing.
pub fn read_labels_csv<R: Read>(
    r: R,
    participants: &[String],
    dates: &[NaiveDate],
) -> Result<Array2<f64>, DataError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["participant_id", "date", "sleep_minutes"] {
        return Err(DataError::Csv {
            line: 1,
            msg: "header must be participant_id,date,sleep_minutes".into(),
        });
    }
    let pidx: HashMap<&str, usize> =
        participants.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let didx: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(k, d)| (*d, k)).collect();
    let mut out = Array2::from_elem((participants.len(), dates.len()), f64::NAN);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let p = *pidx.get(&rec[0]).ok_or_else(|| DataError::Csv {
            line,
            msg: format!("unknown participant `{}`", &rec[0]),
        })?;
        let date = parse_date(&rec[1], line)?;
        let k = *didx.get(&date).ok_or_else(|| DataError::Csv {
            line,
            msg: format!("date {date} has no feature row"),
        })?;
        let v = parse_cell(&rec[2], line)?;
        if !v.is_nan() && !(0.0..1440.0).contains(&v) {
            return Err(DataError::BadMinutes(v));
        }
        out[[p, k]] = v;
    }
    Ok(out)
}
