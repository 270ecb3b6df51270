//! CSV layout:
//! - windows: `sample_id,participant_id,step,<25 feature names>`, 24 rows per sample
//! - labels: `sample_id,anxiety` (binary) or `sample_id,score` (raw, binarized per participant)
//! - demographics: `participant_id,<attribute>...` with raw categories
//! - catalog: JSON `{attribute: {category: code, counts: {...}}}`

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use super::{
    binarize_anxiety, encode_protected, AttributeEncoding, Cohort, DatasetError, LabeledWindow, Result, STEPS,
};
use crate::hrv::{FEATURE_NAMES, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortPaths {
    pub windows: PathBuf,
    pub labels: PathBuf,
    pub demographics: PathBuf,
}

impl CohortPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CohortPaths {
            windows: dir.join("windows.csv"),
            labels: dir.join("labels.csv"),
            demographics: dir.join("demographics.csv"),
        }
    }
}

fn input_err(path: &Path, message: impl ToString) -> DatasetError {
    DatasetError::Input { path: path.display().to_string(), message: message.to_string() }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| input_err(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| input_err(path, format!("not a number: {field:?}")))
}

struct RawWindow {
    participant: String,
    rows: Vec<Option<Vec<f64>>>,
}

fn read_windows(path: &Path) -> Result<Vec<(String, RawWindow)>> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| input_err(path, e))?.clone();
    let expected: Vec<&str> = ["sample_id", "participant_id", "step"].into_iter().chain(FEATURE_NAMES).collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(input_err(path, "header must be sample_id,participant_id,step followed by the 25 feature names"));
    }
    let mut order: Vec<(String, RawWindow)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input_err(path, e))?;
        let sid = rec[0].to_string();
        let step: usize = rec[2].trim().parse().map_err(|_| input_err(path, format!("bad step {:?}", &rec[2])))?;
        if step >= STEPS {
            return Err(input_err(path, format!("sample {sid}: step {step} out of range")));
        }
        let values = (3..3 + N_FEATURES).map(|i| parse_f64(path, &rec[i])).collect::<Result<Vec<_>>>()?;
        let i = *index.entry(sid.clone()).or_insert_with(|| {
            order.push((sid.clone(), RawWindow { participant: rec[1].to_string(), rows: vec![None; STEPS] }));
            order.len() - 1
        });
        let slot = &mut order[i].1.rows[step];
        if slot.is_some() {
            return Err(input_err(path, format!("sample {sid}: duplicate step {step}")));
        }
        *slot = Some(values);
    }
    Ok(order)
}

fn read_labels(path: &Path, participant_of: &BTreeMap<String, String>) -> Result<BTreeMap<String, u8>> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| input_err(path, e))?.clone();
    let kind = headers.get(1).unwrap_or("").to_string();
    if headers.get(0) != Some("sample_id") || !(kind == "anxiety" || kind == "score") {
        return Err(input_err(path, "header must be sample_id,anxiety or sample_id,score"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input_err(path, e))?;
        rows.push((rec[0].to_string(), parse_f64(path, &rec[1])?));
    }
    if kind == "anxiety" {
        return rows
            .into_iter()
            .map(|(sid, v)| {
                if v == 0.0 || v == 1.0 {
                    Ok((sid, v as u8))
                } else {
                    Err(input_err(path, format!("sample {sid}: anxiety label {v} is not 0/1")))
                }
            })
            .collect();
    }
    // Raw scores: binarize against each participant's own mean.
    let mut per_participant: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (sid, v) in rows {
        let pid = participant_of.get(&sid).ok_or_else(|| input_err(path, format!("unknown sample {sid}")))?;
        per_participant.entry(pid.clone()).or_default().push((sid, v));
    }
    let scores = per_participant.iter().map(|(p, v)| (p.clone(), v.iter().map(|x| x.1).collect())).collect();
    let binarized = binarize_anxiety(&scores);
    for p in &binarized.degenerate {
        log::warn!("participant {p}: constant anxiety scores, all labels set to 0");
    }
    let mut out = BTreeMap::new();
    for (pid, samples) in per_participant {
        for ((sid, _), y) in samples.into_iter().zip(&binarized.labels[&pid]) {
            out.insert(sid, *y);
        }
    }
    Ok(out)
}

fn read_demographics(path: &Path) -> Result<(BTreeMap<String, BTreeMap<String, u8>>, BTreeMap<String, AttributeEncoding>)> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| input_err(path, e))?.clone();
    if headers.get(0) != Some("participant_id") || headers.len() < 2 {
        return Err(input_err(path, "header must be participant_id followed by attribute columns"));
    }
    let attrs: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut raw: Vec<BTreeMap<String, String>> = vec![BTreeMap::new(); attrs.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input_err(path, e))?;
        for (a, col) in raw.iter_mut().enumerate() {
            col.insert(rec[0].to_string(), rec[a + 1].trim().to_string());
        }
    }
    let mut codes: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
    let mut catalog = BTreeMap::new();
    for (name, col) in attrs.iter().zip(&raw) {
        let (mapping, enc) = encode_protected(col, name).map_err(|e| input_err(path, e))?;
        for (pid, code) in mapping {
            codes.entry(pid).or_default().insert(name.clone(), code);
        }
        catalog.insert(name.clone(), enc);
    }
    Ok((codes, catalog))
}

pub fn read_cohort(paths: &CohortPaths) -> Result<Cohort> {
    let raw = read_windows(&paths.windows)?;
    let participant_of: BTreeMap<String, String> =
        raw.iter().map(|(sid, w)| (sid.clone(), w.participant.clone())).collect();
    let labels = read_labels(&paths.labels, &participant_of)?;
    let (codes, catalog) = read_demographics(&paths.demographics)?;
    let mut windows = Vec::with_capacity(raw.len());
    for (sid, w) in raw {
        let mut features = Vec::with_capacity(STEPS * N_FEATURES);
        for (step, row) in w.rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| input_err(&paths.windows, format!("sample {sid}: missing step {step}")))?;
            features.extend(row);
        }
        let anxiety = *labels.get(&sid).ok_or_else(|| input_err(&paths.labels, format!("no label for sample {sid}")))?;
        let protected = codes
            .get(&w.participant)
            .cloned()
            .ok_or_else(|| input_err(&paths.demographics, format!("no demographics for participant {}", w.participant)))?;
        windows.push(LabeledWindow::new(sid, w.participant, features, anxiety, protected)?);
    }
    Cohort::new(windows, catalog)
}

/// Writes the three CSVs plus `catalog.json` into `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<CohortPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = CohortPaths::in_dir(dir);

    let mut w = csv::Writer::from_path(&paths.windows)?;
    let header: Vec<&str> = ["sample_id", "participant_id", "step"].into_iter().chain(FEATURE_NAMES).collect();
    w.write_record(&header)?;
    for win in cohort.windows() {
        for step in 0..STEPS {
            let mut rec = vec![win.sample_id.clone(), win.participant_id.clone(), step.to_string()];
            rec.extend(win.features()[step * N_FEATURES..(step + 1) * N_FEATURES].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.labels)?;
    w.write_record(["sample_id", "anxiety"])?;
    for win in cohort.windows() {
        w.write_record([win.sample_id.as_str(), &win.anxiety.to_string()])?;
    }
    w.flush()?;

    let attrs = cohort.attribute_names();
    let category = |attr: &str, code: u8| -> String {
        cohort
            .catalog()
            .get(attr)
            .and_then(|e| e.codes.iter().find(|(_, c)| **c == code).map(|(k, _)| k.clone()))
            .unwrap_or_else(|| code.to_string())
    };
    let mut seen: BTreeMap<&str, &LabeledWindow> = BTreeMap::new();
    for win in cohort.windows() {
        seen.entry(win.participant_id.as_str()).or_insert(win);
    }
    let mut w = csv::Writer::from_path(&paths.demographics)?;
    w.write_record(std::iter::once("participant_id").chain(attrs.iter().map(String::as_str)))?;
    for (pid, win) in seen {
        let mut rec = vec![pid.to_string()];
        rec.extend(attrs.iter().map(|a| category(a, win.protected[a])));
        w.write_record(&rec)?;
    }
    w.flush()?;

    std::fs::write(dir.join("catalog.json"), serde_json::to_string_pretty(cohort.catalog())?)?;
    Ok(paths)
}
