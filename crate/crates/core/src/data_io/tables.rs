//! Prediction, target and truth tables exchanged by the command-line tool.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{LkgpError, Result};

use super::dataset::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub config_id: String,
    pub step: f64,
    pub mean: f64,
    pub variance: f64,
    pub samples: Vec<f64>,
}

/// `config_id,step,mean,variance[,s0..s{S-1}]`.
pub fn write_predictions<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let nsamp = rows.first().map_or(0, |r| r.samples.len());
    if rows.iter().any(|r| r.samples.len() != nsamp) {
        return Err(LkgpError::Invalid(
            "prediction rows carry different sample counts".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["config_id", "step", "mean", "variance"].map(String::from).to_vec();
    header.extend((0..nsamp).map(|s| format!("s{s}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.config_id.clone(),
            fmt_f64(r.step),
            fmt_f64(r.mean),
            fmt_f64(r.variance),
        ];
        rec.extend(r.samples.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn num(field: &str, line: u64, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| LkgpError::Data(format!("line {line}: cannot parse {what} {field:?}")))
}

fn open_csv<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = open_csv(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 4
        || &header[0] != "config_id"
        || &header[1] != "step"
        || &header[2] != "mean"
        || &header[3] != "variance"
    {
        return Err(LkgpError::Data(
            "line 1: predictions header must start with config_id,step,mean,variance".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let samples = (4..rec.len())
            .map(|k| num(&rec[k], line, "sample"))
            .collect::<Result<_>>()?;
        rows.push(PredictionRow {
            config_id: rec[0].to_string(),
            step: num(&rec[1], line, "step")?,
            mean: num(&rec[2], line, "mean")?,
            variance: num(&rec[3], line, "variance")?,
            samples,
        });
    }
    Ok(rows)
}

/// A ground-truth value, optionally tied to a specific step.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub config_id: String,
    pub step: Option<f64>,
    pub value: f64,
}

/// `config_id,value` or `config_id,step,value`.
pub fn read_truth<R: Read>(reader: R) -> Result<Vec<TruthRow>> {
    let mut rdr = open_csv(reader);
    let header = rdr.headers()?.clone();
    let with_step = match header.iter().collect::<Vec<_>>().as_slice() {
        ["config_id", "value"] => false,
        ["config_id", "step", "value"] => true,
        _ => {
            return Err(LkgpError::Data(
                "line 1: truth header must be config_id,value or config_id,step,value".into(),
            ))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(TruthRow {
            config_id: rec[0].to_string(),
            step: if with_step {
                Some(num(&rec[1], line, "step")?)
            } else {
                None
            },
            value: num(&rec[rec.len() - 1], line, "value")?,
        });
    }
    Ok(rows)
}

pub fn write_truth<W: Write>(rows: &[TruthRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_step = rows.iter().any(|r| r.step.is_some());
    if with_step {
        w.write_record(["config_id", "step", "value"])?;
    } else {
        w.write_record(["config_id", "value"])?;
    }
    for r in rows {
        match (with_step, r.step) {
            (true, Some(s)) => w.write_record([r.config_id.clone(), fmt_f64(s), fmt_f64(r.value)])?,
            (true, None) => return Err(LkgpError::Invalid("mixed truth rows with and without step".into())),
            (false, _) => w.write_record([r.config_id.clone(), fmt_f64(r.value)])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// `(mean, variance, truth)` columns in matching order.
pub type Aligned = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Pairs every truth row with its prediction. Truth rows without a step
/// match the config's only prediction row (or its last step when several
/// are present). Returns `(mean, variance, truth)` columns, or the list of
/// unmatched ids.
pub fn align_predictions(preds: &[PredictionRow], truth: &[TruthRow]) -> std::result::Result<Aligned, Vec<String>> {
    let mut by_id: BTreeMap<&str, Vec<&PredictionRow>> = BTreeMap::new();
    for p in preds {
        by_id.entry(&p.config_id).or_default().push(p);
    }
    let mut missing = Vec::new();
    let (mut mean, mut var, mut val) = (Vec::new(), Vec::new(), Vec::new());
    let mut used: BTreeMap<&str, usize> = BTreeMap::new();
    for t in truth {
        let hit = by_id.get(t.config_id.as_str()).and_then(|rows| match t.step {
            Some(s) => rows.iter().find(|r| r.step == s).copied(),
            None => rows.iter().max_by(|a, b| a.step.total_cmp(&b.step)).copied(),
        });
        match hit {
            Some(p) => {
                *used.entry(&p.config_id).or_default() += 1;
                mean.push(p.mean);
                var.push(p.variance);
                val.push(t.value);
            }
            None => missing.push(t.config_id.clone()),
        }
    }
    for id in by_id.keys() {
        if !used.contains_key(id) {
            missing.push((*id).to_string());
        }
    }
    if missing.is_empty() {
        Ok((mean, var, val))
    } else {
        missing.sort();
        missing.dedup();
        Err(missing)
    }
}

/// Test configurations for prediction: `config_id,hp_1..hp_d[,steps]`,
/// where `steps` is an optional `;`-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub config_id: String,
    pub hyperparams: Vec<f64>,
    pub steps: Option<Vec<f64>>,
}

pub fn read_targets<R: Read>(reader: R) -> Result<Vec<TargetRow>> {
    let mut rdr = open_csv(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "config_id" {
        return Err(LkgpError::Data(
            "line 1: targets header must start with config_id".into(),
        ));
    }
    let has_steps = &header[header.len() - 1] == "steps";
    let d = header.len() - 1 - usize::from(has_steps);
    if d == 0 {
        return Err(LkgpError::Data(
            "line 1: targets need at least one hyperparameter column".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(LkgpError::Data(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let hyperparams = (1..=d)
            .map(|k| num(&rec[k], line, "hyperparameter"))
            .collect::<Result<_>>()?;
        let steps = if has_steps && !rec[d + 1].trim().is_empty() {
            Some(
                rec[d + 1]
                    .split(';')
                    .map(|s| num(s, line, "step"))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        rows.push(TargetRow {
            config_id: rec[0].to_string(),
            hyperparams,
            steps,
        });
    }
    if rows.is_empty() {
        return Err(LkgpError::Data("targets file has no rows".into()));
    }
    Ok(rows)
}
