use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{LkgpError, Result};
use crate::linalg::ProjectionMask;
use crate::model::{PreparedData, TrainingData};
use crate::scalar::Scalar;
use crate::transforms::{InputScaler, OutputScaler, ProgressionScaler, Scalers};

/// One observed learning-curve value.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub config_id: String,
    pub hyperparams: Vec<f64>,
    pub step: f64,
    pub value: f64,
}

/// A validated collection of curve records in long format.
///
/// `(config_id, step)` pairs are unique and every config has one fixed
/// hyperparameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<CurveRecord>,
    d: usize,
}

impl Dataset {
    pub fn new(records: Vec<CurveRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| LkgpError::Data("dataset has no records".into()))?;
        let d = first.hyperparams.len();
        if d == 0 {
            return Err(LkgpError::Data("records need at least one hyperparameter".into()));
        }
        let mut hps: BTreeMap<&str, &[f64]> = BTreeMap::new();
        let mut keys = HashSet::new();
        for (k, r) in records.iter().enumerate() {
            if r.hyperparams.len() != d {
                return Err(LkgpError::Data(format!(
                    "record {k} ({}) has {} hyperparameters, expected {d}",
                    r.config_id,
                    r.hyperparams.len()
                )));
            }
            if !(r.step.is_finite() && r.value.is_finite() && r.hyperparams.iter().all(|v| v.is_finite())) {
                return Err(LkgpError::Data(format!(
                    "record {k} ({}) has non-finite values",
                    r.config_id
                )));
            }
            if !keys.insert((r.config_id.as_str(), r.step.to_bits())) {
                return Err(LkgpError::Data(format!(
                    "duplicate observation for config {} at step {}",
                    r.config_id, r.step
                )));
            }
            match hps.get(r.config_id.as_str()) {
                Some(h) if *h != r.hyperparams.as_slice() => {
                    return Err(LkgpError::Data(format!(
                        "config {} has inconsistent hyperparameters",
                        r.config_id
                    )))
                }
                Some(_) => {}
                None => {
                    hps.insert(&r.config_id, &r.hyperparams);
                }
            }
        }
        Ok(Self { records, d })
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Sorted union of observed steps.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.records.iter().map(|r| r.step).collect();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    /// Config ids in canonical (lexicographic) order with their hyperparameters.
    pub fn configs(&self) -> Vec<(String, Vec<f64>)> {
        let mut map: BTreeMap<&str, &Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            map.entry(&r.config_id).or_insert(&r.hyperparams);
        }
        map.into_iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// Records sorted by config id, then step.
    pub fn canonical(&self) -> Self {
        let mut records = self.records.clone();
        records.sort_by(|a, b| a.config_id.cmp(&b.config_id).then(a.step.total_cmp(&b.step)));
        Self { records, d: self.d }
    }

    /// Projection mask over (configs × grid) in canonical order.
    pub fn mask(&self) -> Result<ProjectionMask> {
        let (configs, grid) = (self.configs(), self.grid());
        let row: BTreeMap<&str, usize> = configs.iter().enumerate().map(|(i, (c, _))| (c.as_str(), i)).collect();
        let m = grid.len();
        let mut observed = vec![false; configs.len() * m];
        for r in &self.records {
            let j = grid.binary_search_by(|g| g.total_cmp(&r.step)).expect("step in grid");
            observed[row[r.config_id.as_str()] * m + j] = true;
        }
        ProjectionMask::new(configs.len(), m, observed)
    }
}

/// Fits all three scalers on the dataset and returns transformed training
/// data with configs sorted by id and steps ascending.
pub fn to_training_data<T: Scalar>(ds: &Dataset) -> Result<PreparedData<T>> {
    let configs = ds.configs();
    let grid = ds.grid();
    let (n, m, d) = (configs.len(), grid.len(), ds.d());
    let mask = ds.mask()?;

    let raw_x = DMatrix::from_fn(n, d, |i, k| T::lit(configs[i].1[k]));
    let raw_t: Vec<T> = grid.iter().map(|&s| T::lit(s)).collect();
    let row: BTreeMap<&str, usize> = configs.iter().enumerate().map(|(i, (c, _))| (c.as_str(), i)).collect();
    let mut raw_y = DMatrix::<T>::zeros(n, m);
    for r in ds.records() {
        let j = grid.binary_search_by(|g| g.total_cmp(&r.step)).expect("step in grid");
        raw_y[(row[r.config_id.as_str()], j)] = T::lit(r.value);
    }

    let input = InputScaler::fit(&raw_x)?;
    let progression = ProgressionScaler::fit(&raw_t)?;
    let observed: Vec<T> = mask.cells().map(|(i, j)| raw_y[(i, j)]).collect();
    let output = OutputScaler::fit(&observed)?;

    let x = input.apply(&raw_x)?;
    let t = progression.apply(&raw_t)?;
    let y = DMatrix::from_fn(n, m, |i, j| {
        if mask.is_observed(i, j) {
            output.apply(raw_y[(i, j)])
        } else {
            T::zero()
        }
    });
    Ok(PreparedData {
        data: TrainingData::new(x, t, y, mask)?,
        scalers: Scalers {
            input,
            progression,
            output,
        },
        config_ids: configs.into_iter().map(|(c, _)| c).collect(),
        steps: raw_t,
    })
}

fn data_err(line: u64, msg: impl std::fmt::Display) -> LkgpError {
    LkgpError::Data(format!("line {line}: {msg}"))
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| data_err(line, format!("cannot parse {what} {field:?} as a number")))
}

/// Reads the long-format curves CSV `config_id,hp_1,...,hp_d,step,value`.
pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols == 0 {
        return Err(LkgpError::Data("file is empty".into()));
    }
    if cols < 4 || &header[0] != "config_id" || &header[cols - 2] != "step" || &header[cols - 1] != "value" {
        return Err(LkgpError::Data(
            "line 1: header must be config_id,hp_1,...,hp_d,step,value".into(),
        ));
    }
    let d = cols - 3;
    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, u64), u64> = BTreeMap::new();
    let mut hps: BTreeMap<String, (Vec<f64>, u64)> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols {
            return Err(data_err(line, format!("expected {cols} fields, found {}", row.len())));
        }
        let config_id = row[0].to_string();
        if config_id.is_empty() {
            return Err(data_err(line, "empty config_id"));
        }
        let hyperparams = (1..=d)
            .map(|k| parse_f64(&row[k], "hyperparameter", line))
            .collect::<Result<Vec<_>>>()?;
        let step = parse_f64(&row[cols - 2], "step", line)?;
        let value = parse_f64(&row[cols - 1], "value", line)?;
        if !(step.is_finite() && value.is_finite() && hyperparams.iter().all(|v| v.is_finite())) {
            return Err(data_err(line, "non-finite number"));
        }
        if step <= 0.0 {
            return Err(data_err(line, format!("step {step} must be positive")));
        }
        if let Some(prev) = seen.insert((config_id.clone(), step.to_bits()), line) {
            return Err(data_err(
                line,
                format!("duplicate ({config_id}, step={step}); first seen on line {prev}"),
            ));
        }
        match hps.get(&config_id) {
            Some((h, first)) if *h != hyperparams => {
                return Err(data_err(
                    line,
                    format!("hyperparameters of {config_id} differ from line {first}"),
                ))
            }
            Some(_) => {}
            None => {
                hps.insert(config_id.clone(), (hyperparams.clone(), line));
            }
        }
        records.push(CurveRecord {
            config_id,
            hyperparams,
            step,
            value,
        });
    }
    if records.is_empty() {
        return Err(LkgpError::Data("dataset has no records".into()));
    }
    Dataset::new(records)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| LkgpError::Data(format!("{}: {e}", path.display())))?;
    read_csv_from(file).map_err(|e| match e {
        LkgpError::Data(msg) => LkgpError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes the dataset in canonical order.
pub fn write_csv_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["config_id".to_string()];
    header.extend((1..=ds.d()).map(|k| format!("hp_{k}")));
    header.extend(["step".to_string(), "value".to_string()]);
    w.write_record(&header)?;
    for r in ds.canonical().records() {
        let mut row = vec![r.config_id.clone()];
        row.extend(r.hyperparams.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(r.step));
        row.push(fmt_f64(r.value));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(ds, std::fs::File::create(path)?)
}
