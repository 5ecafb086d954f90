use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LkgpError, Result};
use crate::kernels::ProductKernelParams;
use crate::linalg::{CgConfig, ProjectionMask};
use crate::model::{Backend, FitReport, LkgpModel, TrainingData};
use crate::scalar::Scalar;
use crate::transforms::Scalers;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk layout. Floats are written in shortest round-trip form, so
/// reading a file back yields bit-identical values.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelFile<T: Scalar> {
    format_version: u32,
    scalar: String,
    params: ProductKernelParams<T>,
    scalers: Scalers<T>,
    config_ids: Vec<String>,
    steps: Vec<T>,
    /// Transformed configurations, one row per config.
    x: Vec<Vec<T>>,
    /// Transformed progression grid.
    t: Vec<T>,
    mask: Vec<Vec<bool>>,
    /// Standardized observed values in config-major order.
    y_observed: Vec<T>,
    backend: Backend,
    cg: CgConfig,
    dense_cap: usize,
    seed: u64,
    fit_report: Option<FitReport>,
}

pub fn write_model<T: Scalar, W: Write>(model: &LkgpModel<T>, writer: W) -> Result<()> {
    let data = &model.data;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        scalar: T::NAME.to_string(),
        params: model.params.clone(),
        scalers: model.scalers.clone(),
        config_ids: model.config_ids.clone(),
        steps: model.steps.clone(),
        x: data.x().row_iter().map(|r| r.iter().copied().collect()).collect(),
        t: data.t().to_vec(),
        mask: (0..data.n())
            .map(|i| (0..data.m()).map(|j| data.mask().is_observed(i, j)).collect())
            .collect(),
        y_observed: data.observed().as_slice().to_vec(),
        backend: model.backend,
        cg: model.cg,
        dense_cap: model.dense_cap,
        seed: model.seed,
        fit_report: model.fit_report.clone(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(reader: R) -> Result<LkgpModel<T>> {
    let value: serde_json::Value = serde_json::from_reader(reader)?;
    let version = value
        .get("format_version")
        .ok_or_else(|| LkgpError::Schema("missing format_version".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| LkgpError::Schema("format_version must be an integer".into()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(LkgpError::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile<T> = serde_json::from_value(value).map_err(|e| LkgpError::Schema(e.to_string()))?;
    if file.scalar != T::NAME {
        return Err(LkgpError::Schema(format!(
            "model stores {} scalars, requested {}",
            file.scalar,
            T::NAME
        )));
    }
    let schema = |e: LkgpError| LkgpError::Schema(e.to_string());
    let mask = ProjectionMask::from_rows(&file.mask).map_err(schema)?;
    let (n, m) = (mask.n(), mask.m());
    if file.x.len() != n || file.config_ids.len() != n {
        return Err(LkgpError::Schema("config count does not match mask rows".into()));
    }
    if file.steps.len() != m || file.t.len() != m {
        return Err(LkgpError::Schema("grid length does not match mask columns".into()));
    }
    if file.y_observed.len() != mask.count() {
        return Err(LkgpError::Schema("observed value count does not match mask".into()));
    }
    let d = file.params.dim();
    if file.x.iter().any(|r| r.len() != d) || file.scalers.input.dim() != d {
        return Err(LkgpError::Schema("hyperparameter dimension mismatch".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, k| file.x[i][k]);
    let mut y = DMatrix::zeros(n, m);
    for ((i, j), &v) in mask.cells().collect::<Vec<_>>().into_iter().zip(&file.y_observed) {
        y[(i, j)] = v;
    }
    let data = TrainingData::new(x, file.t, y, mask).map_err(schema)?;
    let scal = &file.scalers;
    let stats_ok = scal.output.y_std > T::zero()
        && scal.output.y_max.is_finite_val()
        && scal.progression.log_span > T::zero()
        && scal.input.range.iter().all(|r| *r >= T::zero());
    if !stats_ok {
        return Err(LkgpError::Schema("invalid scaler statistics".into()));
    }
    file.cg.validate().map_err(schema)?;
    Ok(LkgpModel {
        params: file.params,
        data,
        scalers: file.scalers,
        config_ids: file.config_ids,
        steps: file.steps,
        backend: file.backend,
        cg: file.cg,
        dense_cap: file.dense_cap,
        seed: file.seed,
        fit_report: file.fit_report,
    })
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn save_model<T: Scalar>(model: &LkgpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_model(model, &mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<LkgpModel<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_model(std::io::BufReader::new(file))
}
