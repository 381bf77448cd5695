//! CSV ingestion. The input has a header row; status is coded 0 (censored)
//! or 1 (event) and arm 0 (control) or 1 (treatment).

use std::path::Path;

use nalgebra::DMatrix;
use pseudosurv::surv::{Covariates, SurvivalDataset};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub time: String,
    pub status: String,
    /// `None` codes every subject as arm 0.
    pub arm: Option<String>,
    pub covariates: Vec<String>,
}

fn column(headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
        let have: Vec<&str> = headers.iter().map(str::trim).collect();
        CliError::Data(format!("column '{name}' not found; the header has: {}", have.join(", ")))
    })
}

fn field(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> CliResult<f64> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("line {line}: column '{name}' has non-numeric value '{raw}'")))
}

fn binary(v: f64, name: &str, line: u64) -> CliResult<u8> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(CliError::Data(format!("line {line}: column '{name}' must be 0 or 1, got {v}")))
    }
}

pub fn read_dataset(path: &Path, map: &ColumnMap) -> CliResult<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let ti = column(&headers, &map.time)?;
    let si = column(&headers, &map.status)?;
    let ai = map.arm.as_deref().map(|a| column(&headers, a)).transpose()?;
    let ci: Vec<usize> = map.covariates.iter().map(|c| column(&headers, c)).collect::<CliResult<_>>()?;

    let (mut time, mut event, mut arm, mut cov) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("line {line}: malformed row: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = field(&rec, ti, &map.time, line)?;
        if t <= 0.0 {
            return Err(CliError::Data(format!("line {line}: time must be positive, got {t}")));
        }
        time.push(t);
        event.push(binary(field(&rec, si, &map.status, line)?, &map.status, line)? == 1);
        arm.push(match (ai, &map.arm) {
            (Some(i), Some(name)) => binary(field(&rec, i, name, line)?, name, line)?,
            _ => 0,
        });
        for (&i, name) in ci.iter().zip(&map.covariates) {
            cov.push(field(&rec, i, name, line)?);
        }
    }
    if time.is_empty() {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    let covariates = (!ci.is_empty()).then(|| Covariates {
        names: map.covariates.clone(),
        values: DMatrix::from_row_slice(time.len(), ci.len(), &cov),
    });
    Ok(SurvivalDataset::with_covariates(time, event, arm, covariates)?)
}
