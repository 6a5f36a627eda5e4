//! Calibration curves as CSV.
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a write/read cycle is exact. The covariance between
//! thresholds does not fit the table and goes to a JSON companion file
//! (`curve.csv` → `curve.cov.json`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::CalibrationCurve;

pub const CURVE_HEADER: &str = "T,eta_meas,eta_err,eta_pred,noise_meas,noise_err,noise_pred";
const VALIDITY_COLUMN: &str = "below_validity";

/// CSV text of a curve. With `flag_validity` an eighth column marks
/// thresholds below `μ + 2σ` with `1`.
pub fn curve_to_csv(curve: &CalibrationCurve, flag_validity: bool) -> Result<String> {
    curve.validate()?;
    let mut out = String::from(CURVE_HEADER);
    if flag_validity {
        out.push(',');
        out.push_str(VALIDITY_COLUMN);
    }
    out.push('\n');
    for i in 0..curve.len() {
        let row = [
            curve.thresholds[i],
            curve.eta_measured[i],
            curve.eta_uncert[i],
            curve.eta_predicted[i],
            curve.noise_measured[i],
            curve.noise_uncert[i],
            curve.noise_predicted[i],
        ];
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        if flag_validity {
            write!(out, ",{}", u8::from(curve.below_validity[i])).expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_curve_csv(curve: &CalibrationCurve, path: &Path) -> Result<()> {
    write_csv_text(&curve_to_csv(curve, false)?, path)
}

/// As [`write_curve_csv`] with the extra validity column.
pub fn write_curve_csv_flagged(curve: &CalibrationCurve, path: &Path) -> Result<()> {
    write_csv_text(&curve_to_csv(curve, true)?, path)
}

fn write_csv_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses CSV text written by [`curve_to_csv`] (with or without the
/// validity column). The covariance cross-check is not stored and reads
/// back as NaN.
pub fn parse_curve_csv(text: &str) -> Result<CalibrationCurve> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let flagged = match header.trim_end_matches('\r') {
        h if h == CURVE_HEADER => false,
        h if h.strip_prefix(CURVE_HEADER) == Some(&format!(",{VALIDITY_COLUMN}")) => true,
        h => return Err(Error::Parse(format!("unexpected CSV header {h:?}"))),
    };
    let columns = if flagged { 8 } else { 7 };
    let mut curve = CalibrationCurve::default();
    for (n, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns {
            return Err(Error::Parse(format!(
                "CSV line {}: {} fields, expected {columns}",
                n + 2,
                cells.len()
            )));
        }
        let v = cells[..7]
            .iter()
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("CSV line {}: {c:?}: {e}", n + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        curve.thresholds.push(v[0]);
        curve.eta_measured.push(v[1]);
        curve.eta_uncert.push(v[2]);
        curve.eta_predicted.push(v[3]);
        curve.noise_measured.push(v[4]);
        curve.noise_uncert.push(v[5]);
        curve.noise_predicted.push(v[6]);
        curve
            .below_validity
            .push(match cells.get(7).map(|c| c.trim()) {
                None | Some("0") => false,
                Some("1") => true,
                Some(other) => {
                    return Err(Error::Parse(format!(
                        "CSV line {}: bad flag {other:?}",
                        n + 2
                    )))
                }
            });
        curve.eta_cross_check.push(f64::NAN);
    }
    Ok(curve)
}

pub fn read_curve_csv(path: &Path) -> Result<CalibrationCurve> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_curve_csv(&text)
}

/// Contents of the covariance companion of a curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveCovariance {
    thresholds: Vec<f64>,
    eta: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    resamples: usize,
}

/// Path of the covariance companion of a curve table.
pub fn covariance_path(csv: &Path) -> PathBuf {
    csv.with_extension("cov.json")
}

pub fn write_curve_covariance(curve: &CalibrationCurve, path: &Path) -> Result<()> {
    curve.validate()?;
    let cov = CurveCovariance {
        thresholds: curve.thresholds.clone(),
        eta: curve.eta_covariance.clone(),
        noise: curve.noise_covariance.clone(),
        resamples: curve.covariance_resamples,
    };
    let mut text = serde_json::to_string_pretty(&cov).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Attaches the covariances stored at `path` to a curve read from CSV.
pub fn read_curve_covariance(curve: &mut CalibrationCurve, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let cov: CurveCovariance = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if cov.thresholds != curve.thresholds {
        return Err(Error::Parse(format!(
            "{}: thresholds differ from the curve table",
            path.display()
        )));
    }
    curve.eta_covariance = cov.eta;
    curve.noise_covariance = cov.noise;
    curve.covariance_resamples = cov.resamples;
    curve
        .validate()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
