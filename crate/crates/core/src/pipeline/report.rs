use std::path::{Path, PathBuf};

use super::EvaluationReport;
use crate::error::{IatcError, Result};

pub const REPORT_JSON: &str = "report.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const MDS_CSV: &str = "mds.csv";

const SCORE_HEADER: [&str; 7] = ["pair", "area", "method", "direction", "score", "ci_low", "ci_high"];
const MDS_HEADER: [&str; 5] = ["method", "label", "x", "y", "stress"];

fn csv_error(path: &Path, e: impl std::fmt::Display) -> IatcError {
    IatcError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json`, `scores.csv` and `mds.csv` into `dir`, creating it
/// if needed. Returns the written paths.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| IatcError::io(dir, e))?;
    let json_path = dir.join(REPORT_JSON);
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| IatcError::Serialization(e.to_string()))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| IatcError::io(&json_path, e))?;
    let mut written = vec![json_path];
    written.extend(render_csvs(report, dir)?);
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path).map_err(|e| IatcError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IatcError::Serialization(format!("{}: {e}", path.display())))
}

/// Long-format score table and MDS coordinates for external plotting.
pub fn render_csvs(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let scores_path = dir.join(SCORES_CSV);
    let mut w = csv::Writer::from_path(&scores_path).map_err(|e| csv_error(&scores_path, e))?;
    w.write_record(SCORE_HEADER).map_err(|e| csv_error(&scores_path, e))?;
    for r in &report.scores {
        w.write_record([
            r.pair.clone(),
            r.area.clone(),
            r.method.clone(),
            r.direction.clone(),
            cell(r.score),
            cell(r.ci_low),
            cell(r.ci_high),
        ])
        .map_err(|e| csv_error(&scores_path, e))?;
    }
    w.flush().map_err(|e| IatcError::io(&scores_path, e))?;

    let mds_path = dir.join(MDS_CSV);
    let mut w = csv::Writer::from_path(&mds_path).map_err(|e| csv_error(&mds_path, e))?;
    w.write_record(MDS_HEADER).map_err(|e| csv_error(&mds_path, e))?;
    for spec in &report.specificity {
        let (Some(mds), Some(d)) = (&spec.mds, &spec.dissimilarity) else {
            continue;
        };
        for (label, xy) in d.labels.iter().zip(&mds.coords) {
            w.write_record([
                spec.method.clone(),
                format!("{}/{}", label.subject, label.area),
                cell(xy.first().copied()),
                cell(xy.get(1).copied()),
                mds.stress.to_string(),
            ])
            .map_err(|e| csv_error(&mds_path, e))?;
        }
    }
    w.flush().map_err(|e| IatcError::io(&mds_path, e))?;
    Ok(vec![scores_path, mds_path])
}
