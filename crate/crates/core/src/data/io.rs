//! On-disk dataset format: a directory holding `manifest.json` plus one CSV
//! per profile (header row of neuron ids, one row per stimulus in manifest
//! order) and optional per-trial CSVs in the same layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{PopulationDataset, ResponseMatrix, ResponseProfile, Stage, TrialTensor};
use crate::error::{IatcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestProfile {
    pub subject: String,
    pub area: String,
    pub hierarchy_level: f64,
    #[serde(default)]
    pub stage: Stage,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_files: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncsnr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stimulus_ids: Vec<String>,
    pub profiles: Vec<ManifestProfile>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub const MANIFEST: &str = "manifest.json";

/// Reads a CSV response file, checking its shape against the manifest.
fn read_csv(path: &Path, expected_rows: usize) -> Result<(Vec<String>, DMatrix<f64>)> {
    let csv_err = |message: String| IatcError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let n = header.len();
    let file = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(expected_rows);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IatcError::DimensionMismatch {
            context: Some(file.clone()),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(n);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                csv_err(format!("unparsable value {cell:?} at row {}, column {}", r + 1, c + 1))
            })?;
            if !v.is_finite() {
                return Err(IatcError::NonFinite {
                    file: file.clone(),
                    row: r + 1,
                    column: c + 1,
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() != expected_rows {
        return Err(IatcError::DimensionMismatch {
            context: Some(file),
            message: format!(
                "manifest declares {expected_rows} stimuli but file has {} rows",
                rows.len()
            ),
        });
    }
    Ok((header, DMatrix::from_fn(expected_rows, n, |i, j| rows[i][j])))
}

fn write_csv(path: &Path, neuron_ids: &[String], values: &DMatrix<f64>) -> Result<()> {
    let csv_err = |e: csv::Error| IatcError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(neuron_ids).map_err(csv_err)?;
    for i in 0..values.nrows() {
        // 17 significant digits reproduces every f64 exactly.
        w.write_record(values.row(i).iter().map(|v| format!("{v:.16e}")))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| IatcError::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<PopulationDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(IatcError::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| IatcError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IatcError::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let s = manifest.stimulus_ids.len();
    let mut profiles = Vec::with_capacity(manifest.profiles.len());
    for mp in &manifest.profiles {
        let (ids, values) = read_csv(&dir.join(&mp.file), s)?;
        let matrix = ResponseMatrix::new(values, manifest.stimulus_ids.clone(), ids).map_err(
            |e| match e {
                IatcError::NonFinite { row, column, .. } => IatcError::NonFinite {
                    file: mp.file.clone(),
                    row,
                    column,
                },
                IatcError::DimensionMismatch { message, .. } => IatcError::DimensionMismatch {
                    context: Some(mp.file.clone()),
                    message,
                },
                other => other,
            },
        )?;
        let mut profile =
            ResponseProfile::new(matrix, &mp.subject, &mp.area, mp.hierarchy_level, mp.stage);
        if let Some(files) = &mp.trial_files {
            let mut trials = Vec::with_capacity(files.len());
            for f in files {
                let (ids, values) = read_csv(&dir.join(f), s)?;
                if ids != profile.matrix.neuron_ids() {
                    return Err(IatcError::DimensionMismatch {
                        context: Some(f.clone()),
                        message: "trial file neuron ids differ from the profile's".into(),
                    });
                }
                trials.push(values);
            }
            let counts = trials.iter().all(|m| m.iter().all(|v| *v >= 0.0));
            profile = profile.with_trials(TrialTensor::new(trials, counts)?)?;
        }
        if let Some(ncsnr) = &mp.ncsnr {
            profile = profile.with_ncsnr(ncsnr.clone())?;
        }
        profiles.push(profile);
    }
    PopulationDataset::new(profiles, manifest.metadata)
}

fn profile_stem(p: &ResponseProfile) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect::<String>()
    };
    format!("{}__{}__{}", clean(&p.subject_id), clean(&p.area_id), p.stage)
}

/// Writes `dataset` to `dir` (created if needed). Returns the manifest path.
pub fn save_dataset(dataset: &PopulationDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IatcError::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.profiles().len());
    for p in dataset.profiles() {
        let stem = profile_stem(p);
        let file = format!("{stem}.csv");
        write_csv(&dir.join(&file), p.matrix.neuron_ids(), p.matrix.values())?;
        let trial_files = match &p.trials {
            Some(t) => {
                let mut names = Vec::with_capacity(t.trial_count());
                for (k, m) in t.trials().iter().enumerate() {
                    let name = format!("{stem}__trial{k:03}.csv");
                    write_csv(&dir.join(&name), p.matrix.neuron_ids(), m)?;
                    names.push(name);
                }
                Some(names)
            }
            None => None,
        };
        entries.push(ManifestProfile {
            subject: p.subject_id.clone(),
            area: p.area_id.clone(),
            hierarchy_level: p.hierarchy_level,
            stage: p.stage,
            file,
            trial_files,
            ncsnr: p.ncsnr.clone(),
        });
    }
    let manifest = Manifest {
        stimulus_ids: dataset.stimulus_ids().to_vec(),
        profiles: entries,
        metadata: dataset.metadata.clone(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IatcError::Serialization(e.to_string()))?;
    fs::write(&path, text).map_err(|e| IatcError::io(&path, e))?;
    Ok(path)
}
