//! Representational similarity: compare the stimulus-by-stimulus
//! dissimilarity structure of two response matrices.

use nalgebra::DMatrix;

use crate::error::{IatcError, Result};
use crate::stats::pearson;

/// Representational dissimilarity matrix: 1 - Pearson correlation between
/// the population responses to each pair of stimuli.
pub fn rdm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (s, n) = m.shape();
    if n < 2 {
        return Err(IatcError::InvalidData(
            "RDM needs at least 2 neurons to correlate stimulus patterns".into(),
        ));
    }
    let mut z = DMatrix::zeros(n, s);
    for i in 0..s {
        let row = m.row(i);
        let mean = row.mean();
        let norm = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(IatcError::InvalidData(format!(
                "stimulus {i} evokes a constant population pattern; RDM undefined"
            )));
        }
        for j in 0..n {
            z[(j, i)] = (row[j] - mean) / norm;
        }
    }
    let corr = z.tr_mul(&z);
    Ok(corr.map(|c| 1.0 - c.clamp(-1.0, 1.0)))
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let s = m.nrows();
    let mut out = Vec::with_capacity(s * (s - 1) / 2);
    for i in 0..s {
        for j in i + 1..s {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Pearson correlation between the upper triangles of the two RDMs,
/// optionally squared.
pub fn rsa_score(a: &DMatrix<f64>, b: &DMatrix<f64>, squared: bool) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(IatcError::dims(format!(
            "RSA needs equal stimulus counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() < 3 {
        return Err(IatcError::TooFewStimuli("RSA needs at least 3 stimuli".into()));
    }
    let r = pearson(&upper_triangle(&rdm(a)?), &upper_triangle(&rdm(b)?));
    if !r.is_finite() {
        return Err(IatcError::InvalidData("zero-variance RDM".into()));
    }
    Ok(if squared { r * r } else { r })
}
