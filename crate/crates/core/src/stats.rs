//! Small descriptive statistics shared by the scoring code.

use nalgebra::{DMatrix, DVectorView};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pearson correlation. Returns NaN when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn pearson_view(x: DVectorView<f64>, y: DVectorView<f64>) -> f64 {
    pearson(x.as_slice(), y.as_slice())
}

/// Coefficient of determination 1 - SSE/SS_tot, unclipped. NaN for a
/// constant target.
pub fn r2(truth: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    let sse: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    if ss_tot <= 0.0 {
        return f64::NAN;
    }
    1.0 - sse / ss_tot
}

/// Per-column R² between two equally shaped matrices.
pub fn r2_columns(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(truth.shape(), pred.shape());
    (0..truth.ncols())
        .map(|j| r2(truth.column(j).as_slice(), pred.column(j).as_slice()))
        .collect()
}

/// Per-column Pearson correlation between two equally shaped matrices.
pub fn pearson_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape());
    (0..a.ncols())
        .map(|j| pearson(a.column(j).as_slice(), b.column(j).as_slice()))
        .collect()
}

/// Median of the finite entries; NaN if there are none.
pub fn nan_median(x: &[f64]) -> f64 {
    let mut v: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| mean(m.column(j).as_slice())).collect()
}

/// Column population standard deviations.
pub fn column_stds(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| std_dev(m.column(j).as_slice()))
        .collect()
}
