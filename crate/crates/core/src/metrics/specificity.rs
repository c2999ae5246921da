use serde::{Deserialize, Serialize};

use super::{DissimilarityMatrix, ProfileLabel};
use crate::error::{IatcError, Result};
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub silhouette_mean: f64,
    pub per_profile: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy_correlation: Option<f64>,
}

/// Silhouette over a dissimilarity matrix: for each profile, a = mean
/// dissimilarity to the other profiles of its area, b = mean dissimilarity
/// to every profile of the other areas, s = (b - a) / max(a, b).
pub fn silhouette_specificity(
    d: &DissimilarityMatrix,
    area_of: impl Fn(&ProfileLabel) -> String,
) -> Result<SpecificityReport> {
    d.validate()?;
    let areas: Vec<String> = d.labels.iter().map(&area_of).collect();
    let mut distinct = areas.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(IatcError::InvalidData("silhouette needs at least 2 areas".into()));
    }
    let singletons: Vec<&String> = distinct
        .iter()
        .filter(|a| areas.iter().filter(|x| x == a).count() < 2)
        .collect();
    if !singletons.is_empty() {
        return Err(IatcError::InvalidData(format!(
            "areas with a single profile: {singletons:?}"
        )));
    }
    let k = d.len();
    let per_profile: Vec<f64> = (0..k)
        .map(|i| {
            let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
            for j in 0..k {
                if j == i {
                    continue;
                }
                if areas[j] == areas[i] {
                    sa += d.get(i, j);
                    na += 1;
                } else {
                    sb += d.get(i, j);
                    nb += 1;
                }
            }
            let a = sa / na as f64;
            let b = sb / nb as f64;
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(SpecificityReport {
        silhouette_mean: per_profile.iter().sum::<f64>() / k as f64,
        per_profile,
        hierarchy_correlation: None,
    })
}

/// Pearson correlation across unordered profile pairs between dissimilarity
/// and |level_i - level_j|.
pub fn hierarchy_correlation(
    d: &DissimilarityMatrix,
    level_of: impl Fn(usize, &ProfileLabel) -> f64,
) -> Result<f64> {
    d.validate()?;
    let k = d.len();
    let levels: Vec<f64> = d.labels.iter().enumerate().map(|(i, l)| level_of(i, l)).collect();
    let mut dis = Vec::new();
    let mut dist = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            dis.push(d.get(i, j));
            dist.push((levels[i] - levels[j]).abs());
        }
    }
    if dis.len() < 3 {
        return Err(IatcError::InvalidData("hierarchy correlation needs at least 3 pairs".into()));
    }
    let r = pearson(&dis, &dist);
    if !r.is_finite() {
        return Err(IatcError::InvalidData(
            "zero variance in dissimilarities or level distances".into(),
        ));
    }
    Ok(r)
}

/// Mean over model pairs and layers of |score_m1,l - score_m2,l|.
/// `scores[m][l]` is model m's brain similarity at layer l.
pub fn model_separation(scores: &[Vec<f64>]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(IatcError::InvalidData("model separation needs at least 2 models".into()));
    }
    let layers = scores[0].len();
    if layers == 0 || scores.iter().any(|s| s.len() != layers) {
        return Err(IatcError::dims("models have mismatched layer counts"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..scores.len() {
        for b in a + 1..scores.len() {
            for l in 0..layers {
                total += (scores[a][l] - scores[b][l]).abs();
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(spec: &[(&str, &str)]) -> Vec<ProfileLabel> {
        spec.iter()
            .map(|(s, a)| ProfileLabel { subject: s.to_string(), area: a.to_string() })
            .collect()
    }

    fn two_by_two(same: f64, cross: f64) -> DissimilarityMatrix {
        // order: (s0,A) (s1,A) (s0,B) (s1,B)
        let v = |i: usize, j: usize| {
            if i == j {
                0.0
            } else if i / 2 == j / 2 {
                same
            } else {
                cross
            }
        };
        DissimilarityMatrix {
            labels: labels(&[("s0", "A"), ("s1", "A"), ("s0", "B"), ("s1", "B")]),
            levels: vec![1.0, 1.0, 2.0, 2.0],
            values: (0..4).map(|i| (0..4).map(|j| v(i, j)).collect()).collect(),
        }
    }

    #[test]
    fn hand_evaluated_silhouette() {
        let r = silhouette_specificity(&two_by_two(0.2, 0.8), |l| l.area.clone()).unwrap();
        for s in &r.per_profile {
            assert!((s - 0.75).abs() < 1e-12);
        }
        assert!((r.silhouette_mean - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_null_separation() {
        let r = silhouette_specificity(&two_by_two(0.0, 0.5), |l| l.area.clone()).unwrap();
        assert_eq!(r.silhouette_mean, 1.0);
        let r = silhouette_specificity(&two_by_two(0.4, 0.4), |l| l.area.clone()).unwrap();
        assert_eq!(r.silhouette_mean, 0.0);
    }

    #[test]
    fn singleton_area_is_an_error() {
        let mut d = two_by_two(0.2, 0.8);
        d.labels[3].area = "C".into();
        let err = silhouette_specificity(&d, |l| l.area.clone()).unwrap_err();
        assert!(err.to_string().contains("\"B\"") && err.to_string().contains("\"C\""));
    }

    fn level_matrix(f: impl Fn(f64) -> f64) -> DissimilarityMatrix {
        let levels = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let names = ["L1", "L1", "L2", "L2", "L3", "L3"];
        DissimilarityMatrix {
            labels: (0..6)
                .map(|i| ProfileLabel { subject: format!("s{}", i % 2), area: names[i].into() })
                .collect(),
            levels: levels.to_vec(),
            values: (0..6)
                .map(|i| {
                    (0..6)
                        .map(|j| if i == j { 0.0 } else { f((levels[i] - levels[j]).abs()) })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn hierarchy_correlation_extremes() {
        let d = level_matrix(|x| x);
        assert!((hierarchy_correlation(&d, |i, _| d.levels[i]).unwrap() - 1.0).abs() < 1e-12);
        let d = level_matrix(|x| 5.0 - x);
        assert!((hierarchy_correlation(&d, |i, _| d.levels[i]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hierarchy_correlation_is_affine_invariant() {
        let d = level_matrix(|x| (x + 0.3).sqrt());
        let base = hierarchy_correlation(&d, |i, _| d.levels[i]).unwrap();
        let moved = hierarchy_correlation(&d, |i, _| 3.0 * d.levels[i] - 7.0).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn separation_examples() {
        assert_eq!(model_separation(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap(), 0.0);
        assert!((model_separation(&[vec![0.9], vec![0.5]]).unwrap() - 0.4).abs() < 1e-12);
        // pairs: |1-0.5|, |1-0|, |0.5-0|
        let three = model_separation(&[vec![1.0], vec![0.5], vec![0.0]]).unwrap();
        assert!((three - 2.0 / 3.0).abs() < 1e-12);
        assert!(model_separation(&[vec![1.0], vec![0.5, 0.2]]).is_err());
    }
}
