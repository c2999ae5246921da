//! Scoring: held-out predictivity, bidirectional dissimilarities,
//! silhouette specificity, hierarchy correlation, MDS and model separation.

mod mds;
mod specificity;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ResponseProfile, Split};
use crate::error::{IatcError, Result};
use crate::stats::{nan_median, r2_columns};
use crate::transforms::{rsa_score, MappingMethod};

pub use mds::{mds_embed, MdsResult, MDS_MAX_ITER, MDS_TOL};
pub use specificity::{
    hierarchy_correlation, model_separation, silhouette_specificity, SpecificityReport,
};

/// Held-out score of one mapping direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictivity {
    /// Median test R² across target neurons (constant neurons skipped).
    pub median_r2: f64,
    pub per_neuron_r2: Vec<f64>,
}

/// Fits `method` on the training stimuli of (source, target) and scores
/// the test stimuli.
pub fn predictivity(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    method: &MappingMethod,
    split: &Split,
) -> Result<Predictivity> {
    if source.nrows() != target.nrows() {
        return Err(IatcError::dims("source and target must share stimuli"));
    }
    let map = method.fit(&source.select_rows(&split.train), &target.select_rows(&split.train))?;
    let pred = map.predict(&source.select_rows(&split.test))?;
    let per_neuron_r2 = r2_columns(&target.select_rows(&split.test), &pred);
    Ok(Predictivity {
        median_r2: nan_median(&per_neuron_r2),
        per_neuron_r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidirectionalScore {
    /// a → b
    pub forward: f64,
    /// b → a
    pub backward: f64,
    pub mean: f64,
}

pub fn bidirectional_score(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    method: &MappingMethod,
    split: &Split,
) -> Result<BidirectionalScore> {
    let forward = predictivity(a, b, method, split)?.median_r2;
    let backward = predictivity(b, a, method, split)?.median_r2;
    Ok(BidirectionalScore {
        forward,
        backward,
        mean: 0.5 * (forward + backward),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProfileLabel {
    pub subject: String,
    pub area: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub labels: Vec<ProfileLabel>,
    /// Hierarchy level of each label, carried along for hierarchy scoring.
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Dissimilarity for a bidirectional score: 1 - min(score, 1).
pub fn score_to_dissimilarity(score: f64) -> f64 {
    1.0 - score.min(1.0)
}

impl DissimilarityMatrix {
    /// Builds the symmetric matrix from per-pair bidirectional scores given
    /// for every i < j in row-major order.
    pub fn from_pair_scores(
        labels: Vec<ProfileLabel>,
        levels: Vec<f64>,
        pair_scores: &[f64],
    ) -> Result<Self> {
        let k = labels.len();
        if pair_scores.len() != k * (k - 1) / 2 || levels.len() != k {
            return Err(IatcError::dims("pair score count does not match label count"));
        }
        let mut values = vec![vec![0.0; k]; k];
        let mut idx = 0;
        for i in 0..k {
            for j in i + 1..k {
                let d = score_to_dissimilarity(pair_scores[idx]);
                values[i][j] = d;
                values[j][i] = d;
                idx += 1;
            }
        }
        Ok(DissimilarityMatrix { labels, levels, values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        for i in 0..k {
            if self.values[i].len() != k {
                return Err(IatcError::dims("dissimilarity matrix is not square"));
            }
            if self.values[i][i] != 0.0 {
                return Err(IatcError::InvalidData(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if self.values[i][j] != self.values[j][i] || !self.values[i][j].is_finite() {
                    return Err(IatcError::InvalidData(format!(
                        "dissimilarity matrix not symmetric/finite at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How a pair of profiles is turned into a similarity score.
#[derive(Debug, Clone, PartialEq)]
pub enum PairScorer {
    /// Bidirectional held-out predictivity under a mapping method.
    Mapping(MappingMethod),
    /// RSA over all stimuli; no fitting involved.
    Rsa { squared: bool },
}

impl PairScorer {
    pub fn score(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, split: &Split) -> Result<f64> {
        match self {
            PairScorer::Mapping(m) => Ok(bidirectional_score(a, b, m, split)?.mean),
            PairScorer::Rsa { squared } => rsa_score(a, b, *squared),
        }
    }
}

/// All-pairs dissimilarities between `profiles`. Pairs are scored in
/// parallel on the current rayon pool and merged in index order.
pub fn dissimilarity_matrix(
    profiles: &[&ResponseProfile],
    scorer: &PairScorer,
    split: &Split,
) -> Result<DissimilarityMatrix> {
    let k = profiles.len();
    if k < 2 {
        return Err(IatcError::InvalidData("dissimilarity matrix needs at least 2 profiles".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| scorer.score(profiles[i].matrix.values(), profiles[j].matrix.values(), split))
        .collect::<Result<Vec<f64>>>()?;
    DissimilarityMatrix::from_pair_scores(
        profiles
            .iter()
            .map(|p| ProfileLabel {
                subject: p.subject_id.clone(),
                area: p.area_id.clone(),
            })
            .collect(),
        profiles.iter().map(|p| p.hierarchy_level).collect(),
        &scores,
    )
}
