//! Metric multidimensional scaling by SMACOF (iterated Guttman transform).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DissimilarityMatrix;
use crate::rng::rng_from_seed;

pub const MDS_MAX_ITER: usize = 300;
pub const MDS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsResult {
    /// One row of `dims` coordinates per label.
    pub coords: Vec<Vec<f64>>,
    /// Raw stress: sum over pairs of (embedded distance - dissimilarity)².
    pub stress: f64,
    /// Stress after the random start and after every iteration.
    pub stress_trace: Vec<f64>,
}

fn distances(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn stress(delta: &[Vec<f64>], d: &[Vec<f64>]) -> f64 {
    let n = delta.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (d[i][j] - delta[i][j]).powi(2);
        }
    }
    s
}

/// Embeds the dissimilarities in `dims` dimensions starting from a seeded
/// Gaussian configuration. Stops after [`MDS_MAX_ITER`] iterations or when
/// the relative stress decrease drops below [`MDS_TOL`].
pub fn mds_embed(d: &DissimilarityMatrix, dims: usize, seed: u64) -> MdsResult {
    let delta = &d.values;
    let n = delta.len();
    let mut rng = rng_from_seed(seed);
    let mean_delta = if n > 1 {
        delta.iter().flatten().sum::<f64>() / (n * (n - 1)) as f64
    } else {
        0.0
    };
    let spread = if mean_delta > 0.0 { mean_delta } else { 1.0 };
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dims)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spread * z
                })
                .collect()
        })
        .collect();
    let mut dist = distances(&x);
    let mut current = stress(delta, &dist);
    let mut trace = vec![current];
    for _ in 0..MDS_MAX_ITER {
        if current == 0.0 {
            break;
        }
        let mut next = vec![vec![0.0; dims]; n];
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if j == i || dist[i][j] == 0.0 {
                    continue;
                }
                let b = delta[i][j] / dist[i][j];
                diag += b;
                for k in 0..dims {
                    next[i][k] -= b * x[j][k];
                }
            }
            for k in 0..dims {
                next[i][k] = (next[i][k] + diag * x[i][k]) / n as f64;
            }
        }
        let next_dist = distances(&next);
        let next_stress = stress(delta, &next_dist);
        let rel = (current - next_stress) / current;
        x = next;
        dist = next_dist;
        current = next_stress;
        trace.push(current);
        if rel < MDS_TOL {
            break;
        }
    }
    MdsResult {
        coords: x,
        stress: current,
        stress_trace: trace,
    }
}
