use iatc::data::kfold;
use iatc::rng::rng_from_seed;
use iatc::stats::{column_means, column_stds, r2_columns};
use iatc::transforms::{
    default_lambda_grid, fit_approx_zippering, fit_exact_zippering, fit_lasso, fit_lasso_fixed, fit_mlp,
    fit_ridge, fit_soft_matching, ridge_weights, rsa_score, softplus, LassoOptions, MapParams, Mlp,
    MlpOptions, SoftMatchingOptions, TransportPlan,
};
use iatc::IatcError;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_r2(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> f64 {
    mean(&r2_columns(truth, pred))
}

fn add_row(mut m: DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    for (j, bj) in b.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(*bj);
    }
    m
}

fn rows(n: usize, from: usize, to: usize) -> Vec<usize> {
    (from..to.min(n)).collect()
}

/// Ridge by the normal equations on centered data, independent of the SVD path.
fn normal_equations(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
    let xm = column_means(x);
    let ym = column_means(y);
    let xc = add_row(x.clone(), &xm.iter().map(|v| -v).collect::<Vec<_>>());
    let yc = add_row(y.clone(), &ym.iter().map(|v| -v).collect::<Vec<_>>());
    let gram = xc.tr_mul(&xc) + DMatrix::identity(x.ncols(), x.ncols()) * lambda;
    let w = gram.cholesky().expect("positive definite").solve(&xc.tr_mul(&yc));
    let b = (0..y.ncols())
        .map(|j| ym[j] - (0..x.ncols()).map(|i| xm[i] * w[(i, j)]).sum::<f64>())
        .collect();
    (w, b)
}

#[test]
fn ridge_recovers_identity_and_affine_maps() {
    let x = gaussian(300, 6, 1);
    let a = gaussian(6, 4, 2);
    let cases = [x.clone(), add_row(&x * &a, &[1.0, -2.0, 0.5, 3.0])];
    for y in cases {
        let (train, test) = (rows(300, 0, 240), rows(300, 240, 300));
        let map = fit_ridge(&x.select_rows(&train), &y.select_rows(&train), &default_lambda_grid(), 5, 3).unwrap();
        let pred = map.predict(&x.select_rows(&test)).unwrap();
        let r2 = r2_columns(&y.select_rows(&test), &pred);
        assert!(r2.iter().all(|v| *v >= 0.999), "{r2:?}");
    }
}

#[test]
fn ridge_weights_match_normal_equations() {
    let x = gaussian(40, 5, 4);
    let y = add_row(&x * gaussian(5, 3, 5) + gaussian(40, 3, 6) * 0.3, &[2.0, 0.0, -1.0]);
    for lambda in [1e-6, 0.3, 10.0, 1e3] {
        let got = ridge_weights(&x, &y, lambda).unwrap();
        let (w, b) = normal_equations(&x, &y, lambda);
        assert!((got.weight_matrix() - &w).amax() < 1e-9, "λ = {lambda}");
        for (g, e) in got.intercept.iter().zip(&b) {
            assert!((g - e).abs() < 1e-9);
        }
    }
}

#[test]
fn ridge_cross_validation_matches_exhaustive_oracle() {
    let x = gaussian(20, 5, 7);
    let y = &x * gaussian(5, 3, 8) + gaussian(20, 3, 9) * 0.1;
    let grid = default_lambda_grid();
    let (folds, seed) = (5, 13);
    let map = fit_ridge(&x, &y, &grid, folds, seed).unwrap();

    let parts = kfold(20, folds, seed).unwrap();
    let oracle: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let per_fold: Vec<f64> = parts
                .iter()
                .map(|(fit, held)| {
                    let (w, b) = normal_equations(&x.select_rows(fit), &y.select_rows(fit), l);
                    let pred = add_row(x.select_rows(held) * w, &b);
                    mean_r2(&y.select_rows(held), &pred)
                })
                .collect();
            mean(&per_fold)
        })
        .collect();
    let got = map.diagnostics.cv_scores.clone().unwrap();
    for (g, o) in got.iter().zip(&oracle) {
        assert!((g - o).abs() < 1e-8, "{g} vs {o}");
    }
    let best = oracle
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| grid[i])
        .unwrap();
    assert_eq!(map.diagnostics.selected_regularization, Some(best));
}

#[test]
fn ridge_shrinks_to_the_mean_under_a_huge_penalty() {
    let x = gaussian(50, 4, 10);
    let y = add_row(&x * gaussian(4, 2, 11), &[5.0, -3.0]);
    let p = ridge_weights(&x, &y, 1e14).unwrap();
    assert!(p.weight_matrix().amax() < 1e-8);
    let pred = p.apply(&x).unwrap();
    let ym = column_means(&y);
    for j in 0..2 {
        assert!(pred.column(j).iter().all(|v| (v - ym[j]).abs() < 1e-6));
    }
}

#[test]
fn ridge_rejects_constant_design() {
    let x = DMatrix::from_element(30, 3, 2.0);
    let y = gaussian(30, 2, 12);
    assert!(matches!(
        fit_ridge(&x, &y, &default_lambda_grid(), 5, 0),
        Err(IatcError::DegenerateDesign(_))
    ));
}

#[test]
fn lasso_recovers_a_sparse_support() {
    let x = gaussian(500, 50, 13);
    let noise = gaussian(500, 1, 14) * 0.1;
    let y = DMatrix::from_fn(500, 1, |i, _| 2.0 * x[(i, 3)] - 1.5 * x[(i, 17)] + noise[(i, 0)]);
    let grid = [0.3, 0.1, 0.05, 0.02];
    let map = fit_lasso(&x, &y, &grid, 5, 1, false, &LassoOptions::default()).unwrap();
    let MapParams::Linear(p) = &map.params else { panic!("linear map expected") };
    let support: Vec<usize> = (0..50).filter(|&i| p.weights[i][0].abs() > 1e-3).collect();
    assert!(support.contains(&3) && support.contains(&17), "{support:?}");
    let spurious: f64 = (0..50).filter(|i| *i != 3 && *i != 17).map(|i| p.weights[i][0].abs()).sum();
    assert!(spurious < 0.1, "{spurious}");
}

/// Nonnegative least squares by enumerating active sets (p small) for the
/// objective 1/(2n)|y - Xw|² + α Σw over w ≥ 0, centered data.
fn nonneg_lasso_oracle(xc: &DMatrix<f64>, yc: &[f64], alpha: f64) -> Vec<f64> {
    let (n, p) = xc.shape();
    let y = nalgebra::DVector::from_column_slice(yc);
    let objective = |w: &nalgebra::DVector<f64>| (&y - xc * w).norm_squared() / (2.0 * n as f64) + alpha * w.sum();
    let mut best = (objective(&nalgebra::DVector::zeros(p)), vec![0.0; p]);
    for mask in 1u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        let xs = xc.select_columns(&idx);
        // stationarity on the free set: Xsᵀ(Xs w - y)/n + α = 0
        let g = xs.tr_mul(&xs) / n as f64;
        let rhs = xs.tr_mul(&y) / n as f64 - nalgebra::DVector::from_element(idx.len(), alpha);
        let Some(ws) = g.cholesky().map(|c| c.solve(&rhs)) else { continue };
        if ws.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut w = nalgebra::DVector::zeros(p);
        for (k, i) in idx.iter().enumerate() {
            w[*i] = ws[k];
        }
        let f = objective(&w);
        if f < best.0 {
            best = (f, w.iter().copied().collect());
        }
    }
    best.1
}

#[test]
fn nonnegative_lasso_matches_active_set_oracle() {
    let x = gaussian(200, 4, 15);
    let noise = gaussian(200, 1, 16) * 0.2;
    // the second weight is negative in truth and must be clamped to zero
    let y = DMatrix::from_fn(200, 1, |i, _| 1.5 * x[(i, 0)] - 1.0 * x[(i, 1)] + 0.7 * x[(i, 2)] + noise[(i, 0)]);
    let alpha = 0.05;
    let opts = LassoOptions { max_sweeps: 100_000, tol: 1e-14 };
    let p = fit_lasso_fixed(&x, &y, alpha, true, &opts).unwrap();
    let xm = column_means(&x);
    let xc = add_row(x.clone(), &xm.iter().map(|v| -v).collect::<Vec<_>>());
    let ym = mean(y.as_slice());
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let oracle = nonneg_lasso_oracle(&xc, &yc, alpha);
    assert_eq!(p.weights[1][0], 0.0);
    for i in 0..4 {
        assert!(p.weights[i][0] >= 0.0);
        assert!((p.weights[i][0] - oracle[i]).abs() < 1e-6, "{i}: {} vs {}", p.weights[i][0], oracle[i]);
    }
}

fn plan_of(map: &iatc::transforms::FittedMap) -> &TransportPlan {
    match &map.params {
        MapParams::Transport(t) => t,
        _ => panic!("transport plan expected"),
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact optimum of max Σ T∘C over uniform-marginal plans for square C: a
/// vertex of the Birkhoff polytope, i.e. a scaled permutation.
fn assignment_oracle(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, j)| c[(i, *j)]).sum::<f64>() / n as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn soft_matching_recovers_a_neuron_permutation() {
    for n in [2usize, 4, 6] {
        let x = gaussian(200, n, 20 + n as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from_seed(n as u64));
        let y = DMatrix::from_fn(200, n, |i, j| 3.0 * x[(i, perm[j])] + 1.0);
        let map = fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap();
        let t = plan_of(&map);
        assert!((t.score - 1.0).abs() < 1e-3, "score {}", t.score);
        assert!((t.score - assignment_oracle(&t.correlation_matrix())).abs() < 1e-3);
        let plan = t.plan_matrix();
        for (j, &i) in perm.iter().enumerate() {
            assert!(plan[(i, j)] * n as f64 >= 0.9, "row mass {}", plan[(i, j)] * n as f64);
        }
        let r2 = r2_columns(&y, &map.predict(&x).unwrap());
        assert!(r2.iter().all(|v| *v >= 0.99), "{r2:?}");
    }
}

#[test]
fn soft_matching_beats_no_assignment_on_mixed_correlations() {
    let x = gaussian(300, 5, 30);
    let y = &x * gaussian(5, 5, 31) + gaussian(300, 5, 32);
    let map = fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap();
    let t = plan_of(&map);
    let oracle = assignment_oracle(&t.correlation_matrix());
    // entropic smoothing can only lose objective, and only a little
    assert!(t.score <= oracle + 1e-12);
    assert!(oracle - t.score < 1e-3, "{} vs {oracle}", t.score);
}

#[test]
fn soft_matching_plan_has_exact_marginals() {
    let x = gaussian(100, 4, 33);
    let y = &x * gaussian(4, 6, 34) + gaussian(100, 6, 35);
    let plan = plan_of(&fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap()).plan_matrix();
    for i in 0..4 {
        assert!((plan.row(i).sum() - 0.25).abs() < 1e-9);
    }
    for j in 0..6 {
        assert!((plan.column(j).sum() - 1.0 / 6.0).abs() < 1e-9);
    }
    assert!(plan.iter().all(|v| *v >= 0.0));
}

#[test]
fn soft_matching_single_neuron_is_a_scaled_regression() {
    let x = gaussian(80, 1, 36);
    let y = &x * 2.0 + gaussian(80, 1, 37) + DMatrix::from_element(80, 1, 4.0);
    let map = fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap();
    let t = plan_of(&map);
    assert!((t.plan[0][0] - 1.0).abs() < 1e-12);
    let c = t.correlation[0][0];
    let slope = c * column_stds(&y)[0] / column_stds(&x)[0];
    let probe = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let pred = map.predict(&probe).unwrap();
    assert!((pred[(1, 0)] - pred[(0, 0)] - slope).abs() < 1e-10);
}

#[test]
fn soft_matching_independent_data_scores_near_zero() {
    let x = gaussian(2000, 5, 38);
    let y = gaussian(2000, 5, 39);
    let t = plan_of(&fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap()).clone();
    assert!(t.score.abs() < 0.1, "{}", t.score);
}

#[test]
fn soft_matching_mean_source_predicts_target_means() {
    let x = gaussian(60, 3, 40);
    let y = add_row(gaussian(60, 4, 41), &[1.0, 2.0, 3.0, 4.0]);
    let map = fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap();
    let xm = column_means(&x);
    let probe = DMatrix::from_fn(3, 3, |_, j| xm[j]);
    let pred = map.predict(&probe).unwrap();
    let ym = column_means(&y);
    for i in 0..3 {
        for j in 0..4 {
            assert!((pred[(i, j)] - ym[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn soft_matching_rejects_constant_neurons() {
    let mut x = gaussian(30, 3, 42);
    x.column_mut(1).fill(0.5);
    let y = gaussian(30, 2, 43);
    assert!(matches!(
        fit_soft_matching(&x, &y, &SoftMatchingOptions::default()),
        Err(IatcError::ZeroVarianceNeuron { index: 1, .. })
    ));
}

/// Post-softplus pair sharing 4 latents, noiseless, scaled by `c`.
fn softplus_pair(s: usize, c: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = gaussian(s, 4, seed);
    let pre_x = add_row(&z * gaussian(4, 8, seed + 1) * 1.5, &[-1.0, 0.5, 0.0, -0.5, 1.0, -1.5, 0.2, 0.8]);
    let pre_y = add_row(&z * gaussian(4, 6, seed + 2) * 1.5, &[0.5, -1.0, 0.0, 1.0, -0.5, 0.3]);
    (pre_x.map(|v| c * softplus(v)), pre_y.map(|v| c * softplus(v)))
}

fn split_score(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    fit: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> iatc::Result<iatc::transforms::FittedMap>,
) -> f64 {
    let n = x.nrows();
    let (train, test) = (rows(n, 0, n * 4 / 5), rows(n, n * 4 / 5, n));
    let map = fit(&x.select_rows(&train), &y.select_rows(&train)).unwrap();
    let pred = map.predict(&x.select_rows(&test)).unwrap();
    iatc::stats::nan_median(&r2_columns(&y.select_rows(&test), &pred))
}

#[test]
fn exact_zippering_fits_noiseless_softplus_pairs() {
    let (x, y) = softplus_pair(600, 10.0, 50);
    let ridge = split_score(&x, &y, |a, b| fit_ridge(a, b, &default_lambda_grid(), 5, 0));
    let zip = split_score(&x, &y, |a, b| fit_exact_zippering(a, b, 10.0, 1e-6, true));
    assert!(zip >= 0.99, "zippering {zip}");
    assert!(zip >= ridge + 0.05, "zippering {zip} vs ridge {ridge}");
}

#[test]
fn approximate_zippering_sits_between_ridge_and_exact() {
    let (x, y) = softplus_pair(800, 10.0, 60);
    let ridge = split_score(&x, &y, |a, b| fit_ridge(a, b, &default_lambda_grid(), 5, 0));
    let approx = split_score(&x, &y, |a, b| fit_approx_zippering(a, b, 1e-6));
    let exact = split_score(&x, &y, |a, b| fit_exact_zippering(a, b, 10.0, 1e-6, true));
    assert!(ridge < approx && approx < exact, "{ridge} {approx} {exact}");
}

#[test]
fn exact_zippering_rejects_nonpositive_sources() {
    let (mut x, y) = softplus_pair(50, 1.0, 70);
    x[(7, 2)] = 0.0;
    assert!(matches!(fit_exact_zippering(&x, &y, 1.0, 1e-6, true), Err(IatcError::Domain(_))));
    // without inversion the raw source is fine
    assert!(fit_exact_zippering(&x, &y, 1.0, 1e-6, false).is_ok());
}

#[test]
fn exact_zippering_without_inversion_is_a_plain_glm() {
    let (x, y) = softplus_pair(200, 2.0, 71);
    let map = fit_exact_zippering(&x, &y, 2.0, 1e-6, false).unwrap();
    let MapParams::Glm(g) = &map.params else { panic!("glm map expected") };
    assert!(g.invert_scale.is_none() && g.power.is_none());
    let direct = iatc::glm::irls_fit(
        &x,
        y.column(0).as_slice(),
        iatc::glm::InverseLink::ScaledSoftplus { c: 2.0 },
        &iatc::glm::IrlsOptions { ridge_penalty: 1e-6, ..Default::default() },
    )
    .unwrap();
    assert_eq!(g.glms[0], direct);
}

#[test]
fn approximate_zippering_constant_target_predicts_a_constant() {
    let (x, _) = softplus_pair(100, 1.0, 72);
    let y = DMatrix::from_element(100, 2, 3.0);
    let map = fit_approx_zippering(&x, &y, 1e-6).unwrap();
    let pred = map.predict(&x).unwrap();
    for v in pred.iter() {
        assert!((v - 3.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn mlp_gradients_match_central_differences() {
    let x = gaussian(12, 3, 80);
    let y = gaussian(12, 2, 81);
    for point in 0..5u64 {
        let net = Mlp::new_random(3, &[5, 4], 2, 100 + point);
        let (_, grad) = net.loss_and_gradient(&x, &y);
        let theta = net.parameters();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut probe = net.clone();
                let mut t = theta.clone();
                t[k] += h;
                probe.set_parameters(&t);
                let up = probe.loss(&x, &y);
                t[k] -= 2.0 * h;
                probe.set_parameters(&t);
                let down = probe.loss(&x, &y);
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale < 1e-5, "point {point}: relative error {}", diff / scale);
    }
}

#[test]
fn mlp_matches_ridge_on_a_linear_target() {
    let x = gaussian(1000, 5, 82);
    let y = &x * gaussian(5, 3, 83) + gaussian(1000, 3, 84) * 0.3;
    let ridge = split_score(&x, &y, |a, b| fit_ridge(a, b, &default_lambda_grid(), 5, 0));
    let opts = MlpOptions { hidden_layout: vec![32], epochs: 200, batch: 32, lr: 1e-3, seed: 1 };
    let mlp = split_score(&x, &y, |a, b| fit_mlp(a, b, &opts));
    assert!((mlp - ridge).abs() < 0.05, "mlp {mlp} ridge {ridge}");
}

#[test]
fn mlp_with_zero_epochs_is_its_initialization() {
    let x = gaussian(40, 3, 85);
    let y = gaussian(40, 2, 86);
    let opts = MlpOptions { hidden_layout: vec![6], epochs: 0, batch: 8, lr: 1e-3, seed: 9 };
    let map = fit_mlp(&x, &y, &opts).unwrap();
    let MapParams::Mlp(net) = &map.params else { panic!("mlp expected") };
    assert_eq!(net.parameters(), Mlp::new_random(3, &[6], 2, 9).parameters());
    assert!(map.diagnostics.final_loss.is_none());
}

#[test]
fn mlp_training_is_deterministic() {
    let x = gaussian(100, 3, 87);
    let y = gaussian(100, 2, 88);
    let opts = MlpOptions { hidden_layout: vec![8], epochs: 5, batch: 16, lr: 1e-2, seed: 4 };
    assert_eq!(fit_mlp(&x, &y, &opts).unwrap(), fit_mlp(&x, &y, &opts).unwrap());
}

#[test]
fn rsa_is_invariant_to_neuron_order_and_near_zero_for_unrelated_data() {
    let a = gaussian(60, 10, 90);
    assert!((rsa_score(&a, &a, false).unwrap() - 1.0).abs() < 1e-12);
    let mut perm: Vec<usize> = (0..10).collect();
    perm.shuffle(&mut rng_from_seed(3));
    let b = a.select_columns(&perm);
    assert!((rsa_score(&a, &b, false).unwrap() - 1.0).abs() < 1e-12);
    let c = gaussian(60, 10, 91);
    assert!(rsa_score(&a, &c, false).unwrap().abs() < 0.2);
    let r = rsa_score(&a, &(&a + gaussian(60, 10, 92)), false).unwrap();
    assert!((rsa_score(&a, &(&a + gaussian(60, 10, 92)), true).unwrap() - r * r).abs() < 1e-12);
}

#[test]
fn fitted_maps_round_trip_through_json() {
    let x = gaussian(60, 3, 93);
    let y = &x * gaussian(3, 2, 94);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut rng = rng_from_seed(95);
    let y = y.map(|v| v + noise.sample(&mut rng));
    let maps = [
        fit_ridge(&x, &y, &default_lambda_grid(), 5, 0).unwrap(),
        fit_soft_matching(&x, &y, &SoftMatchingOptions::default()).unwrap(),
    ];
    for m in maps {
        let back = iatc::transforms::FittedMap::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
}

#[test]
fn yeo_johnson_brings_post_nl_responses_closer_to_pre_nl() {
    use iatc::data::Stage;
    use iatc::simulator::{generate_population, PopulationConfig};
    let ds = generate_population(&PopulationConfig {
        layers: 1,
        latent_dims: vec![6],
        neurons: 12,
        subjects: 1,
        stimuli: 800,
        trials: 10,
        ..Default::default()
    })
    .unwrap();
    let pre = ds.get("subject0", "layer1", Stage::PreNl).unwrap().matrix.values().clone();
    let post = ds.get("subject0", "layer1", Stage::PostNl).unwrap().matrix.values().clone();
    let yj = iatc::power::PowerTransformer::fit(&post).unwrap().transform(&post).unwrap();
    let raw = iatc::stats::pearson_columns(&post, &pre);
    let transformed = iatc::stats::pearson_columns(&yj, &pre);
    assert!(mean(&transformed) > mean(&raw), "{} vs {}", mean(&transformed), mean(&raw));
}
