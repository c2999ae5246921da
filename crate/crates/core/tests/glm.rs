use iatc::glm::{irls_fit, InverseLink, IrlsOptions};
use iatc::rng::rng_from_seed;
use iatc::stats::r2;
use iatc::transforms::softplus;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson, StandardNormal};

fn design(s: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(s, p, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        0.5 * v
    })
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

/// Unpenalized Newton-Raphson for the canonical-link Poisson model, written
/// from the log-likelihood directly: gradient Xᵀ(y - μ), Hessian -XᵀWX.
fn newton_poisson(x: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let xa = with_intercept(x);
    let y = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(xa.ncols());
    beta[xa.ncols() - 1] = y.mean().ln();
    let mut info = DMatrix::zeros(xa.ncols(), xa.ncols());
    for _ in 0..100 {
        let mu = (&xa * &beta).map(f64::exp);
        let grad = xa.tr_mul(&(&y - &mu));
        info = xa.tr_mul(&DMatrix::from_diagonal(&mu)) * &xa;
        let step = info.clone().cholesky().expect("positive definite").solve(&grad);
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    (beta, info)
}

#[test]
fn poisson_coefficients_are_recovered_within_three_standard_errors() {
    let (s, p) = (2000, 4);
    let x = design(s, p, 1);
    let truth = [0.8, -0.5, 0.3, 0.0];
    let b0 = 1.2;
    let mut rng = rng_from_seed(2);
    let y: Vec<f64> = (0..s)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| x[(i, j)] * truth[j]).sum::<f64>() + b0;
            Poisson::new(eta.exp()).unwrap().sample(&mut rng)
        })
        .collect();
    let fit = irls_fit(&x, &y, InverseLink::Exponential, &IrlsOptions::default()).unwrap();
    assert!(fit.converged);

    let (oracle, info) = newton_poisson(&x, &y);
    let cov = info.try_inverse().unwrap();
    let mut got: Vec<f64> = fit.weights.clone();
    got.push(fit.intercept);
    let mut want = truth.to_vec();
    want.push(b0);
    for k in 0..=p {
        let se = cov[(k, k)].sqrt();
        assert!((got[k] - want[k]).abs() < 3.0 * se, "coef {k}: {} vs {} (se {se})", got[k], want[k]);
        // the tiny default penalty moves estimates far less than their error
        assert!((got[k] - oracle[k]).abs() < 1e-4 * se, "coef {k}: {} vs oracle {}", got[k], oracle[k]);
    }
}

#[test]
fn noiseless_scaled_softplus_is_recovered_exactly() {
    let (s, p, c) = (2000, 4, 50.0);
    let x = design(s, p, 3);
    let truth = [1.5, -0.7, 0.4, 1.1];
    let b0 = -0.3;
    let eta = |row: usize, x: &DMatrix<f64>| (0..p).map(|j| x[(row, j)] * truth[j]).sum::<f64>() + b0;
    let y: Vec<f64> = (0..s).map(|i| c * softplus(eta(i, &x))).collect();
    let opts = IrlsOptions {
        ridge_penalty: 0.0,
        ..Default::default()
    };
    let fit = irls_fit(&x, &y, InverseLink::ScaledSoftplus { c }, &opts).unwrap();
    for j in 0..p {
        assert!((fit.weights[j] - truth[j]).abs() < 1e-4, "{j}: {}", fit.weights[j]);
    }
    assert!((fit.intercept - b0).abs() < 1e-4);
    assert!(fit.score_residual(&x, &y, opts.effective_penalty()).unwrap() < 1e-6);

    let xt = design(500, p, 4);
    let yt: Vec<f64> = (0..500).map(|i| c * softplus(eta(i, &xt))).collect();
    assert!(r2(&yt, &fit.predict(&xt).unwrap()) >= 0.999);
}

#[test]
fn converged_fits_are_stationary() {
    let (s, p) = (2000, 4);
    let x = design(s, p, 5);
    let mut rng = rng_from_seed(6);
    for (link, penalty) in [
        (InverseLink::Exponential, 1e-8),
        (InverseLink::Exponential, 1.0),
        (InverseLink::ScaledSoftplus { c: 10.0 }, 1e-8),
        (InverseLink::ScaledSoftplus { c: 10.0 }, 1.0),
    ] {
        let y: Vec<f64> = (0..s)
            .map(|i| {
                let eta = x[(i, 0)] - 0.5 * x[(i, 2)] + 0.5;
                Poisson::new(link.mean(eta)).unwrap().sample(&mut rng)
            })
            .collect();
        let opts = IrlsOptions {
            ridge_penalty: penalty,
            ..Default::default()
        };
        let fit = irls_fit(&x, &y, link, &opts).unwrap();
        let resid = fit.score_residual(&x, &y, opts.effective_penalty()).unwrap();
        assert!(resid < 1e-6, "{link:?} penalty {penalty}: {resid}");
        assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn fits_are_deterministic() {
    let x = design(300, 3, 7);
    let y: Vec<f64> = (0..300).map(|i| (i % 5) as f64).collect();
    let a = irls_fit(&x, &y, InverseLink::ScaledSoftplus { c: 3.0 }, &IrlsOptions::default()).unwrap();
    let b = irls_fit(&x, &y, InverseLink::ScaledSoftplus { c: 3.0 }, &IrlsOptions::default()).unwrap();
    assert_eq!(a, b);
}
