//! Zippering transforms: undo the source nonlinearity (exactly, or
//! approximately with a Yeo-Johnson transform), fit a linear map to the
//! target's pre-activation, and re-apply the activation through the inverse
//! link of a per-neuron Poisson GLM.

use nalgebra::DMatrix;

use super::softplus::softplus_inverse_unchecked;
use super::{FitDiagnostics, FittedMap, GlmMapParams, MapParams, MappingMethod};
use crate::error::{IatcError, Result};
use crate::glm::{irls_fit, GlmFit, InverseLink, IrlsOptions};
use crate::power::PowerTransformer;

fn invert_source(x: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    if let Some(k) = x.iter().position(|v| !(*v > 0.0)) {
        return Err(IatcError::Domain(format!(
            "source entry {} at row {}, column {} is not positive; cannot unscale and invert softplus",
            x[k],
            k % x.nrows() + 1,
            k / x.nrows() + 1
        )));
    }
    Ok(x.map(|v| softplus_inverse_unchecked(v / c)))
}

fn preprocess(p: &GlmMapParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != p.n_source {
        return Err(IatcError::dims(format!(
            "source has {} neurons, map expects {}",
            x.ncols(),
            p.n_source
        )));
    }
    let mut z = match p.invert_scale {
        Some(c) => invert_source(x, c)?,
        None => x.clone(),
    };
    if let Some(pt) = &p.power {
        z = pt.transform(&z)?;
    }
    Ok(z)
}

fn fit_glms(
    design: &DMatrix<f64>,
    y: &DMatrix<f64>,
    link: InverseLink,
    ridge_penalty: f64,
) -> Result<Vec<GlmFit>> {
    let opts = IrlsOptions {
        ridge_penalty,
        ..Default::default()
    };
    (0..y.ncols())
        .map(|j| irls_fit(design, y.column(j).as_slice(), link, &opts).map_err(|e| e.with_neuron(j)))
        .collect()
}

fn glm_map(
    method: MappingMethod,
    params: GlmMapParams,
    ridge_penalty: f64,
) -> FittedMap {
    let iterations = params.glms.iter().map(|g| g.iterations).max().unwrap_or(0);
    let converged = params.glms.iter().all(|g| g.converged);
    FittedMap {
        method,
        params: MapParams::Glm(params),
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            selected_regularization: Some(ridge_penalty.max(crate::glm::MIN_RIDGE_PENALTY)),
            ..Default::default()
        },
        target_neuron_ids: None,
    }
}

/// Exact Zippering for responses generated as c·softplus(pre): the source is
/// divided by `c` and passed through the softplus inverse (unless
/// `invert` is false), then each target neuron gets a Poisson GLM with
/// inverse link c·softplus.
pub fn fit_exact_zippering(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    c: f64,
    ridge_penalty: f64,
    invert: bool,
) -> Result<FittedMap> {
    if !(c > 0.0) {
        return Err(IatcError::Config(format!("softplus scale must be positive, got {c}")));
    }
    let mut params = GlmMapParams {
        invert_scale: invert.then_some(c),
        power: None,
        n_source: x.ncols(),
        glms: Vec::new(),
    };
    let design = preprocess(&params, x)?;
    params.glms = fit_glms(&design, y, InverseLink::ScaledSoftplus { c }, ridge_penalty)?;
    Ok(glm_map(
        MappingMethod::ExactZippering {
            c,
            ridge_penalty,
            invert_source: invert,
        },
        params,
        ridge_penalty,
    ))
}

/// Approximate Zippering: per-source-neuron Yeo-Johnson transform fitted on
/// the training rows, then exponential-link Poisson GLMs.
pub fn fit_approx_zippering(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ridge_penalty: f64,
) -> Result<FittedMap> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IatcError::Domain("non-finite source entry".into()));
    }
    let power = PowerTransformer::fit(x)?;
    let design = power.transform(x)?;
    let glms = fit_glms(&design, y, InverseLink::Exponential, ridge_penalty)?;
    Ok(glm_map(
        MappingMethod::ApproxZippering { ridge_penalty },
        GlmMapParams {
            invert_scale: None,
            power: Some(power),
            n_source: x.ncols(),
            glms,
        },
        ridge_penalty,
    ))
}

/// Linear-nonlinear model: softplus-link (c = 1) Poisson GLM on the raw
/// source.
pub fn fit_linear_nonlinear(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ridge_penalty: f64,
) -> Result<FittedMap> {
    let glms = fit_glms(x, y, InverseLink::ScaledSoftplus { c: 1.0 }, ridge_penalty)?;
    Ok(glm_map(
        MappingMethod::LinearNonlinear { ridge_penalty },
        GlmMapParams {
            invert_scale: None,
            power: None,
            n_source: x.ncols(),
            glms,
        },
        ridge_penalty,
    ))
}

pub(crate) fn predict_glm_map(p: &GlmMapParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let design = preprocess(p, x)?;
    let mut out = DMatrix::zeros(x.nrows(), p.glms.len());
    for (j, g) in p.glms.iter().enumerate() {
        let pred = g.predict(&design)?;
        out.column_mut(j).copy_from_slice(&pred);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_reports_the_offending_cell() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -0.5]);
        let err = invert_source(&x, 1.0).unwrap_err();
        assert!(err.to_string().contains("row 2, column 2"), "{err}");
    }

    #[test]
    fn inversion_undoes_scaled_softplus() {
        let pre = DMatrix::from_row_slice(1, 3, &[-4.0, 0.0, 7.5]);
        let x = pre.map(|v| 20.0 * crate::transforms::softplus(v));
        let back = invert_source(&x, 20.0).unwrap();
        assert!((back - pre).amax() < 1e-10);
    }

    #[test]
    fn nonpositive_scale_is_rejected() {
        let x = DMatrix::from_element(5, 1, 1.0);
        assert!(matches!(fit_exact_zippering(&x, &x, 0.0, 1e-6, true), Err(IatcError::Config(_))));
    }

    #[test]
    fn prediction_checks_source_width() {
        let x = DMatrix::from_fn(30, 2, |i, j| 1.0 + ((i * 3 + j) % 7) as f64);
        let y = DMatrix::from_fn(30, 1, |i, _| 1.0 + (i % 4) as f64);
        let map = fit_linear_nonlinear(&x, &y, 1e-4).unwrap();
        assert!(map.predict(&DMatrix::from_element(2, 3, 1.0)).is_err());
        assert_eq!(map.predict(&x).unwrap().shape(), (30, 1));
    }
}
