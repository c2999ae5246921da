//! Softplus, its derivative and a numerically stable inverse.

use crate::error::{IatcError, Result};

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ln 2 split in three so that `y - ln 2` keeps full relative precision near ln 2.
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-01;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const LN2_LO2: f64 = 1.161_222_722_936_253_2e-26;

/// ln(e^y - 1) for y > 0, accurate to a few ulp in relative terms over
/// the whole positive range including the zero crossing at y = ln 2.
pub fn stable_softplus_inverse(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(IatcError::Domain(format!(
            "softplus inverse needs a finite positive argument, got {y}"
        )));
    }
    Ok(softplus_inverse_unchecked(y))
}

pub(crate) fn softplus_inverse_unchecked(y: f64) -> f64 {
    let d = ((y - LN2_HI) - LN2_LO) - LN2_LO2;
    if d.abs() < 0.25 {
        // e^y - 1 = 1 + 2 (e^d - 1)
        (2.0 * d.exp_m1()).ln_1p()
    } else if y < 1.0 {
        y.exp_m1().ln()
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}
