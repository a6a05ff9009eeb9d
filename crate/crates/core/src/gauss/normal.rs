//! Scalar standard-normal helpers with tail-accurate evaluation.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)`, accurate for large `x`.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// Inverse of [`cdf`].
#[inline]
pub fn ppf(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse of [`sf`].
#[inline]
pub fn isf(q: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * q)
}

/// Standard normal mass of `[a, b]`, computed on whichever tail keeps precision.
#[inline]
pub fn interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return 0.0;
    }
    if a > 0.0 {
        (sf(a) - sf(b)).max(0.0)
    } else if b < 0.0 {
        (cdf(b) - cdf(a)).max(0.0)
    } else {
        (1.0 - cdf(a) - sf(b)).max(0.0)
    }
}

/// Inverse-transform sample of a standard normal truncated to `[a, b]` at quantile `w`.
#[inline]
pub fn truncated_quantile(a: f64, b: f64, w: f64) -> f64 {
    let y = if a + b > 0.0 {
        // upper tail: work with survival values
        let (qa, qb) = (sf(a), sf(b));
        isf(qb + (1.0 - w) * (qa - qb))
    } else {
        let (pa, pb) = (cdf(a), cdf(b));
        ppf(pa + w * (pb - pa))
    };
    y.clamp(a, b)
}

/// Mean of a standard normal truncated to `[a, b]`.
pub fn truncated_mean(a: f64, b: f64) -> f64 {
    let mass = interval(a, b);
    if mass <= 1e-300 {
        // essentially a point mass at the nearer end
        return if a.is_finite() && (b.is_infinite() || a.abs() < b.abs()) {
            a
        } else if b.is_finite() {
            b
        } else {
            0.0
        };
    }
    (pdf(a) - pdf(b)) / mass
}
