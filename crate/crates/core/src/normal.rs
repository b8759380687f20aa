//! Standard-normal CDF and quantile function.
//!
//! `erfc` follows W. J. Cody's rational approximations (the SPECFUN layout),
//! accurate to a few ulp over the whole real line. The quantile starts from
//! Acklam's rational approximation and applies one Halley step against the
//! erfc-based CDF, which brings the absolute error below 1e-14; probabilities
//! above one half are reflected to the lower tail first so the correction
//! never subtracts two near-unit CDF values.

#![allow(clippy::excessive_precision)]

use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014326779399461;
const INV_SQRT_PI: f64 = 0.5641895835477562869480795;

// Cody's coefficients for erf on |x| <= 0.46875.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];

// Cody's coefficients for erfc on 0.46875 < |x| <= 4.
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];

// Cody's coefficients for erfc on |x| > 4.
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        return 1.0 - erf(x);
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        let r = (num + ERF_C[7]) / (den + ERF_D[7]);
        scaled_exp(y) * r
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        scaled_exp(y) * (INV_SQRT_PI - r) / y
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        1.0 - erfc(x)
    }
}

/// exp(-y^2) evaluated as exp(-ysq^2)*exp(-(y-ysq)(y+ysq)) with ysq a 1/16
/// truncation of y, preserving accuracy for large y (Cody's trick).
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

// Acklam's rational approximation coefficients.
const PPF_A: [f64; 6] = [
    -39.6968302866538,
    220.946098424521,
    -275.928510446969,
    138.357751867269,
    -30.6647980661472,
    2.50662827745924,
];
const PPF_B: [f64; 5] = [
    -54.4760987982241,
    161.585836858041,
    -155.698979859887,
    66.8013118877197,
    -13.2806815528857,
];
const PPF_C: [f64; 6] = [
    -7.78489400243029e-3,
    -0.322396458041136,
    -2.40075827716184,
    -2.54973253934373,
    4.37466414146497,
    2.93816398269878,
];
const PPF_D: [f64; 4] = [
    7.78469570904146e-3,
    0.32246712907004,
    2.445134137143,
    3.75440866190742,
];

/// Inverse standard-normal CDF: the z with `normal_cdf(z) = p`.
///
/// Antisymmetric about p = 1/2; absolute error below 1e-8 on (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal_quantile requires a probability in (0, 1), got {p}"
        )));
    }
    if p > 0.5 {
        // 1 - p is exact here (Sterbenz), and the lower tail avoids
        // cancellation in the Halley correction.
        Ok(-lower_tail_quantile(1.0 - p))
    } else {
        Ok(lower_tail_quantile(p))
    }
}

fn lower_tail_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let z = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((PPF_C[0] * q + PPF_C[1]) * q + PPF_C[2]) * q + PPF_C[3]) * q + PPF_C[4]) * q
            + PPF_C[5])
            / ((((PPF_D[0] * q + PPF_D[1]) * q + PPF_D[2]) * q + PPF_D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((PPF_A[0] * r + PPF_A[1]) * r + PPF_A[2]) * r + PPF_A[3]) * r + PPF_A[4]) * r
            + PPF_A[5])
            * q
            / (((((PPF_B[0] * r + PPF_B[1]) * r + PPF_B[2]) * r + PPF_B[3]) * r + PPF_B[4]) * r
                + 1.0)
    };
    // One Halley step against the erfc-based CDF.
    let f = normal_cdf(z) - p;
    let u = f / normal_pdf(z);
    z - u / (1.0 + z * u / 2.0)
}

/// Independent reference routes used only by tests: a Maclaurin-series erf
/// and a bisection inverse of the resulting CDF. Kept apart from the
/// production path (Cody rationals + Acklam/Halley) so the two can
/// cross-check each other.
#[cfg(test)]
pub(crate) mod oracle {
    use super::{INV_SQRT_PI, SQRT_2};

    /// Series erf; converges to full precision for |x| <= ~4.
    pub(crate) fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            let contrib = term / (2 * n + 1) as f64;
            sum += contrib;
            if contrib.abs() < 1e-20 * sum.abs() {
                break;
            }
        }
        sum * 2.0 * INV_SQRT_PI
    }

    pub(crate) fn cdf_oracle(z: f64) -> f64 {
        0.5 * (1.0 + erf_series(z / SQRT_2))
    }

    /// Bisection inverse of the series CDF.
    pub(crate) fn quantile_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf_oracle(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
