//! Standard normal CDF and quantile built on the complementary error
//! function: a Taylor series below 2, a Lentz continued fraction above.

use thiserror::Error;

use crate::scalar::{fl, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum NormalError {
    #[error("probability {p} outside the open interval (0, 1)")]
    ProbabilityOutOfRange { p: f64 },
}

/// erf(x) for |x| <= 2 by the alternating Maclaurin series.
fn erf_series<T: Scalar>(x: T) -> T {
    let two_over_sqrt_pi = fl::<T>(1.1283791670955126);
    let neg_x2 = -(x * x);
    let mut coeff = x;
    let mut sum = x;
    let mut n = T::zero();
    loop {
        n = n + T::one();
        coeff = coeff * neg_x2 / n;
        let term = coeff / (n + n + T::one());
        let next = sum + term;
        if next == sum {
            break;
        }
        sum = next;
    }
    two_over_sqrt_pi * sum
}

/// erfc(x) for x >= 2 by the classical continued fraction
/// sqrt(pi) e^{x^2} erfc(x) = 1/(x+ (1/2)/(x+ 1/(x+ (3/2)/(x+ ...)))),
/// evaluated with the modified Lentz algorithm.
fn erfc_fraction<T: Scalar>(x: T) -> T {
    let tiny = fl::<T>(1e-30);
    let eps = T::epsilon();
    let half = fl::<T>(0.5);
    let mut f = tiny;
    let mut c = tiny;
    let mut d = T::zero();
    let mut a = T::one();
    for k in 0..200 {
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() < eps {
            break;
        }
        a = if k == 0 { half } else { a + half };
    }
    let inv_sqrt_pi = fl::<T>(0.5641895835477563);
    inv_sqrt_pi * (-(x * x)).exp() * f
}

/// Complementary error function, accurate to close to machine precision.
pub fn erfc<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return fl::<T>(2.0) - erfc(-x);
    }
    if x <= fl(2.0) {
        T::one() - erf_series(x)
    } else if (-(x * x)).exp() == T::zero() {
        T::zero()
    } else {
        erfc_fraction(x)
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf<T: Scalar>(z: T) -> T {
    let inv_sqrt_2 = fl::<T>(std::f64::consts::FRAC_1_SQRT_2);
    fl::<T>(0.5) * erfc(-z * inv_sqrt_2)
}

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(z: T) -> T {
    let inv_sqrt_2pi = fl::<T>(0.3989422804014327);
    inv_sqrt_2pi * (fl::<T>(-0.5) * z * z).exp()
}

/// Initial quantile guess from Acklam's rational approximation, good to
/// about 1e-9 on its own.
fn quantile_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -quantile_guess(1.0 - p)
    }
}

/// Lower-tail Newton polish; the CDF keeps full relative precision there,
/// so upper-tail arguments go through the exact complement `1 - p`.
fn quantile_lower<T: Scalar>(p: T) -> T {
    let mut z = fl::<T>(quantile_guess(p.to_f64().unwrap()));
    for _ in 0..3 {
        let err = normal_cdf(z) - p;
        let slope = normal_pdf(z);
        if slope > T::zero() && err.is_finite() {
            z = z - err / slope;
        }
    }
    z
}

/// Standard normal quantile: Acklam's approximation polished with Newton
/// steps against the series/continued-fraction CDF.
pub fn normal_quantile<T: Scalar>(p: T) -> Result<T, NormalError> {
    let p64 = p.to_f64().unwrap_or(f64::NAN);
    if !(p64 > 0.0 && p64 < 1.0) {
        return Err(NormalError::ProbabilityOutOfRange { p: p64 });
    }
    let half = fl::<T>(0.5);
    if p > half {
        Ok(-quantile_lower(T::one() - p))
    } else {
        Ok(quantile_lower(p))
    }
}
