//! Finite-blocklength link mathematics.
//!
//! Gaussian tail numerics, the normal-approximation achievable rate, the exact
//! and linearised packet error probability, and the error probability averaged
//! over an exponentially distributed received SNR.

use std::f64::consts::{FRAC_1_SQRT_2, LOG2_E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a power level in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Radio constants shared by every device in a cell.
///
/// Devices use full path-loss inversion, so the mean received power equals
/// `power_threshold` and the mean SNR is `power_threshold / noise_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConstants {
    /// Received power threshold of the inversion power control, watts.
    pub power_threshold: f64,
    /// Noise power, watts.
    pub noise_power: f64,
    pub pathloss_exponent: f64,
    pub reference_gain: f64,
}

impl RadioConstants {
    pub fn new(
        power_threshold: f64,
        noise_power: f64,
        pathloss_exponent: f64,
        reference_gain: f64,
    ) -> Result<Self> {
        if !(power_threshold > 0.0 && power_threshold.is_finite()) {
            return Err(Error::domain("power_threshold", power_threshold, "must be positive"));
        }
        if !(noise_power > 0.0 && noise_power.is_finite()) {
            return Err(Error::domain("noise_power", noise_power, "must be positive"));
        }
        if !(pathloss_exponent >= 2.0) {
            return Err(Error::domain("pathloss_exponent", pathloss_exponent, "must be >= 2"));
        }
        if !(reference_gain > 0.0) {
            return Err(Error::domain("reference_gain", reference_gain, "must be positive"));
        }
        Ok(Self {
            power_threshold,
            noise_power,
            pathloss_exponent,
            reference_gain,
        })
    }

    pub fn from_dbm(
        power_threshold_dbm: f64,
        noise_power_dbm: f64,
        pathloss_exponent: f64,
        reference_gain: f64,
    ) -> Result<Self> {
        Self::new(
            dbm_to_watts(power_threshold_dbm),
            dbm_to_watts(noise_power_dbm),
            pathloss_exponent,
            reference_gain,
        )
    }

    pub fn mean_snr(&self) -> f64 {
        self.power_threshold / self.noise_power
    }
}

impl Default for RadioConstants {
    /// -80 dBm threshold, -90 dBm noise, exponent 3, unit reference gain.
    fn default() -> Self {
        Self::from_dbm(-80.0, -90.0, 3.0, 1.0).expect("default constants are valid")
    }
}

/// One evaluated point of the normal approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbcPoint {
    pub snr: f64,
    pub blocklength: f64,
    pub dispersion: f64,
    /// Bits per symbol; can be negative for very short blocks.
    pub rate: f64,
    pub error_prob: f64,
}

impl FbcPoint {
    /// Evaluates the rate achievable at `(snr, blocklength)` with target error `error_prob`.
    pub fn at_error(snr: f64, blocklength: f64, error_prob: f64) -> Result<Self> {
        Ok(Self {
            snr,
            blocklength,
            dispersion: channel_dispersion(snr)?,
            rate: achievable_rate(snr, blocklength, error_prob)?,
            error_prob,
        })
    }
}

/// Parameters of the piecewise-linear approximation of the Q function in SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedError {
    /// Slope of the linear segment.
    pub mu: f64,
    /// SNR threshold at which the error probability crosses 1/2.
    pub xi: f64,
    /// Below this SNR the packet is always lost.
    pub tau1: f64,
    /// Above this SNR the packet is never lost.
    pub tau2: f64,
    pub bits_per_packet: f64,
}

impl LinearizedError {
    /// Linearised error probability at a given instantaneous SNR.
    pub fn error_at(&self, snr: f64) -> f64 {
        if snr <= self.tau1 {
            1.0
        } else if snr <= self.tau2 {
            0.5 - self.mu * (snr - self.xi)
        } else {
            0.0
        }
    }
}

/// Complementary error function, absolute error below 1e-15 and relative
/// accuracy preserved far into the upper tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        1.0 - erf_series(x)
    } else if x > 27.3 {
        // exp(-x^2) underflows past this point
        0.0
    } else {
        erfc_continued_fraction(x)
    }
}

// erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (2n+1)!!
// All terms are positive, so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * x2 / (2.0 * k + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * PI.sqrt())
}

/// Upper-tail probability of the standard normal distribution.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

// Acklam's rational approximation of the standard normal quantile
// (relative error about 1.15e-9), used as the starting point for refinement.
fn normal_quantile_initial(p: f64) -> f64 {
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
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse of [`q_function`]: the `x` with `Q(x) = p`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("p", p, "must lie in (0, 1)"));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Q^-1(p) = -Phi^-1(p)
    let mut x = -normal_quantile_initial(p);
    for _ in 0..2 {
        let density = normal_pdf(x);
        if density == 0.0 {
            break;
        }
        // Halley step on f(x) = Q(x) - p
        let u = (q_function(x) - p) / density;
        x += u / (1.0 - 0.5 * x * u);
    }
    Ok(x)
}

/// Channel dispersion `1 - (1 + snr)^-2`.
pub fn channel_dispersion(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::domain("snr", snr, "must be non-negative"));
    }
    Ok(1.0 - (1.0 + snr).powi(-2))
}

/// Normal-approximation achievable rate in bits per symbol.
///
/// The raw value is returned even when negative; callers decide how to clamp.
/// An infinite blocklength yields the Shannon capacity.
pub fn achievable_rate(snr: f64, blocklength: f64, error_prob: f64) -> Result<f64> {
    if !(blocklength > 0.0) {
        return Err(Error::domain("blocklength", blocklength, "must be positive"));
    }
    let dispersion = channel_dispersion(snr)?;
    let qinv = q_inverse(error_prob)?;
    let capacity = (1.0 + snr).log2();
    if blocklength.is_infinite() {
        return Ok(capacity);
    }
    Ok(capacity - (dispersion / blocklength).sqrt() * qinv * LOG2_E)
}

/// Exact (normal-approximation) packet error probability at a given coding rate.
pub fn error_probability_exact(snr: f64, blocklength: f64, rate: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::domain("snr", snr, "must be positive"));
    }
    if !(blocklength > 0.0) {
        return Err(Error::domain("blocklength", blocklength, "must be positive"));
    }
    let dispersion = channel_dispersion(snr)?;
    let arg = (blocklength / dispersion).sqrt() * ((1.0 + snr).log2() - rate) / LOG2_E;
    Ok(q_function(arg))
}

/// Slope, threshold and breakpoints of the linearised error curve for
/// `bits` bits carried in `blocklength` symbols.
pub fn linearization_params(blocklength: f64, bits: f64) -> Result<LinearizedError> {
    if !(blocklength > 0.0 && blocklength.is_finite()) {
        return Err(Error::domain("blocklength", blocklength, "must be positive and finite"));
    }
    if !(bits >= 1.0) {
        return Err(Error::domain("bits", bits, "must be at least 1"));
    }
    let spectral = bits / blocklength;
    let mu = (blocklength / (2f64.powf(2.0 * spectral) - 1.0)).sqrt() / (2.0 * PI);
    let xi = 2f64.powf(spectral) - 1.0;
    let half_width = 0.5 / mu;
    Ok(LinearizedError {
        mu,
        xi,
        tau1: xi - half_width,
        tau2: xi + half_width,
        bits_per_packet: bits,
    })
}

/// Packet error probability averaged over an exponential SNR with mean
/// `P0 / sigma^2`, clamped to `[0, 1]`.
pub fn expected_error_probability(
    blocklength: f64,
    bits: f64,
    constants: &RadioConstants,
) -> Result<f64> {
    let lin = linearization_params(blocklength, bits)?;
    let mean_snr = constants.mean_snr();
    if !(mean_snr > 0.0) {
        return Err(Error::domain("mean_snr", mean_snr, "must be positive"));
    }
    // 1 - mu*s*(e^-a - e^-(a+d)) with a = tau1/s, d = 1/(mu*s), rewritten as
    // (1 - g) - g*expm1(-a), g = (1 - e^-d)/d, so that high SNR does not cancel.
    let a = lin.tau1 / mean_snr;
    let d = 1.0 / (lin.mu * mean_snr);
    let one_minus_g = if d < 1e-3 {
        d * (0.5 - d * (1.0 / 6.0 - d * (1.0 / 24.0 - d / 120.0)))
    } else {
        (d + (-d).exp_m1()) / d
    };
    let g = 1.0 - one_minus_g;
    let p = one_minus_g - g * (-a).exp_m1();
    Ok(p.clamp(0.0, 1.0))
}

/// Transmit power under full path-loss inversion.
pub fn transmit_power(distance: f64, fading_power: f64, constants: &RadioConstants) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::domain("distance", distance, "must be positive"));
    }
    if !(fading_power > 0.0) {
        return Err(Error::domain("fading_power", fading_power, "must be positive"));
    }
    Ok(distance.powf(constants.pathloss_exponent) / (constants.reference_gain * fading_power)
        * constants.power_threshold)
}
