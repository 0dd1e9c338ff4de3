//! Complex mixing between the carrier band and baseband.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::SignalConfig;

/// Carrier phase at raw sample `n`, reduced modulo one cycle before scaling so
/// long traces keep full precision.
fn carrier_phase(n: usize, cfg: &SignalConfig) -> f64 {
    let cycles = libm::fmod(n as f64 * cfg.carrier_hz, cfg.raw_rate_hz) / cfg.raw_rate_hz;
    2.0 * PI * cycles
}

/// `s[n] · exp(-j·2π·fc·n/fs)`.
pub fn iq_downconvert(trace: &[f64], cfg: &SignalConfig) -> Vec<Complex64> {
    trace
        .iter()
        .enumerate()
        .map(|(n, &x)| Complex64::from_polar(x, -carrier_phase(n, cfg)))
        .collect()
}

/// Inverse of [`iq_downconvert`] followed by image rejection: the real
/// pass-band signal whose complex envelope is `env`, i.e. `2·Re{env[n]·exp(j·2π·fc·n/fs)}`.
pub fn iq_upconvert(env: &[Complex64], cfg: &SignalConfig) -> Vec<f64> {
    env.iter()
        .enumerate()
        .map(|(n, &z)| 2.0 * (z * Complex64::from_polar(1.0, carrier_phase(n, cfg))).re)
        .collect()
}
