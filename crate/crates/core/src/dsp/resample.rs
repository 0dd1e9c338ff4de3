//! Band-limited resampling of the complex envelope.
//!
//! The envelope is treated as one period of a band-limited signal: the
//! spectrum is truncated to the bins representable at the output rate and
//! evaluated at uniformly spaced instants covering the same window. This is
//! exact for content inside the retained band, preserves DC and never needs
//! samples outside the window.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{bail, Result};
use crate::SignalConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    samples: Vec<Complex64>,
    rate_hz: f64,
    span_s: f64,
}

impl ComplexEnvelope {
    pub fn new(samples: Vec<Complex64>, rate_hz: f64, span_s: f64) -> Self {
        Self {
            samples,
            rate_hz,
            span_s,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    /// Nominal envelope rate.
    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Time window covered by the samples; sample `m` sits at `m·span/len`.
    pub fn span_s(&self) -> f64 {
        self.span_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Highest retained bin index for an output of `len` samples; the ambiguous
/// Nyquist bin of even lengths is dropped.
fn half_band(len: usize) -> usize {
    (len - 1) / 2
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n)
        .map(|m| Complex64::from_polar(1.0, sign * 2.0 * PI * m as f64 / n as f64))
        .collect()
}

/// Partial DFT over bins `-k_max..=k_max`, normalized by the length.
fn band_coefficients(x: &[Complex64], k_max: usize) -> Vec<Complex64> {
    let n = x.len();
    let table = twiddles(n, -1.0);
    let scale = 1.0 / n as f64;
    (0..=2 * k_max)
        .map(|slot| {
            let k = (slot as isize - k_max as isize).rem_euclid(n as isize) as usize;
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0usize;
            for &v in x {
                acc += v * table[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            acc * scale
        })
        .collect()
}

/// Evaluates the band-limited series at `len` uniformly spaced instants.
fn synthesize(coeffs: &[Complex64], k_max: usize, len: usize) -> Vec<Complex64> {
    let table = twiddles(len, 1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (slot, &c) in coeffs.iter().enumerate() {
        let k = (slot as isize - k_max as isize).rem_euclid(len as isize) as usize;
        let mut idx = 0usize;
        for y in out.iter_mut() {
            *y += c * table[idx];
            idx += k;
            if idx >= len {
                idx -= len;
            }
        }
    }
    out
}

/// Reduces a raw-rate baseband trace to `cfg.env_len` samples spanning the
/// measurement window.
pub fn resample_envelope(env: &[Complex64], cfg: &SignalConfig) -> Result<ComplexEnvelope> {
    let raw_len = cfg.raw_len();
    if env.len() != raw_len {
        bail!(
            Argument,
            "expected {raw_len} baseband samples, got {}",
            env.len()
        );
    }
    if cfg.env_len == 0 || cfg.env_len > raw_len {
        bail!(Argument, "invalid envelope length {}", cfg.env_len);
    }
    let k_max = half_band(cfg.env_len);
    let coeffs = band_coefficients(env, k_max);
    Ok(ComplexEnvelope::new(
        synthesize(&coeffs, k_max, cfg.env_len),
        cfg.env_rate_hz,
        cfg.duration_s,
    ))
}

/// Band-limited interpolation of the envelope back to `raw_len` samples.
pub fn upsample_envelope(env: &ComplexEnvelope, raw_len: usize) -> Result<Vec<Complex64>> {
    let len = env.len();
    if len == 0 || raw_len < len {
        bail!(Argument, "cannot upsample {len} samples to {raw_len}");
    }
    let k_max = half_band(len);
    let coeffs = band_coefficients(env.samples(), k_max);
    Ok(synthesize(&coeffs, k_max, raw_len))
}
