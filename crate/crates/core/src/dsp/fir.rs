//! Linear-phase FIR design (Kaiser-windowed sinc) and delay-compensated filtering.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;
use core::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{bail, Result};
use crate::SignalConfig;

/// Stop-band attenuation every designed filter aims for.
pub const STOPBAND_ATTENUATION_DB: f64 = 80.0;
pub const MIN_TAPS: usize = 63;
pub const DEFAULT_BANDPASS_TAPS: usize = 255;
pub const DEFAULT_LOWPASS_TAPS: usize = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    BandPass,
    LowPass,
}

/// Symmetric FIR filter with an odd number of taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    taps: Vec<f64>,
    kind: FilterKind,
}

impl FilterSpec {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn group_delay_samples(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Complex frequency response at `freq_hz` for sampling rate `rate_hz`.
    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / rate_hz;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, &h)| Complex64::from_polar(h, -w * n as f64))
            .sum()
    }

    pub fn gain_db(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        20.0 * libm::log10(self.response(freq_hz, rate_hz).norm())
    }

    /// One coefficient per line, full round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for h in &self.taps {
            let _ = writeln!(out, "{h:e}");
        }
        out
    }
}

/// Band-pass covering `[carrier - bandwidth, carrier + bandwidth]`.
pub fn design_bandpass(cfg: &SignalConfig, taps: usize) -> Result<FilterSpec> {
    check_taps(taps)?;
    cfg.validate()
        .map_err(|e| crate::Error::Design(alloc::format!("{e}")))?;
    let transition = transition_width_hz(taps, cfg.raw_rate_hz);
    let half_width = cfg.bandwidth_hz + transition / 2.0;
    if cfg.carrier_hz - half_width - transition / 2.0 <= 0.0
        || cfg.carrier_hz + cfg.bandwidth_hz >= cfg.raw_rate_hz / 2.0
    {
        bail!(
            Design,
            "pass-band {}..{} Hz does not fit at {} Hz with {taps} taps",
            cfg.carrier_hz - cfg.bandwidth_hz,
            cfg.carrier_hz + cfg.bandwidth_hz,
            cfg.raw_rate_hz
        );
    }
    let prototype = lowpass_prototype(taps, half_width / cfg.raw_rate_hz);
    let w0 = 2.0 * PI * cfg.carrier_hz / cfg.raw_rate_hz;
    let center = (taps - 1) / 2;
    let taps = mirror(taps, |n| {
        let m = n as f64 - center as f64;
        2.0 * prototype[n] * libm::cos(w0 * m)
    });
    Ok(FilterSpec {
        taps,
        kind: FilterKind::BandPass,
    })
}

/// Low-pass passing the baseband pulse (`±bandwidth/2`) and rejecting the
/// mixing image at `2·carrier`, folded into the raw sampling band.
pub fn design_lowpass(cfg: &SignalConfig, taps: usize) -> Result<FilterSpec> {
    check_taps(taps)?;
    cfg.validate()
        .map_err(|e| crate::Error::Design(alloc::format!("{e}")))?;
    let fs = cfg.raw_rate_hz;
    let image = {
        let f = libm::fmod(2.0 * cfg.carrier_hz, fs);
        f.min(fs - f)
    };
    let pass_edge = cfg.bandwidth_hz / 2.0;
    let stop_edge = image - cfg.bandwidth_hz / 2.0;
    let transition = transition_width_hz(taps, fs);
    if stop_edge - pass_edge < transition {
        bail!(
            Design,
            "image at {image} Hz too close to the {pass_edge} Hz pass-band for {taps} taps"
        );
    }
    let cutoff = (pass_edge + stop_edge) / 2.0;
    let prototype = lowpass_prototype(taps, cutoff / fs);
    let taps = mirror(taps, |n| prototype[n]);
    Ok(FilterSpec {
        taps,
        kind: FilterKind::LowPass,
    })
}

fn check_taps(taps: usize) -> Result<()> {
    if taps % 2 == 0 {
        bail!(Design, "tap count must be odd, got {taps}");
    }
    if taps < MIN_TAPS {
        bail!(Design, "at least {MIN_TAPS} taps required, got {taps}");
    }
    Ok(())
}

/// Kaiser estimate of the achievable transition width for the target attenuation.
fn transition_width_hz(taps: usize, rate_hz: f64) -> f64 {
    let dw = (STOPBAND_ATTENUATION_DB - 7.95) / (14.36 * (taps - 1) as f64);
    dw * rate_hz
}

fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * libm::pow(attenuation_db - 21.0, 0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Unit-DC-gain windowed sinc with cutoff in cycles per sample.
fn lowpass_prototype(taps: usize, cutoff: f64) -> Vec<f64> {
    let beta = kaiser_beta(STOPBAND_ATTENUATION_DB);
    let center = (taps - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let m = n as f64 - center;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                libm::sin(2.0 * PI * cutoff * m) / (PI * m)
            };
            let r = m / center;
            let window = bessel_i0(beta * libm::sqrt((1.0 - r * r).max(0.0))) / norm;
            sinc * window
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Builds an exactly symmetric tap vector from its first half.
fn mirror(taps: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut h = vec![0.0; taps];
    for n in 0..=(taps - 1) / 2 {
        let v = f(n);
        h[n] = v;
        h[taps - 1 - n] = v;
    }
    h
}

/// How samples outside the trace are treated during filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Zero,
    /// Repeat the first/last sample.
    Hold,
}

/// Linear convolution aligned by the group delay so the output has the
/// input's length and timing.
pub fn filter_same<T>(input: &[T], taps: &[f64], edge: Edge) -> Vec<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    let n = input.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (taps.len() - 1) / 2;
    let (first, last) = match edge {
        Edge::Zero => (T::default(), T::default()),
        Edge::Hold => (input[0], input[n - 1]),
    };
    let mut padded = Vec::with_capacity(n + 2 * half);
    padded.extend(core::iter::repeat(first).take(half));
    padded.extend_from_slice(input);
    padded.extend(core::iter::repeat(last).take(half));
    // y[i] = sum_k h[k] x[i + half - k]
    (0..n)
        .map(|i| {
            padded[i..i + taps.len()]
                .iter()
                .zip(taps.iter().rev())
                .fold(T::default(), |acc, (&x, &h)| acc + x * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandpass() -> FilterSpec {
        design_bandpass(&SignalConfig::default(), DEFAULT_BANDPASS_TAPS).unwrap()
    }

    fn lowpass() -> FilterSpec {
        design_lowpass(&SignalConfig::default(), DEFAULT_LOWPASS_TAPS).unwrap()
    }

    #[test]
    fn bandpass_rejects_dc_and_passes_carrier() {
        let f = bandpass();
        let fs = SignalConfig::default().raw_rate_hz;
        assert!(f.gain_db(0.0, fs) <= -60.0, "{}", f.gain_db(0.0, fs));
        assert!(f.gain_db(51_200.0, fs) >= -1.0);
        // The upper edge sits 0.8 kHz below Nyquist, where the mirrored
        // response adds ripple; the pulse band itself stays flat.
        for k in 0..=60 {
            let freq = 48_200.0 + 100.0 * k as f64;
            let g = f.gain_db(freq, fs);
            let tol = if (freq - 51_200.0).abs() <= 1_500.0 {
                0.01
            } else {
                1.0
            };
            assert!(g.abs() < tol, "{freq}: {g}");
        }
        assert_eq!(f.group_delay_samples(), 127);
    }

    #[test]
    fn lowpass_passes_baseband_and_kills_image() {
        let f = lowpass();
        let fs = 110_000.0;
        for k in 0..=15 {
            let freq = 100.0 * k as f64;
            assert!((f.response(freq, fs).norm() - 1.0).abs() < 2e-4);
        }
        for k in 0..=30 {
            let freq = 6_100.0 + 100.0 * k as f64;
            assert!(
                f.gain_db(freq, fs) < -70.0,
                "{freq}: {}",
                f.gain_db(freq, fs)
            );
        }
    }

    #[test]
    fn taps_are_exactly_symmetric() {
        for f in [bandpass(), lowpass()] {
            let rev: Vec<f64> = f.taps().iter().rev().copied().collect();
            assert_eq!(f.taps(), rev.as_slice());
            assert_eq!(f.taps().len() % 2, 1);
        }
    }

    #[test]
    fn rejects_bad_tap_counts() {
        let cfg = SignalConfig::default();
        assert!(matches!(
            design_bandpass(&cfg, 64),
            Err(crate::Error::Design(_))
        ));
        assert!(matches!(
            design_bandpass(&cfg, 61),
            Err(crate::Error::Design(_))
        ));
        assert!(matches!(
            design_lowpass(&cfg, 100),
            Err(crate::Error::Design(_))
        ));
    }

    #[test]
    fn rejects_infeasible_passband() {
        // Upper band edge beyond Nyquist.
        let cfg = SignalConfig {
            carrier_hz: 53_500.0,
            bandwidth_hz: 2_000.0,
            ..Default::default()
        };
        assert!(matches!(
            design_bandpass(&cfg, 255),
            Err(crate::Error::Design(_))
        ));
        // Image folded onto the pass-band.
        let cfg = SignalConfig {
            carrier_hz: 54_000.0,
            bandwidth_hz: 1_000.0,
            ..Default::default()
        };
        assert!(matches!(
            design_lowpass(&cfg, 127),
            Err(crate::Error::Design(_))
        ));
    }

    #[test]
    fn filter_same_impulse_returns_taps() {
        let f = lowpass();
        let mut x = vec![0.0; 400];
        x[200] = 1.0;
        let y = filter_same(&x, f.taps(), Edge::Zero);
        let d = f.group_delay_samples();
        assert_eq!(&y[200 - d..=200 + d], f.taps());
        assert!(y[..200 - d].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hold_edges_pass_constants_through_lowpass() {
        let f = lowpass();
        let y = filter_same(&[0.25; 300], f.taps(), Edge::Hold);
        assert!(y.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-10);
    }

    #[test]
    fn taps_export_one_per_line() {
        let f = lowpass();
        let parsed: Vec<f64> = f.to_text().lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(parsed, f.taps());
    }
}
