//! Signal conditioning and reorganization of raw traces into network images.
//!
//! The chain is band-pass → IQ mixing → low-pass → resampling to the envelope
//! rate → square reshape → 16-bit quantization, see [`preprocess`].

mod baseband;
mod fir;
mod image;
mod resample;

use alloc::vec::Vec;

pub use num_complex::Complex64;

pub use baseband::{iq_downconvert, iq_upconvert};
pub use fir::{
    design_bandpass, design_lowpass, filter_same, Edge, FilterKind, FilterSpec,
    DEFAULT_BANDPASS_TAPS, DEFAULT_LOWPASS_TAPS, MIN_TAPS, STOPBAND_ATTENUATION_DB,
};
pub use image::{
    dequantize_code, magnitude_image, quantize16, reshape_square, ComplexGrid, EnvelopeImage,
    MagnitudeImage, CODE_MAX, CODE_ZERO,
};
pub use resample::{resample_envelope, upsample_envelope, ComplexEnvelope};

use crate::echosim::RawTrace;
use crate::error::{bail, Result};
use crate::SignalConfig;

/// Removes noise and the ADC offset: `s_p1 = s_r * s_b`.
///
/// Samples beyond either end are taken equal to the edge sample, so a constant
/// offset produces no start-up transient.
pub fn bandpass(signal: &[f64], filter: &FilterSpec) -> Result<Vec<f64>> {
    if filter.kind() != FilterKind::BandPass {
        bail!(
            Argument,
            "band-pass stage given a {:?} filter",
            filter.kind()
        );
    }
    Ok(filter_same(signal, filter.taps(), Edge::Hold))
}

/// Suppresses the mixing image: `s_p = s_p2 * s_l`, zero-padded at the edges.
pub fn lowpass(signal: &[Complex64], filter: &FilterSpec) -> Result<Vec<Complex64>> {
    if filter.kind() != FilterKind::LowPass {
        bail!(
            Argument,
            "low-pass stage given a {:?} filter",
            filter.kind()
        );
    }
    Ok(filter_same(signal, filter.taps(), Edge::Zero))
}

/// The two conditioning filters of the preprocessing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Filters {
    pub bandpass: FilterSpec,
    pub lowpass: FilterSpec,
}

impl Filters {
    /// Default designs: 255-tap band-pass and 127-tap low-pass.
    pub fn design(cfg: &SignalConfig) -> Result<Self> {
        Self::with_taps(cfg, DEFAULT_BANDPASS_TAPS, DEFAULT_LOWPASS_TAPS)
    }

    pub fn with_taps(
        cfg: &SignalConfig,
        bandpass_taps: usize,
        lowpass_taps: usize,
    ) -> Result<Self> {
        Ok(Self {
            bandpass: design_bandpass(cfg, bandpass_taps)?,
            lowpass: design_lowpass(cfg, lowpass_taps)?,
        })
    }
}

/// Complex envelope of a pass-band trace (in simulator units) at the raw rate.
pub fn baseband_envelope(
    signal: &[f64],
    cfg: &SignalConfig,
    filters: &Filters,
) -> Result<Vec<Complex64>> {
    let conditioned = bandpass(signal, &filters.bandpass)?;
    let mixed = iq_downconvert(&conditioned, cfg);
    lowpass(&mixed, &filters.lowpass)
}

/// Result of [`preprocess_counted`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub image: EnvelopeImage,
    /// Components clipped during quantization.
    pub clipped: usize,
}

/// Full conditioning and reorganization of one raw trace.
pub fn preprocess(raw: &RawTrace, cfg: &SignalConfig, filters: &Filters) -> Result<EnvelopeImage> {
    preprocess_counted(raw, cfg, filters).map(|p| p.image)
}

pub fn preprocess_counted(
    raw: &RawTrace,
    cfg: &SignalConfig,
    filters: &Filters,
) -> Result<Preprocessed> {
    let units = raw.to_units(cfg);
    let baseband = baseband_envelope(&units, cfg, filters)?;
    let env = resample_envelope(&baseband, cfg)?;
    let grid = reshape_square(&env, cfg.grid_side())?;
    let (image, clipped) = quantize16(&grid, cfg.envelope_scale())?;
    Ok(Preprocessed { image, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn setup() -> (SignalConfig, Filters) {
        let cfg = SignalConfig::default();
        let filters = Filters::design(&cfg).unwrap();
        (cfg, filters)
    }

    #[test]
    fn bandpass_zero_and_dc() {
        let (_, f) = setup();
        assert!(bandpass(&[0.0; 3300], &f.bandpass)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let level = 1.7;
        let y = bandpass(&[level; 3300], &f.bandpass).unwrap();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 1e-3 * level, "{peak}");
    }

    #[test]
    fn bandpass_impulse_returns_taps() {
        let (_, f) = setup();
        let mut x = vec![0.0; 3300];
        x[1000] = 1.0;
        let y = bandpass(&x, &f.bandpass).unwrap();
        let d = f.bandpass.group_delay_samples();
        assert_eq!(&y[1000 - d..=1000 + d], f.bandpass.taps());
    }

    #[test]
    fn stages_reject_wrong_filter_kind() {
        let (_, f) = setup();
        assert!(bandpass(&[0.0; 10], &f.lowpass).is_err());
        assert!(lowpass(&[Complex64::new(0.0, 0.0); 10], &f.bandpass).is_err());
    }

    #[test]
    fn lowpass_recovers_half_amplitude_carrier() {
        let (cfg, f) = setup();
        let w = 2.0 * PI * cfg.carrier_hz / cfg.raw_rate_hz;
        let x: Vec<Complex64> = (0..3300)
            .map(|n| Complex64::new(0.5, 0.0) + Complex64::from_polar(0.5, -2.0 * w * n as f64))
            .collect();
        let y = lowpass(&x, &f.lowpass).unwrap();
        // Interior only: zero padding tapers the first and last group delay.
        let d = f.lowpass.group_delay_samples();
        for z in &y[d..3300 - d] {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-3);
        }
        assert!(lowpass(&[Complex64::new(0.0, 0.0); 50], &f.lowpass)
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
    }

    #[test]
    fn zero_trace_gives_mid_codes() {
        let (cfg, f) = setup();
        let raw = RawTrace::new(vec![0.0; 3300], cfg.raw_rate_hz, 0.0);
        let out = preprocess_counted(&raw, &cfg, &f).unwrap();
        assert!(out
            .image
            .re()
            .iter()
            .chain(out.image.im())
            .all(|&c| c == CODE_ZERO));
        assert_eq!(out.clipped, 0);
        assert_eq!(out.image.side(), 14);
    }
}
