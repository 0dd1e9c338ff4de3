//! Parametric simulator of monostatic ultrasonic echo traces.
//!
//! Each scenario places one object in front of the sensor. The trace holds
//! the direct echo of the object plus class-dependent multipath returns,
//! white Gaussian noise and the ADC offset, quantized to ADC codes.
//!
//! Every multipath return lags the direct echo by a whole number of carrier
//! periods plus a sub-period micro-delay. The lag separates the returns in
//! the envelope; the micro-delay only rotates their carrier phase. `Low` and
//! `High` objects share the same lag and amplitude pattern and differ in the
//! sign of that rotation, so telling them apart from the envelope magnitude
//! alone has to rely on the overlapping echo amplitude.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::{HeightClass, SignalConfig};

/// One multipath return relative to the direct echo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipath {
    /// Whole carrier periods of extra delay.
    pub lag_periods: u32,
    /// Additional delay as a fraction of a carrier period, in `[0, 1)`.
    pub micro_delay: f64,
    /// Amplitude relative to the direct echo.
    pub rel_amplitude: f64,
}

const fn path(lag_periods: u32, micro_delay: f64, rel_amplitude: f64) -> Multipath {
    Multipath {
        lag_periods,
        micro_delay,
        rel_amplitude,
    }
}

/// Class signatures, indexed by [`HeightClass::index`].
pub const MULTIPATH: [&[Multipath]; 4] = [
    &[],
    &[path(16, 0.25, 0.7)],
    &[path(16, 0.75, 0.7)],
    &[path(16, 0.25, 0.7), path(32, 0.75, 0.5)],
];

/// Uniform jitter of each micro-delay, in carrier periods.
pub const MICRO_DELAY_JITTER: f64 = 0.04;
/// Relative uniform jitter of each multipath amplitude.
pub const MULTIPATH_AMPLITUDE_JITTER: f64 = 0.2;
/// Direct-echo peak amplitude (simulator units) of a unit-gain object at 1 m.
pub const ECHO_GAIN: f64 = 0.13;
/// Object reflectivity is drawn uniformly from this range.
pub const REFLECTIVITY: (f64, f64) = (0.7, 1.3);
/// Lateral offset giving 1/e attenuation.
pub const LATERAL_WIDTH_M: f64 = 0.6;
/// Noise standard deviation on dry asphalt, simulator units.
pub const BASE_NOISE: f64 = 5e-4;
pub const WET_NOISE_FACTOR: f64 = 1.3;
/// ADC offset jitter around mid-code, in codes.
pub const DC_JITTER_CODES: f64 = 32.0;

/// Ranges used by [`gen_scenarios`].
pub const DISTANCE_RANGE_M: (f64, f64) = (0.5, 2.5);
pub const TEMPERATURE_RANGE_C: (f64, f64) = (5.0, 25.0);
pub const LATERAL_RANGE_M: (f64, f64) = (-0.3, 0.3);
pub const LOWEST_MIN_HEIGHT_M: f64 = 0.02;
pub const HIGHEST_MAX_HEIGHT_M: f64 = 1.2;

/// First-order temperature model of the speed of sound in air.
pub fn speed_of_sound(temperature_c: f64) -> f64 {
    331.3 + 0.606 * temperature_c
}

/// Monotone echo strength of an object of the given height.
pub fn height_gain(height_m: f64) -> f64 {
    0.5 + 0.5 * height_m / (height_m + 0.15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ground {
    Asphalt,
    Gravel,
    Grass,
}

impl Ground {
    pub const ALL: [Ground; 3] = [Self::Asphalt, Self::Gravel, Self::Grass];

    pub fn name(self) -> &'static str {
        match self {
            Self::Asphalt => "asphalt",
            Self::Gravel => "gravel",
            Self::Grass => "grass",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    fn noise_factor(self) -> f64 {
        match self {
            Self::Asphalt => 1.0,
            Self::Gravel => 1.5,
            Self::Grass => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub height_class: HeightClass,
    pub object_height_m: f64,
    pub distance_m: f64,
    pub temperature_c: f64,
    pub ground: Ground,
    pub wet: bool,
    pub lateral_offset_m: f64,
    /// Seeds the per-trace randomness (reflectivity, jitter, noise, offset).
    pub rng_seed: u64,
}

impl ScenarioSpec {
    /// Slant range from sensor to object.
    pub fn range_m(&self) -> f64 {
        libm::hypot(self.distance_m, self.lateral_offset_m)
    }

    /// Round-trip time of flight of the direct echo.
    pub fn direct_echo_delay_s(&self) -> f64 {
        2.0 * self.range_m() / speed_of_sound(self.temperature_c)
    }

    /// Raw sample index at which the direct echo is centered.
    pub fn arrival_index(&self, cfg: &SignalConfig) -> usize {
        libm::round(self.direct_echo_delay_s() * cfg.raw_rate_hz) as usize
    }

    pub fn noise_sigma(&self) -> f64 {
        let wet = if self.wet { WET_NOISE_FACTOR } else { 1.0 };
        BASE_NOISE * self.ground.noise_factor() * wet
    }

    pub fn validate(&self, cfg: &SignalConfig) -> Result<()> {
        let finite = [
            self.object_height_m,
            self.distance_m,
            self.temperature_c,
            self.lateral_offset_m,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            bail!(Scenario, "non-finite scenario parameter");
        }
        let last_lag = MULTIPATH[self.height_class.index()]
            .iter()
            .map(|m| (m.lag_periods as f64 + m.micro_delay + MICRO_DELAY_JITTER) / cfg.carrier_hz)
            .fold(0.0, f64::max);
        let end = self.direct_echo_delay_s() + last_lag + pulse_duration_s(cfg) / 2.0;
        if end > cfg.duration_s {
            bail!(
                Scenario,
                "echo at {:.2} ms ends after the {:.1} ms window",
                self.direct_echo_delay_s() * 1e3,
                cfg.duration_s * 1e3
            );
        }
        let (lo, hi) = DISTANCE_RANGE_M;
        if !(lo..=hi).contains(&self.distance_m) {
            bail!(
                Scenario,
                "distance {} m outside [{lo}, {hi}]",
                self.distance_m
            );
        }
        let (lo, hi) = TEMPERATURE_RANGE_C;
        if !(lo..=hi).contains(&self.temperature_c) {
            bail!(
                Scenario,
                "temperature {} C outside [{lo}, {hi}]",
                self.temperature_c
            );
        }
        if HeightClass::from_height(self.object_height_m) != Some(self.height_class) {
            bail!(
                Scenario,
                "height {} m is not in class {}",
                self.object_height_m,
                self.height_class
            );
        }
        Ok(())
    }
}

/// One raw measurement cycle in ADC codes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    samples: Vec<f32>,
    rate_hz: f64,
    dc_offset: f64,
}

impl RawTrace {
    pub fn new(samples: Vec<f32>, rate_hz: f64, dc_offset: f64) -> Self {
        Self {
            samples,
            rate_hz,
            dc_offset,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Offset added before conversion, in codes.
    pub fn dc_offset(&self) -> f64 {
        self.dc_offset
    }

    /// Codes scaled to simulator units; the offset is kept.
    pub fn to_units(&self, cfg: &SignalConfig) -> Vec<f64> {
        let k = cfg.full_scale / cfg.adc_half_range();
        self.samples.iter().map(|&c| c as f64 * k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub spec: ScenarioSpec,
    pub trace: RawTrace,
}

/// Duration of the raised-cosine pulse envelope; its -6 dB width is the
/// configured bandwidth.
pub fn pulse_duration_s(cfg: &SignalConfig) -> f64 {
    2.0 / cfg.bandwidth_hz
}

/// Unit-peak transmit pulse at time `t` relative to its center.
fn pulse_at(t: f64, cfg: &SignalConfig) -> f64 {
    let duration = pulse_duration_s(cfg);
    if t.abs() >= duration / 2.0 {
        return 0.0;
    }
    let window = 0.5 * (1.0 + libm::cos(2.0 * PI * t / duration));
    window * libm::cos(2.0 * PI * cfg.carrier_hz * t)
}

/// Sampled transmit pulse, centered, normalized to unit energy.
pub fn make_pulse(cfg: &SignalConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let half = libm::floor(pulse_duration_s(cfg) / 2.0 * cfg.raw_rate_hz) as isize;
    if half < 1 {
        bail!(Config, "pulse shorter than two samples");
    }
    let mut pulse: Vec<f64> = (-half..=half)
        .map(|n| pulse_at(n as f64 / cfg.raw_rate_hz, cfg))
        .collect();
    let energy: f64 = pulse.iter().map(|v| v * v).sum();
    let norm = libm::sqrt(energy);
    pulse.iter_mut().for_each(|v| *v /= norm);
    Ok(pulse)
}

/// Adds one echo centered at `delay_s` with the given peak amplitude.
fn add_echo(signal: &mut [f64], delay_s: f64, amplitude: f64, cfg: &SignalConfig) {
    let half = pulse_duration_s(cfg) / 2.0;
    let fs = cfg.raw_rate_hz;
    let first = libm::ceil((delay_s - half) * fs).max(0.0) as usize;
    let last = (libm::floor((delay_s + half) * fs) as usize).min(signal.len().saturating_sub(1));
    for (n, x) in signal.iter_mut().enumerate().take(last + 1).skip(first) {
        *x += amplitude * pulse_at(n as f64 / fs - delay_s, cfg);
    }
}

/// Simulates one measurement cycle.
pub fn synth_trace(spec: &ScenarioSpec, cfg: &SignalConfig) -> Result<RawTrace> {
    cfg.validate()?;
    spec.validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let len = cfg.raw_len();
    let mut signal = vec![0.0; len];

    let range = spec.range_m();
    let reflectivity = rng.random_range(REFLECTIVITY.0..REFLECTIVITY.1);
    let lateral = libm::exp(-(spec.lateral_offset_m / LATERAL_WIDTH_M).powi(2));
    let amplitude =
        ECHO_GAIN * height_gain(spec.object_height_m) * reflectivity * lateral / (range * range);
    let delay = spec.direct_echo_delay_s();
    add_echo(&mut signal, delay, amplitude, cfg);

    let period = 1.0 / cfg.carrier_hz;
    for m in MULTIPATH[spec.height_class.index()] {
        let micro = m.micro_delay + rng.random_range(-MICRO_DELAY_JITTER..=MICRO_DELAY_JITTER);
        let gain = m.rel_amplitude
            * (1.0 + rng.random_range(-MULTIPATH_AMPLITUDE_JITTER..=MULTIPATH_AMPLITUDE_JITTER));
        let lag = (m.lag_periods as f64 + micro) * period;
        add_echo(&mut signal, delay + lag, amplitude * gain, cfg);
    }

    let noise = Normal::new(0.0, spec.noise_sigma())
        .map_err(|e| crate::Error::Scenario(alloc::format!("{e}")))?;
    let half_range = cfg.adc_half_range();
    let mid = half_range + 1.0;
    let dc_offset = mid + rng.random_range(-DC_JITTER_CODES..=DC_JITTER_CODES);
    let codes_per_unit = half_range / cfg.full_scale;
    let max_code = cfg.adc_max_code();
    let samples = signal
        .into_iter()
        .map(|x| {
            let v = x + noise.sample(&mut rng);
            libm::round(dc_offset + v * codes_per_unit).clamp(0.0, max_code) as f32
        })
        .collect();
    Ok(RawTrace::new(samples, cfg.raw_rate_hz, dc_offset))
}

/// Scenario `index` of the dataset with the given seed. Classes cycle in
/// index order, so every block of four holds one scenario per class.
pub fn scenario_at(seed: u64, index: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let height_class = HeightClass::ALL[(index % 4) as usize];
    let (lo, hi) = height_class.bounds_m();
    let (lo, hi) = (lo.max(LOWEST_MIN_HEIGHT_M), hi.min(HIGHEST_MAX_HEIGHT_M));
    ScenarioSpec {
        height_class,
        object_height_m: rng.random_range(lo..hi),
        distance_m: rng.random_range(DISTANCE_RANGE_M.0..=DISTANCE_RANGE_M.1),
        temperature_c: rng.random_range(TEMPERATURE_RANGE_C.0..=TEMPERATURE_RANGE_C.1),
        ground: Ground::ALL[rng.random_range(0..Ground::ALL.len())],
        wet: rng.random_bool(0.5),
        lateral_offset_m: rng.random_range(LATERAL_RANGE_M.0..=LATERAL_RANGE_M.1),
        rng_seed: rng.random(),
    }
}

/// Balanced scenario list of `n_total` entries.
pub fn gen_scenarios(n_total: usize, seed: u64) -> Result<Vec<ScenarioSpec>> {
    if n_total % HeightClass::COUNT != 0 {
        bail!(Argument, "dataset size {n_total} is not divisible by 4");
    }
    Ok((0..n_total as u64).map(|i| scenario_at(seed, i)).collect())
}

/// Simulates a balanced labeled dataset of `n_total` traces.
pub fn gen_dataset(n_total: usize, seed: u64, cfg: &SignalConfig) -> Result<Vec<LabeledTrace>> {
    gen_scenarios(n_total, seed)?
        .into_iter()
        .map(|spec| {
            let trace = synth_trace(&spec, cfg)?;
            Ok(LabeledTrace { spec, trace })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(distance_m: f64) -> ScenarioSpec {
        ScenarioSpec {
            height_class: HeightClass::High,
            object_height_m: 0.4,
            distance_m,
            temperature_c: 20.0,
            ground: Ground::Asphalt,
            wet: false,
            lateral_offset_m: 0.0,
            rng_seed: 7,
        }
    }

    #[test]
    fn time_of_flight_at_far_edge() {
        let s = spec(2.5);
        assert!((speed_of_sound(20.0) - 343.42).abs() < 1e-9);
        let delay = s.direct_echo_delay_s();
        assert!((delay - 2.0 * 2.5 / 343.42).abs() < 1e-12);
        assert!((delay * 1e3 - 14.56).abs() < 0.01);
        synth_trace(&s, &SignalConfig::default()).unwrap();
    }

    #[test]
    fn echo_beyond_window_is_rejected() {
        let err = synth_trace(&spec(6.0), &SignalConfig::default()).unwrap_err();
        assert!(
            matches!(err, crate::Error::Scenario(ref m) if m.contains("window")),
            "{err}"
        );
    }

    #[test]
    fn out_of_class_height_is_rejected() {
        let mut s = spec(1.0);
        s.object_height_m = 0.2;
        assert!(synth_trace(&s, &SignalConfig::default()).is_err());
    }

    #[test]
    fn trace_is_deterministic_and_in_adc_range() {
        let cfg = SignalConfig::default();
        let a = synth_trace(&spec(0.5), &cfg).unwrap();
        let b = synth_trace(&spec(0.5), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples().len(), 3300);
        assert!(a
            .samples()
            .iter()
            .all(|&c| (0.0..=4095.0).contains(&c) && c.fract() == 0.0));
        assert!((a.dc_offset() - 2048.0).abs() <= DC_JITTER_CODES);
    }

    #[test]
    fn arrival_index_increases_with_distance() {
        let cfg = SignalConfig::default();
        let mut prev = None;
        for k in 0..=200 {
            let idx = spec(0.5 + 0.01 * k as f64).arrival_index(&cfg);
            if let Some(p) = prev {
                assert!(idx > p);
            }
            prev = Some(idx);
        }
    }

    #[test]
    fn dataset_sizes() {
        assert!(matches!(
            gen_scenarios(6, 1),
            Err(crate::Error::Argument(_))
        ));
        let four = gen_scenarios(4, 1).unwrap();
        let classes: Vec<_> = four.iter().map(|s| s.height_class).collect();
        assert_eq!(classes, HeightClass::ALL);
        let big = gen_scenarios(21_600, 3).unwrap();
        for c in HeightClass::ALL {
            assert_eq!(big.iter().filter(|s| s.height_class == c).count(), 5_400);
        }
    }

    #[test]
    fn sampled_scenarios_are_valid() {
        let cfg = SignalConfig::default();
        for s in gen_scenarios(400, 11).unwrap() {
            s.validate(&cfg).unwrap();
        }
        assert_eq!(scenario_at(5, 17), scenario_at(5, 17));
        assert_ne!(scenario_at(5, 17), scenario_at(6, 17));
    }

    #[test]
    fn pulse_has_unit_energy() {
        let p = make_pulse(&SignalConfig::default()).unwrap();
        let e: f64 = p.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-12);
        assert_eq!(p.len() % 2, 1);
        let bad = SignalConfig {
            bandwidth_hz: 0.0,
            ..Default::default()
        };
        assert!(matches!(make_pulse(&bad), Err(crate::Error::Config(_))));
    }

    #[test]
    fn multipath_table_matches_class_contract() {
        assert!(MULTIPATH[HeightClass::Lowest.index()].is_empty());
        assert!(MULTIPATH[HeightClass::Highest.index()].len() <= 2);
        for paths in MULTIPATH {
            for m in paths {
                assert!(m.micro_delay + MICRO_DELAY_JITTER < 1.0);
                assert!(m.micro_delay - MICRO_DELAY_JITTER >= 0.0);
            }
        }
    }
}
