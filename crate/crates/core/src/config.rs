use crate::error::{bail, Result};

/// Acquisition and conditioning parameters shared by the simulator and the
/// preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalConfig {
    /// Transmit center frequency.
    pub carrier_hz: f64,
    /// Transmit pulse bandwidth.
    pub bandwidth_hz: f64,
    /// ADC sampling rate of the raw trace.
    pub raw_rate_hz: f64,
    /// Length of one measurement cycle.
    pub duration_s: f64,
    /// Sampling rate of the complex envelope.
    pub env_rate_hz: f64,
    /// Number of envelope samples; must be a perfect square (the grid side).
    pub env_len: usize,
    pub adc_bits: u32,
    /// Amplitude (simulator units) mapped to the largest positive ADC code
    /// above the offset.
    pub full_scale: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 51_200.0,
            bandwidth_hz: 3_000.0,
            raw_rate_hz: 110_000.0,
            duration_s: 0.030,
            env_rate_hz: 6_500.0,
            env_len: 196,
            adc_bits: 12,
            full_scale: 1.0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_positive = |v: f64| v.is_finite() && v > 0.0;
        if !finite_positive(self.carrier_hz) || !finite_positive(self.raw_rate_hz) {
            bail!(Config, "carrier and raw rate must be positive");
        }
        if !finite_positive(self.bandwidth_hz) {
            bail!(
                Config,
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            );
        }
        if !finite_positive(self.duration_s) || !finite_positive(self.env_rate_hz) {
            bail!(Config, "duration and envelope rate must be positive");
        }
        if !finite_positive(self.full_scale) {
            bail!(Config, "full scale must be positive");
        }
        let highest = self.carrier_hz + self.bandwidth_hz / 2.0;
        if self.raw_rate_hz <= 2.0 * highest {
            bail!(
                Config,
                "raw rate {} Hz violates Nyquist for content up to {} Hz",
                self.raw_rate_hz,
                highest
            );
        }
        if self.bandwidth_hz / 2.0 >= self.carrier_hz {
            bail!(Config, "bandwidth exceeds twice the carrier");
        }
        let side = self.grid_side();
        if side * side != self.env_len || side == 0 {
            bail!(
                Config,
                "envelope length {} is not a perfect square",
                self.env_len
            );
        }
        if self.raw_len() < self.env_len {
            bail!(Config, "raw trace shorter than the envelope");
        }
        if !(2..=24).contains(&self.adc_bits) {
            bail!(Config, "unsupported ADC resolution {} bits", self.adc_bits);
        }
        Ok(())
    }

    /// Number of raw samples per trace, `round(duration * raw_rate)`.
    pub fn raw_len(&self) -> usize {
        libm::round(self.duration_s * self.raw_rate_hz) as usize
    }

    pub fn grid_side(&self) -> usize {
        libm::round(libm::sqrt(self.env_len as f64)) as usize
    }

    /// Rate reduction between raw and envelope samples (3300/196 by default).
    pub fn decimation_factor(&self) -> f64 {
        self.raw_len() as f64 / self.env_len as f64
    }

    /// Largest positive ADC code relative to the offset.
    pub fn adc_half_range(&self) -> f64 {
        ((1u32 << (self.adc_bits - 1)) - 1) as f64
    }

    pub fn adc_max_code(&self) -> f64 {
        ((1u32 << self.adc_bits) - 1) as f64
    }

    /// Quantization full-scale of the complex envelope.
    ///
    /// Mixing a real pass-band signal of amplitude `a` yields an envelope of
    /// magnitude `a / 2`, so the envelope never exceeds half the ADC full-scale.
    pub fn envelope_scale(&self) -> f64 {
        self.full_scale / 2.0
    }
}
