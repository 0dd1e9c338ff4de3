//! Run configuration as plain-text `key = value` lines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use echocaps_core::capsnet::{CapsArch, MarginLossConfig};
use echocaps_core::cnn::CnnArch;
use echocaps_core::numerics::AdamConfig;
use echocaps_core::{InputVariant, SignalConfig};

use crate::error::{Error, Result};
use crate::kv;
use crate::model::ArchTag;

/// Gain applied to network inputs before the first convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputGain {
    /// Reciprocal RMS of the training inputs.
    Auto,
    Fixed(f64),
}

impl fmt::Display for InputGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Fixed(g) => write!(f, "{g}"),
        }
    }
}

impl FromStr for InputGain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        let g: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if g.is_finite() && g > 0.0 {
            Ok(Self::Fixed(g))
        } else {
            Err(format!("gain must be positive, got {s}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_total: usize,
    pub data_seed: u64,
    pub equalized_total: usize,
    pub holdout: usize,
    pub split_seed: u64,
    pub arch: ArchTag,
    pub variant: InputVariant,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub input_gain: InputGain,
    pub adam: AdamConfig,
    pub routing_iterations: usize,
    pub margin: MarginLossConfig,
    pub signal: SignalConfig,
    pub n_warm: usize,
    pub n_measure: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_total: 21_600,
            data_seed: 1,
            equalized_total: 4_800,
            holdout: 960,
            split_seed: 2,
            arch: ArchTag::CapsNet,
            variant: InputVariant::Complex,
            seed: 3,
            batch_size: 100,
            epochs: 50,
            patience: 10,
            input_gain: InputGain::Auto,
            adam: AdamConfig::default(),
            routing_iterations: 3,
            margin: MarginLossConfig::default(),
            signal: SignalConfig::default(),
            n_warm: 20,
            n_measure: 200,
        }
    }
}

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str) -> std::result::Result<(), String>
where
    T::Err: fmt::Display,
{
    *slot = value.parse().map_err(|e| format!("{key}: {e}"))?;
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut c = Self::default();
        for (key, value) in kv::parse_lines(text)? {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "n_total" => set(&mut c.n_total, k, v)?,
                "data_seed" => set(&mut c.data_seed, k, v)?,
                "equalized_total" => set(&mut c.equalized_total, k, v)?,
                "holdout" => set(&mut c.holdout, k, v)?,
                "split_seed" => set(&mut c.split_seed, k, v)?,
                "arch" => set(&mut c.arch, k, v)?,
                "variant" => {
                    c.variant = v
                        .parse()
                        .map_err(|e: echocaps_core::Error| format!("{k}: {e}"))?
                }
                "seed" => set(&mut c.seed, k, v)?,
                "batch_size" => set(&mut c.batch_size, k, v)?,
                "epochs" => set(&mut c.epochs, k, v)?,
                "patience" => set(&mut c.patience, k, v)?,
                "input_gain" => set(&mut c.input_gain, k, v)?,
                "lr" => set(&mut c.adam.lr, k, v)?,
                "beta1" => set(&mut c.adam.beta1, k, v)?,
                "beta2" => set(&mut c.adam.beta2, k, v)?,
                "eps" => set(&mut c.adam.eps, k, v)?,
                "routing_iterations" => set(&mut c.routing_iterations, k, v)?,
                "m_plus" => set(&mut c.margin.m_plus, k, v)?,
                "m_minus" => set(&mut c.margin.m_minus, k, v)?,
                "lambda" => set(&mut c.margin.lambda, k, v)?,
                "carrier_hz" => set(&mut c.signal.carrier_hz, k, v)?,
                "bandwidth_hz" => set(&mut c.signal.bandwidth_hz, k, v)?,
                "raw_rate_hz" => set(&mut c.signal.raw_rate_hz, k, v)?,
                "duration_s" => set(&mut c.signal.duration_s, k, v)?,
                "env_rate_hz" => set(&mut c.signal.env_rate_hz, k, v)?,
                "env_len" => set(&mut c.signal.env_len, k, v)?,
                "adc_bits" => set(&mut c.signal.adc_bits, k, v)?,
                "full_scale" => set(&mut c.signal.full_scale, k, v)?,
                "n_warm" => set(&mut c.n_warm, k, v)?,
                "n_measure" => set(&mut c.n_measure, k, v)?,
                _ => return Err(format!("unknown key {k:?}")),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Usage(format!("config file {} does not exist", path.display()))
            } else {
                Error::io(path)(e)
            }
        })?;
        let c = Self::parse(&text).map_err(|m| Error::Usage(format!("{}: {m}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; `parse(to_text())` returns the same config.
    pub fn to_text(&self) -> String {
        let s = &self.signal;
        let rows: Vec<(&str, String)> = vec![
            ("n_total", self.n_total.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("equalized_total", self.equalized_total.to_string()),
            ("holdout", self.holdout.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("arch", self.arch.to_string()),
            ("variant", self.variant.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("input_gain", self.input_gain.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("routing_iterations", self.routing_iterations.to_string()),
            ("m_plus", self.margin.m_plus.to_string()),
            ("m_minus", self.margin.m_minus.to_string()),
            ("lambda", self.margin.lambda.to_string()),
            ("carrier_hz", s.carrier_hz.to_string()),
            ("bandwidth_hz", s.bandwidth_hz.to_string()),
            ("raw_rate_hz", s.raw_rate_hz.to_string()),
            ("duration_s", s.duration_s.to_string()),
            ("env_rate_hz", s.env_rate_hz.to_string()),
            ("env_len", s.env_len.to_string()),
            ("adc_bits", s.adc_bits.to_string()),
            ("full_scale", s.full_scale.to_string()),
            ("n_warm", self.n_warm.to_string()),
            ("n_measure", self.n_measure.to_string()),
        ];
        rows.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.adam.validate()?;
        self.margin.validate()?;
        self.split().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Usage(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.n_total == 0 {
            return Err(Error::Usage("n_total must be positive".into()));
        }
        self.caps_arch().validate()?;
        Ok(())
    }

    pub fn split(&self) -> crate::harness::SplitSpec {
        crate::harness::SplitSpec {
            equalized_total: self.equalized_total,
            holdout: self.holdout,
            seed: self.split_seed,
        }
    }

    pub fn caps_arch(&self) -> CapsArch {
        CapsArch {
            routing_iterations: self.routing_iterations,
            ..CapsArch::standard(self.variant)
        }
    }

    pub fn cnn_arch(&self) -> CnnArch {
        CnnArch::standard(self.variant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let mut d = c.clone();
        d.arch = ArchTag::Cnn;
        d.variant = InputVariant::Absolute;
        d.input_gain = InputGain::Fixed(12.5);
        d.adam.lr = 3e-4;
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn partial_and_bad_files() {
        let c = RunConfig::parse("epochs = 7\n# comment\nvariant = absolute\n").unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.variant, InputVariant::Absolute);
        assert_eq!(c.batch_size, 100);
        assert!(RunConfig::parse("epochs = seven").is_err());
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("input_gain = -1").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig {
            holdout: 962,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.signal.raw_rate_hz = 90_000.0;
        assert!(matches!(c.validate(), Err(Error::Core(_))));
    }
}
