//! The two trainable architectures behind one interface.

use std::fmt;
use std::str::FromStr;

use echocaps_core::capsnet::{self, CapsArch, CapsNetParams, MarginLossConfig};
use echocaps_core::cnn::{self, CnnArch, CnnParams};
use echocaps_core::numerics::{AdamConfig, AdamState, Tensor};
use echocaps_core::InputVariant;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchTag {
    CapsNet,
    Cnn,
}

impl ArchTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::CapsNet => "capsnet",
            Self::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "capsnet" => Ok(Self::CapsNet),
            "cnn" => Ok(Self::Cnn),
            _ => Err(format!(
                "unknown architecture {s:?} (expected capsnet or cnn)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    CapsNet(CapsNetParams),
    Cnn(CnnParams),
}

/// A network plus the fixed gain applied to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Net,
    pub input_gain: f64,
}

impl Model {
    pub fn init_capsnet<R: Rng + ?Sized>(
        arch: CapsArch,
        input_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            net: Net::CapsNet(CapsNetParams::init(arch, rng)?),
            input_gain,
        })
    }

    pub fn init_cnn<R: Rng + ?Sized>(arch: CnnArch, input_gain: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Net::Cnn(CnnParams::init(arch, rng)?),
            input_gain,
        })
    }

    pub fn arch_tag(&self) -> ArchTag {
        match self.net {
            Net::CapsNet(_) => ArchTag::CapsNet,
            Net::Cnn(_) => ArchTag::Cnn,
        }
    }

    pub fn variant(&self) -> InputVariant {
        let channels = match &self.net {
            Net::CapsNet(p) => p.arch.stem.in_channels,
            Net::Cnn(p) => p.arch.stem.in_channels,
        };
        if channels == InputVariant::Complex.channels() {
            InputVariant::Complex
        } else {
            InputVariant::Absolute
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.net {
            Net::CapsNet(_) => &capsnet::PARAM_NAMES,
            Net::Cnn(_) => &cnn::PARAM_NAMES,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match &self.net {
            Net::CapsNet(p) => p.tensors().to_vec(),
            Net::Cnn(p) => p.tensors().to_vec(),
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.net {
            Net::CapsNet(p) => p.param_count(),
            Net::Cnn(p) => p.param_count(),
        }
    }

    pub fn optimizer(&self, config: AdamConfig) -> AdamState {
        match &self.net {
            Net::CapsNet(p) => capsnet::optimizer(p, config),
            Net::Cnn(p) => cnn::cnn_optimizer(p, config),
        }
    }

    fn scaled(&self, input: &Tensor) -> Tensor {
        let mut x = input.clone();
        x.data_mut().iter_mut().for_each(|v| *v *= self.input_gain);
        x
    }

    /// Per-sample class scores: digit capsule norms or softmax probabilities.
    pub fn scores(&self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let x = self.scaled(input);
        Ok(match &self.net {
            Net::CapsNet(p) => capsnet::capsule_norms(&capsnet::forward(p, &x)?.0),
            Net::Cnn(p) => {
                let (probs, _) = cnn::cnn_forward(p, &x)?;
                let classes = *probs.shape().last().unwrap_or(&1);
                probs
                    .data()
                    .chunks_exact(classes)
                    .map(<[f64]>::to_vec)
                    .collect()
            }
        })
    }

    pub fn predict_batch(&self, input: &Tensor) -> Result<Vec<usize>> {
        let x = self.scaled(input);
        Ok(match &self.net {
            Net::CapsNet(p) => capsnet::predict_batch(p, &x)?,
            Net::Cnn(p) => cnn::cnn_predict_batch(p, &x)?,
        })
    }

    /// One optimizer step on a batch; returns the mean batch loss.
    pub fn train_step(
        &mut self,
        opt: &mut AdamState,
        input: &Tensor,
        labels: &[usize],
        margin: &MarginLossConfig,
    ) -> Result<f64> {
        let x = self.scaled(input);
        Ok(match &mut self.net {
            Net::CapsNet(p) => capsnet::train_step(p, opt, &x, labels, margin)?,
            Net::Cnn(p) => cnn::cnn_train_step(p, opt, &x, labels)?,
        })
    }

    pub fn check_variant(&self, data: InputVariant) -> Result<()> {
        if self.variant() != data {
            return Err(Error::Usage(format!(
                "{} {} model cannot evaluate {data} data",
                self.variant(),
                self.arch_tag()
            )));
        }
        Ok(())
    }
}
