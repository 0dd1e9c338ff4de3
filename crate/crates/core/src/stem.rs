//! The two convolution layers shared by the capsule network and the CNN
//! baseline.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{bail, Result};
use crate::numerics::{conv2d_backward, conv2d_valid, fan_in_uniform, relu_backward, Tensor};
use crate::Error;

/// Network input representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputVariant {
    /// Real and imaginary envelope parts as two channels.
    Complex,
    /// Envelope magnitude as a single channel.
    Absolute,
}

impl InputVariant {
    pub fn channels(self) -> usize {
        match self {
            Self::Complex => 2,
            Self::Absolute => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Complex => "complex",
            Self::Absolute => "absolute",
        }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(Self::Complex),
            "absolute" => Ok(Self::Absolute),
            _ => Err(Error::Argument(alloc::format!(
                "unknown input variant {s:?}"
            ))),
        }
    }
}

/// Geometry of the convolution stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemArch {
    pub input_side: usize,
    pub in_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_filters: usize,
}

impl StemArch {
    /// 14×14 input, 6×6×128 then 4×4×256 kernels.
    pub fn standard(variant: InputVariant) -> Self {
        Self {
            input_side: 14,
            in_channels: variant.channels(),
            conv1_kernel: 6,
            conv1_filters: 128,
            conv2_kernel: 4,
            conv2_filters: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.input_side,
            self.in_channels,
            self.conv1_kernel,
            self.conv1_filters,
            self.conv2_kernel,
            self.conv2_filters,
        ];
        if counts.contains(&0) {
            bail!(Argument, "stem sizes must be positive: {self:?}");
        }
        if self.conv1_kernel > self.input_side || self.conv2_kernel > self.conv1_side() {
            bail!(Shape, "kernels do not fit the input: {self:?}");
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_side, self.input_side, self.in_channels]
    }

    pub fn conv1_side(&self) -> usize {
        self.input_side.saturating_sub(self.conv1_kernel) + 1
    }

    pub fn output_side(&self) -> usize {
        self.conv1_side().saturating_sub(self.conv2_kernel) + 1
    }

    pub fn conv1_kernel_shape(&self) -> [usize; 4] {
        [
            self.conv1_kernel,
            self.conv1_kernel,
            self.in_channels,
            self.conv1_filters,
        ]
    }

    pub fn conv2_kernel_shape(&self) -> [usize; 4] {
        [
            self.conv2_kernel,
            self.conv2_kernel,
            self.conv1_filters,
            self.conv2_filters,
        ]
    }
}

/// Kernels and biases of both stem layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StemParams {
    pub conv1_kernels: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernels: Tensor,
    pub conv2_bias: Tensor,
}

impl StemParams {
    pub fn init<R: Rng + ?Sized>(arch: &StemArch, rng: &mut R) -> Self {
        let fan1 = arch.conv1_kernel * arch.conv1_kernel * arch.in_channels;
        let fan2 = arch.conv2_kernel * arch.conv2_kernel * arch.conv1_filters;
        Self {
            conv1_kernels: fan_in_uniform(&arch.conv1_kernel_shape(), fan1, rng),
            conv1_bias: fan_in_uniform(&[arch.conv1_filters], fan1, rng),
            conv2_kernels: fan_in_uniform(&arch.conv2_kernel_shape(), fan2, rng),
            conv2_bias: fan_in_uniform(&[arch.conv2_filters], fan2, rng),
        }
    }

    pub fn zeros(arch: &StemArch) -> Self {
        Self {
            conv1_kernels: Tensor::zeros(&arch.conv1_kernel_shape()),
            conv1_bias: Tensor::zeros(&[arch.conv1_filters]),
            conv2_kernels: Tensor::zeros(&arch.conv2_kernel_shape()),
            conv2_bias: Tensor::zeros(&[arch.conv2_filters]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.conv1_kernels,
            &self.conv1_bias,
            &self.conv2_kernels,
            &self.conv2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.conv1_kernels,
            &mut self.conv1_bias,
            &mut self.conv2_kernels,
            &mut self.conv2_bias,
        ]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }
}

pub(crate) const STEM_NAMES: [&str; 4] =
    ["conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias"];

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StemTrace {
    pub input: Tensor,
    pub hidden: Tensor,
    pub output: Tensor,
}

/// Checks an image or a batch of images against the stem input shape and
/// returns it as a batch.
pub(crate) fn as_batch(arch: &StemArch, input: &Tensor) -> Result<Tensor> {
    let expected = arch.input_shape();
    match input.shape() {
        s if s == expected => input
            .clone()
            .reshape(&[1, expected[0], expected[1], expected[2]]),
        [_, rest @ ..] if rest == expected => Ok(input.clone()),
        s => bail!(
            Shape,
            "input {s:?} does not match {expected:?} (or a batch of it)"
        ),
    }
}

/// conv1 → ReLU → conv2 → ReLU on a batch.
pub(crate) fn stem_forward(params: &StemParams, batch: Tensor) -> Result<StemTrace> {
    let mut hidden = conv2d_valid(&batch, &params.conv1_kernels, &params.conv1_bias, 1)?;
    crate::numerics::ops::relu_in_place(&mut hidden);
    let mut output = conv2d_valid(&hidden, &params.conv2_kernels, &params.conv2_bias, 1)?;
    crate::numerics::ops::relu_in_place(&mut output);
    Ok(StemTrace {
        input: batch,
        hidden,
        output,
    })
}

/// Gradients of the stem given the gradient at its (post-ReLU) output.
pub(crate) fn stem_backward(
    params: &StemParams,
    trace: &StemTrace,
    grad_output: &Tensor,
) -> Result<StemParams> {
    let g2 = relu_backward(&trace.output, grad_output)?;
    let c2 = conv2d_backward(&trace.hidden, &params.conv2_kernels, 1, &g2, true)?;
    let gh = c2
        .input
        .unwrap_or_else(|| Tensor::zeros(trace.hidden.shape()));
    let g1 = relu_backward(&trace.hidden, &gh)?;
    let c1 = conv2d_backward(&trace.input, &params.conv1_kernels, 1, &g1, false)?;
    Ok(StemParams {
        conv1_kernels: c1.kernels,
        conv1_bias: c1.bias,
        conv2_kernels: c2.kernels,
        conv2_bias: c2.bias,
    })
}

/// Class index with the largest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if batch == 0 {
        bail!(Argument, "empty batch");
    }
    if labels.len() != batch {
        bail!(Argument, "{} labels for {batch} images", labels.len());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        bail!(Argument, "label {bad} out of range for {classes} classes");
    }
    Ok(())
}
