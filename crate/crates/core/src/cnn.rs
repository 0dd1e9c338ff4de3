//! Convolutional baseline: the capsule network's two convolutions followed by
//! 2×2 max pooling, a 64-unit ReLU layer and a softmax over the classes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::numerics::{
    adam_step, dense, dense_backward, fan_in_uniform, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax, softmax_backward, AdamConfig, AdamState, Tensor,
};
use crate::stem::{
    argmax_lowest, as_batch, check_labels, stem_backward, stem_forward, InputVariant, StemArch,
    StemParams, StemTrace, STEM_NAMES,
};
use crate::HeightClass;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnArch {
    pub stem: StemArch,
    pub hidden: usize,
    pub classes: usize,
}

impl CnnArch {
    pub fn standard(variant: InputVariant) -> Self {
        Self {
            stem: StemArch::standard(variant),
            hidden: 64,
            classes: HeightClass::COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        if self.stem.output_side() % 2 != 0 {
            bail!(
                Shape,
                "pooling needs an even feature map, got {}",
                self.stem.output_side()
            );
        }
        if self.hidden == 0 || self.classes == 0 {
            bail!(Argument, "dense layers need positive sizes");
        }
        Ok(())
    }

    pub fn pooled_side(&self) -> usize {
        self.stem.output_side() / 2
    }

    /// Length of the flattened pooled features.
    pub fn dense_inputs(&self) -> usize {
        self.pooled_side() * self.pooled_side() * self.stem.conv2_filters
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub arch: CnnArch,
    pub stem: StemParams,
    pub dense1_weights: Tensor,
    pub dense1_bias: Tensor,
    pub out_weights: Tensor,
    pub out_bias: Tensor,
}

pub const PARAM_NAMES: [&str; 8] = [
    STEM_NAMES[0],
    STEM_NAMES[1],
    STEM_NAMES[2],
    STEM_NAMES[3],
    "dense1.weights",
    "dense1.bias",
    "out.weights",
    "out.bias",
];

impl CnnParams {
    pub fn init<R: Rng + ?Sized>(arch: CnnArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let stem = StemParams::init(&arch.stem, rng);
        let d = arch.dense_inputs();
        Ok(Self {
            arch,
            stem,
            dense1_weights: fan_in_uniform(&[d, arch.hidden], d, rng),
            dense1_bias: fan_in_uniform(&[arch.hidden], d, rng),
            out_weights: fan_in_uniform(&[arch.hidden, arch.classes], arch.hidden, rng),
            out_bias: fan_in_uniform(&[arch.classes], arch.hidden, rng),
        })
    }

    pub fn zeros(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            stem: StemParams::zeros(&arch.stem),
            dense1_weights: Tensor::zeros(&[arch.dense_inputs(), arch.hidden]),
            dense1_bias: Tensor::zeros(&[arch.hidden]),
            out_weights: Tensor::zeros(&[arch.hidden, arch.classes]),
            out_bias: Tensor::zeros(&[arch.classes]),
        })
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(arch: CnnArch, tensors: Vec<Tensor>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if tensors.len() != PARAM_NAMES.len() {
            bail!(
                Shape,
                "expected {} tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            );
        }
        for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
            if dst.shape() != src.shape() {
                bail!(
                    Shape,
                    "tensor {:?} where {:?} expected",
                    src.shape(),
                    dst.shape()
                );
            }
            *dst = src;
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        let [a, b, c, d] = self.stem.tensors();
        [
            a,
            b,
            c,
            d,
            &self.dense1_weights,
            &self.dense1_bias,
            &self.out_weights,
            &self.out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        let [a, b, c, d] = self.stem.tensors_mut();
        [
            a,
            b,
            c,
            d,
            &mut self.dense1_weights,
            &mut self.dense1_bias,
            &mut self.out_weights,
            &mut self.out_bias,
        ]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Activations recorded by [`cnn_forward`].
#[derive(Debug, Clone)]
pub struct CnnTrace {
    stem: StemTrace,
    pooled: Tensor,
    flat: Tensor,
    hidden: Tensor,
    probs: Tensor,
}

impl CnnTrace {
    pub fn pooled(&self) -> &Tensor {
        &self.pooled
    }
}

/// Class probabilities (`batch × classes`) for an image or a batch.
pub fn cnn_forward(params: &CnnParams, input: &Tensor) -> Result<(Tensor, CnnTrace)> {
    let batch = as_batch(&params.arch.stem, input)?;
    let b = batch.shape()[0];
    let stem = stem_forward(&params.stem, batch)?;
    let pooled = maxpool2x2(&stem.output)?;
    let flat = pooled.clone().reshape(&[b, params.arch.dense_inputs()])?;
    let hidden = relu(&dense(&flat, &params.dense1_weights, &params.dense1_bias)?);
    let logits = dense(&hidden, &params.out_weights, &params.out_bias)?;
    let probs = softmax(&logits)?;
    Ok((
        probs.clone(),
        CnnTrace {
            stem,
            pooled,
            flat,
            hidden,
            probs,
        },
    ))
}

/// `−ln p[label]` with `p` clamped at [`PROB_FLOOR`].
pub fn crossentropy(probs: &[f64], label: usize) -> Result<f64> {
    let Some(&p) = probs.get(label) else {
        bail!(
            Argument,
            "label {label} out of range for {} classes",
            probs.len()
        );
    };
    Ok(-libm::log(p.max(PROB_FLOOR)))
}

/// Mean cross-entropy over a batch and its gradient at the probabilities.
pub fn batch_crossentropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[b, classes] = probs.shape() else {
        bail!(
            Shape,
            "probabilities must be batch x classes, got {:?}",
            probs.shape()
        );
    };
    check_labels(labels, b, classes)?;
    let mut grad = vec![0.0; probs.len()];
    let mut total = 0.0;
    for (s, row) in probs.data().chunks_exact(classes).enumerate() {
        total += crossentropy(row, labels[s])?;
        let p = row[labels[s]];
        if p > PROB_FLOOR {
            grad[s * classes + labels[s]] = -1.0 / (p * b as f64);
        }
    }
    Ok((
        total / b as f64,
        Tensor::from_parts(probs.shape().to_vec(), grad),
    ))
}

/// Gradients of all parameters given the gradient at the probabilities.
pub fn cnn_backward(
    params: &CnnParams,
    trace: &CnnTrace,
    grad_probs: &Tensor,
) -> Result<CnnParams> {
    let g_logits = softmax_backward(&trace.probs, grad_probs)?;
    let out = dense_backward(&trace.hidden, &params.out_weights, &g_logits)?;
    let g_hidden = relu_backward(&trace.hidden, &out.input)?;
    let d1 = dense_backward(&trace.flat, &params.dense1_weights, &g_hidden)?;
    let g_pooled = d1.input.reshape(trace.pooled.shape())?;
    let g_stem = maxpool2x2_backward(&trace.stem.output, &g_pooled)?;
    let stem = stem_backward(&params.stem, &trace.stem, &g_stem)?;
    Ok(CnnParams {
        arch: params.arch,
        stem,
        dense1_weights: d1.weights,
        dense1_bias: d1.bias,
        out_weights: out.weights,
        out_bias: out.bias,
    })
}

pub fn cnn_predict_batch(params: &CnnParams, input: &Tensor) -> Result<Vec<usize>> {
    let (probs, _) = cnn_forward(params, input)?;
    Ok(probs
        .data()
        .chunks_exact(params.arch.classes)
        .map(argmax_lowest)
        .collect())
}

pub fn cnn_predict(params: &CnnParams, image: &Tensor) -> Result<HeightClass> {
    if image.rank() != 3 {
        bail!(
            Shape,
            "predict takes one H x W x C image, got {:?}",
            image.shape()
        );
    }
    let k = cnn_predict_batch(params, image)?[0];
    HeightClass::from_index(k)
        .ok_or_else(|| crate::Error::Argument(alloc::format!("class index {k}")))
}

/// One optimizer step on a batch; returns the mean cross-entropy before the
/// update.
pub fn cnn_train_step(
    params: &mut CnnParams,
    opt: &mut AdamState,
    images: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    if images.rank() != 4 || images.shape()[0] == 0 {
        bail!(
            Argument,
            "training needs a non-empty batch, got {:?}",
            images.shape()
        );
    }
    check_labels(labels, images.shape()[0], params.arch.classes)?;
    let (probs, trace) = cnn_forward(params, images)?;
    let (loss, grad) = batch_crossentropy(&probs, labels)?;
    let grads = cnn_backward(params, &trace, &grad)?;
    adam_step(&mut params.tensors_mut(), &grads.tensors(), opt)?;
    Ok(loss)
}

pub fn cnn_optimizer(params: &CnnParams, config: AdamConfig) -> AdamState {
    AdamState::new(config, params.tensors())
}
