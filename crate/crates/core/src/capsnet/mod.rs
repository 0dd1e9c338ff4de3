//! Capsule network: two convolutions, primary capsules, per-pair
//! transformation matrices and routing-by-agreement into one digit capsule
//! per height class.
//!
//! The class is the digit capsule with the longest vector.

mod loss;
mod routing;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use loss::{margin_loss_from_norms, MarginLossConfig};
pub use routing::{route, squash, squash_backward, RoutingState};

use crate::error::{bail, Result};
use crate::numerics::{adam_step, lecun_normal, AdamState, Tensor};
use crate::stem::{
    argmax_lowest, as_batch, check_labels, stem_backward, stem_forward, StemArch, StemParams,
    StemTrace, STEM_NAMES,
};
use crate::HeightClass;
use routing::{
    route_backward_slice, route_slice, squash_backward_into, squash_in_place, RoutingTrace,
};

pub use crate::stem::InputVariant;

/// Default number of routing iterations.
pub const ROUTING_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapsArch {
    pub stem: StemArch,
    /// Length of each primary capsule; the second convolution's filters are
    /// split into `conv2_filters / primary_dim` capsule types.
    pub primary_dim: usize,
    pub digit_dim: usize,
    pub classes: usize,
    pub routing_iterations: usize,
}

impl CapsArch {
    /// 1152 primary capsules of length 8 routed into four 8-dimensional
    /// digit capsules.
    pub fn standard(variant: InputVariant) -> Self {
        Self {
            stem: StemArch::standard(variant),
            primary_dim: 8,
            digit_dim: 8,
            classes: HeightClass::COUNT,
            routing_iterations: ROUTING_ITERATIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate()?;
        if self.primary_dim == 0 || self.stem.conv2_filters % self.primary_dim != 0 {
            bail!(
                Argument,
                "{} filters do not split into capsules of length {}",
                self.stem.conv2_filters,
                self.primary_dim
            );
        }
        if self.digit_dim == 0 || self.classes == 0 {
            bail!(Argument, "digit capsules need a positive count and length");
        }
        if self.routing_iterations == 0 {
            bail!(Argument, "routing needs at least one iteration");
        }
        Ok(())
    }

    pub fn primary_types(&self) -> usize {
        self.stem.conv2_filters / self.primary_dim
    }

    pub fn primary_count(&self) -> usize {
        let side = self.stem.output_side();
        side * side * self.primary_types()
    }

    pub fn transform_shape(&self) -> [usize; 4] {
        [
            self.primary_count(),
            self.classes,
            self.digit_dim,
            self.primary_dim,
        ]
    }
}

/// All learnable weights. Also used to hold their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetParams {
    pub arch: CapsArch,
    pub stem: StemParams,
    /// `W[i][j]`, shaped `primary × classes × digit_dim × primary_dim`.
    pub transforms: Tensor,
}

pub const PARAM_NAMES: [&str; 5] = [
    STEM_NAMES[0],
    STEM_NAMES[1],
    STEM_NAMES[2],
    STEM_NAMES[3],
    "transforms",
];

impl CapsNetParams {
    pub fn init<R: Rng + ?Sized>(arch: CapsArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let stem = StemParams::init(&arch.stem, rng);
        let transforms = lecun_normal(&arch.transform_shape(), arch.primary_dim, rng);
        Ok(Self {
            arch,
            stem,
            transforms,
        })
    }

    pub fn zeros(arch: CapsArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            stem: StemParams::zeros(&arch.stem),
            transforms: Tensor::zeros(&arch.transform_shape()),
        })
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(arch: CapsArch, tensors: Vec<Tensor>) -> Result<Self> {
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

    pub fn tensors(&self) -> [&Tensor; 5] {
        let [a, b, c, d] = self.stem.tensors();
        [a, b, c, d, &self.transforms]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        let [a, b, c, d] = self.stem.tensors_mut();
        [a, b, c, d, &mut self.transforms]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Activations recorded by [`forward`]; the only way to obtain input for
/// [`backward`].
#[derive(Debug, Clone)]
pub struct CapsTrace {
    arch: CapsArch,
    batch: usize,
    stem: StemTrace,
    /// Squashed primary capsules, `batch × primary × primary_dim`.
    primary: Vec<f64>,
    /// Predictions `û`, `batch × primary × classes × digit_dim`.
    predictions: Vec<f64>,
    routing: Vec<RoutingTrace>,
}

impl CapsTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// First convolution output after ReLU.
    pub fn conv1_output(&self) -> &Tensor {
        &self.stem.hidden
    }

    /// Second convolution output after ReLU.
    pub fn conv2_output(&self) -> &Tensor {
        &self.stem.output
    }

    /// Squashed primary capsules, `batch × primary × primary_dim`.
    pub fn primary_capsules(&self) -> Tensor {
        let a = self.arch;
        Tensor::from_parts(
            vec![self.batch, a.primary_count(), a.primary_dim],
            self.primary.clone(),
        )
    }

    /// Predictions `û`, `batch × primary × classes × digit_dim`.
    pub fn predictions(&self) -> Tensor {
        let a = self.arch;
        Tensor::from_parts(
            vec![self.batch, a.primary_count(), a.classes, a.digit_dim],
            self.predictions.clone(),
        )
    }

    /// Routing logits and couplings of one batch member.
    pub fn routing_state(&self, index: usize) -> RoutingState {
        self.routing[index].state()
    }
}

/// Digit capsules (`batch × classes × digit_dim`) for an image or a batch of
/// images, plus the activations needed by [`backward`].
pub fn forward(params: &CapsNetParams, input: &Tensor) -> Result<(Tensor, CapsTrace)> {
    let arch = params.arch;
    let batch = as_batch(&arch.stem, input)?;
    let b = batch.shape()[0];
    let stem = stem_forward(&params.stem, batch)?;

    let (n, j, dd, dp) = (
        arch.primary_count(),
        arch.classes,
        arch.digit_dim,
        arch.primary_dim,
    );
    let mut primary = stem.output.data().to_vec();
    for cap in primary.chunks_exact_mut(dp) {
        squash_in_place(cap);
    }

    let w = params.transforms.data();
    let mut predictions = vec![0.0; b * n * j * dd];
    for s in 0..b {
        for i in 0..n {
            let u = &primary[(s * n + i) * dp..(s * n + i + 1) * dp];
            let out = &mut predictions[(s * n + i) * j * dd..(s * n + i + 1) * j * dd];
            let wi = &w[i * j * dd * dp..(i + 1) * j * dd * dp];
            for (o, row) in out.iter_mut().zip(wi.chunks_exact(dp)) {
                *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
            }
        }
    }

    let mut digits = Vec::with_capacity(b * j * dd);
    let mut routing = Vec::with_capacity(b);
    for s in 0..b {
        let uhat = &predictions[s * n * j * dd..(s + 1) * n * j * dd];
        let trace = route_slice(uhat, n, j, dd, arch.routing_iterations);
        digits.extend_from_slice(trace.output());
        routing.push(trace);
    }
    Ok((
        Tensor::from_parts(vec![b, j, dd], digits),
        CapsTrace {
            arch,
            batch: b,
            stem,
            primary,
            predictions,
            routing,
        },
    ))
}

/// Gradients of all parameters given the gradient at the digit capsules.
pub fn backward(
    params: &CapsNetParams,
    trace: &CapsTrace,
    grad_digits: &Tensor,
) -> Result<CapsNetParams> {
    let arch = params.arch;
    let (n, j, dd, dp) = (
        arch.primary_count(),
        arch.classes,
        arch.digit_dim,
        arch.primary_dim,
    );
    let b = trace.batch;
    if grad_digits.shape() != [b, j, dd] {
        bail!(
            Shape,
            "digit gradient {:?}, expected {:?}",
            grad_digits.shape(),
            [b, j, dd]
        );
    }
    let mut grad_pred = vec![0.0; trace.predictions.len()];
    for s in 0..b {
        let range = s * n * j * dd..(s + 1) * n * j * dd;
        route_backward_slice(
            &trace.routing[s],
            &trace.predictions[range.clone()],
            &grad_digits.data()[s * j * dd..(s + 1) * j * dd],
            &mut grad_pred[range],
        );
    }

    let w = params.transforms.data();
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_primary = vec![0.0; trace.primary.len()];
    for s in 0..b {
        for i in 0..n {
            let u = &trace.primary[(s * n + i) * dp..(s * n + i + 1) * dp];
            let gu = &mut grad_primary[(s * n + i) * dp..(s * n + i + 1) * dp];
            let gp = &grad_pred[(s * n + i) * j * dd..(s * n + i + 1) * j * dd];
            let wi = &w[i * j * dd * dp..(i + 1) * j * dd * dp];
            let gwi = &mut grad_w[i * j * dd * dp..(i + 1) * j * dd * dp];
            for ((&g, row), grow) in gp
                .iter()
                .zip(wi.chunks_exact(dp))
                .zip(gwi.chunks_exact_mut(dp))
            {
                if g == 0.0 {
                    continue;
                }
                for c in 0..dp {
                    grow[c] += g * u[c];
                    gu[c] += g * row[c];
                }
            }
        }
    }

    let raw = trace.stem.output.data();
    let mut grad_raw = vec![0.0; raw.len()];
    for ((s, g), out) in raw
        .chunks_exact(dp)
        .zip(grad_primary.chunks_exact(dp))
        .zip(grad_raw.chunks_exact_mut(dp))
    {
        squash_backward_into(s, g, out);
    }
    let grad_raw = Tensor::from_parts(trace.stem.output.shape().to_vec(), grad_raw);
    let stem = stem_backward(&params.stem, &trace.stem, &grad_raw)?;
    Ok(CapsNetParams {
        arch,
        stem,
        transforms: Tensor::from_parts(params.transforms.shape().to_vec(), grad_w),
    })
}

/// Euclidean length of every digit capsule, `batch × classes`.
pub fn capsule_norms(digits: &Tensor) -> Vec<Vec<f64>> {
    let &[_, _, dim] = digits.shape() else {
        return Vec::new();
    };
    let classes = digits.shape()[1];
    digits
        .data()
        .chunks_exact(classes * dim)
        .map(|sample| {
            sample
                .chunks_exact(dim)
                .map(|v| libm::sqrt(v.iter().map(|x| x * x).sum()))
                .collect()
        })
        .collect()
}

/// Mean margin loss over a batch and its gradient at the digit capsules.
pub fn batch_margin_loss(
    digits: &Tensor,
    labels: &[usize],
    cfg: &MarginLossConfig,
) -> Result<(f64, Tensor)> {
    let &[b, classes, dim] = digits.shape() else {
        bail!(
            Shape,
            "digit capsules must be batch x classes x dim, got {:?}",
            digits.shape()
        );
    };
    check_labels(labels, b, classes)?;
    let mut grad = vec![0.0; digits.len()];
    let mut total = 0.0;
    let scale = 1.0 / b as f64;
    for (s, norms) in capsule_norms(digits).iter().enumerate() {
        let (loss, dn) = loss::margin_terms(norms, labels[s], cfg)?;
        total += loss;
        for k in 0..classes {
            let at = (s * classes + k) * dim;
            if norms[k] > 0.0 {
                let f = scale * dn[k] / norms[k];
                for d in 0..dim {
                    grad[at + d] = f * digits.data()[at + d];
                }
            }
        }
    }
    Ok((
        total * scale,
        Tensor::from_parts(digits.shape().to_vec(), grad),
    ))
}

/// Margin loss of one set of digit capsules (`classes × dim`).
pub fn margin_loss(digits: &Tensor, label: usize, cfg: &MarginLossConfig) -> Result<f64> {
    let &[classes, dim] = digits.shape() else {
        bail!(
            Shape,
            "digit capsules must be classes x dim, got {:?}",
            digits.shape()
        );
    };
    let batched = Tensor::new(vec![1, classes, dim], digits.data().to_vec())?;
    margin_loss_from_norms(&capsule_norms(&batched)[0], label, cfg)
}

/// Class index with the longest digit capsule; ties go to the lowest index.
pub fn decide(norms: &[f64]) -> usize {
    argmax_lowest(norms)
}

/// Predicted class index for every image of a batch.
pub fn predict_batch(params: &CapsNetParams, input: &Tensor) -> Result<Vec<usize>> {
    let (digits, _) = forward(params, input)?;
    Ok(capsule_norms(&digits).iter().map(|n| decide(n)).collect())
}

/// Height class of a single image.
pub fn predict(params: &CapsNetParams, image: &Tensor) -> Result<HeightClass> {
    if image.rank() != 3 {
        bail!(
            Shape,
            "predict takes one H x W x C image, got {:?}",
            image.shape()
        );
    }
    let k = predict_batch(params, image)?[0];
    HeightClass::from_index(k)
        .ok_or_else(|| crate::Error::Argument(alloc::format!("class index {k}")))
}

/// One optimizer step on a batch; returns the mean margin loss before the
/// update.
pub fn train_step(
    params: &mut CapsNetParams,
    opt: &mut AdamState,
    images: &Tensor,
    labels: &[usize],
    loss_cfg: &MarginLossConfig,
) -> Result<f64> {
    if images.rank() != 4 || images.shape()[0] == 0 {
        bail!(
            Argument,
            "training needs a non-empty batch, got {:?}",
            images.shape()
        );
    }
    check_labels(labels, images.shape()[0], params.arch.classes)?;
    let (digits, trace) = forward(params, images)?;
    let (loss, grad) = batch_margin_loss(&digits, labels, loss_cfg)?;
    let grads = backward(params, &trace, &grad)?;
    adam_step(&mut params.tensors_mut(), &grads.tensors(), opt)?;
    Ok(loss)
}

/// Fresh optimizer state for these parameters.
pub fn optimizer(params: &CapsNetParams, config: crate::numerics::AdamConfig) -> AdamState {
    AdamState::new(config, params.tensors())
}

#[cfg(test)]
mod tests;
