use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

/// Uniform values in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` (variance
/// `1 / (3 fan_in)`), for weights and biases alike.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
    t
}

/// Zero-mean normal weights with variance `1 / fan_in`.
pub fn lecun_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    normal_with_variance(shape, 1.0 / fan_in.max(1) as f64, rng)
}

fn normal_with_variance<R: Rng + ?Sized>(shape: &[usize], variance: f64, rng: &mut R) -> Tensor {
    let std = libm::sqrt(variance);
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
    t
}
