//! Forward operations and their exact gradients.
//!
//! Images are `H × W × C` (channels last) or batched `B × H × W × C`;
//! convolution kernels are `K × K × Cin × Cout`. Backward functions take the
//! forward inputs again instead of hidden caches.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use super::Tensor;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy)]
struct Images {
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    batched: bool,
}

fn images(t: &Tensor) -> Result<Images> {
    match *t.shape() {
        [height, width, channels] => Ok(Images {
            batch: 1,
            height,
            width,
            channels,
            batched: false,
        }),
        [batch, height, width, channels] => Ok(Images {
            batch,
            height,
            width,
            channels,
            batched: true,
        }),
        _ => bail!(Shape, "expected HxWxC or BxHxWxC, got {:?}", t.shape()),
    }
}

fn image_shape(geo: Images, height: usize, width: usize, channels: usize) -> Vec<usize> {
    if geo.batched {
        vec![geo.batch, height, width, channels]
    } else {
        vec![height, width, channels]
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    input: Images,
    kernel: usize,
    out_channels: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.input.batch * self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.kernel * self.kernel * self.input.channels
    }
}

fn conv_geometry(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<ConvGeometry> {
    let geo = images(input)?;
    let &[kh, kw, cin, cout] = kernels.shape() else {
        bail!(
            Shape,
            "kernels must be KxKxCinxCout, got {:?}",
            kernels.shape()
        );
    };
    if kh != kw || kh == 0 {
        bail!(Shape, "kernels must be square, got {kh}x{kw}");
    }
    if cin != geo.channels {
        bail!(
            Shape,
            "kernels expect {cin} channels, input has {}",
            geo.channels
        );
    }
    if stride == 0 {
        bail!(Argument, "stride must be at least 1");
    }
    if geo.height < kh || geo.width < kh {
        bail!(
            Shape,
            "kernel {kh}x{kh} larger than input {}x{}",
            geo.height,
            geo.width
        );
    }
    Ok(ConvGeometry {
        input: geo,
        kernel: kh,
        out_channels: cout,
        stride,
        out_h: (geo.height - kh) / stride + 1,
        out_w: (geo.width - kh) / stride + 1,
    })
}

/// Patch matrix: one row per output position, columns ordered `(ky, kx, c)`.
fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let Images {
        height,
        width,
        channels,
        ..
    } = g.input;
    let k = g.kernel;
    let run = k * channels;
    let mut cols = vec![0.0; g.rows() * g.patch()];
    let mut row = 0;
    for b in 0..g.input.batch {
        let image = &input[b * height * width * channels..(b + 1) * height * width * channels];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * g.patch()..(row + 1) * g.patch()];
                for ky in 0..k {
                    let y = oy * g.stride + ky;
                    let start = (y * width + ox * g.stride) * channels;
                    dst[ky * run..(ky + 1) * run].copy_from_slice(&image[start..start + run]);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds a patch matrix back onto the input grid.
fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let Images {
        height,
        width,
        channels,
        ..
    } = g.input;
    let k = g.kernel;
    let run = k * channels;
    let mut out = vec![0.0; g.input.batch * height * width * channels];
    let mut row = 0;
    for b in 0..g.input.batch {
        let image = &mut out[b * height * width * channels..(b + 1) * height * width * channels];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * g.patch()..(row + 1) * g.patch()];
                for ky in 0..k {
                    let y = oy * g.stride + ky;
                    let start = (y * width + ox * g.stride) * channels;
                    image[start..start + run]
                        .iter_mut()
                        .zip(&src[ky * run..(ky + 1) * run])
                        .for_each(|(o, s)| *o += s);
                }
                row += 1;
            }
        }
    }
    out
}

/// Valid (unpadded) cross-correlation plus bias.
pub fn conv2d_valid(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, kernels, stride)?;
    if bias.len() != g.out_channels {
        bail!(
            Shape,
            "bias has {} entries for {} kernels",
            bias.len(),
            g.out_channels
        );
    }
    let cols = im2col(input.data(), &g);
    let mut out = Vec::with_capacity(g.rows() * g.out_channels);
    for _ in 0..g.rows() {
        out.extend_from_slice(bias.data());
    }
    gemm(
        g.rows(),
        g.patch(),
        g.out_channels,
        &cols,
        false,
        kernels.data(),
        false,
        1.0,
        &mut out,
    );
    Ok(Tensor::from_parts(
        image_shape(g.input, g.out_h, g.out_w, g.out_channels),
        out,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: Tensor,
    pub bias: Tensor,
    /// Present when requested.
    pub input: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernels, stride)?;
    let expected = image_shape(g.input, g.out_h, g.out_w, g.out_channels);
    if grad_out.shape() != expected.as_slice() {
        bail!(
            Shape,
            "gradient {:?} for output {:?}",
            grad_out.shape(),
            expected
        );
    }
    let cols = im2col(input.data(), &g);
    let mut grad_kernels = vec![0.0; g.patch() * g.out_channels];
    gemm(
        g.patch(),
        g.rows(),
        g.out_channels,
        &cols,
        true,
        grad_out.data(),
        false,
        0.0,
        &mut grad_kernels,
    );
    let mut grad_bias = vec![0.0; g.out_channels];
    for row in grad_out.data().chunks_exact(g.out_channels) {
        grad_bias.iter_mut().zip(row).for_each(|(b, v)| *b += v);
    }
    let grad_input = if want_input {
        let mut grad_cols = vec![0.0; g.rows() * g.patch()];
        gemm(
            g.rows(),
            g.out_channels,
            g.patch(),
            grad_out.data(),
            false,
            kernels.data(),
            true,
            0.0,
            &mut grad_cols,
        );
        Some(Tensor::from_parts(
            input.shape().to_vec(),
            col2im(&grad_cols, &g),
        ))
    } else {
        None
    };
    Ok(ConvGrads {
        kernels: Tensor::from_parts(kernels.shape().to_vec(), grad_kernels),
        bias: Tensor::from_parts(vec![g.out_channels], grad_bias),
        input: grad_input,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Passes the upstream gradient where the forward input (or output) was
/// positive.
pub fn relu_backward(forward: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if forward.shape() != grad.shape() {
        bail!(
            Shape,
            "relu gradient {:?} for {:?}",
            grad.shape(),
            forward.shape()
        );
    }
    Ok(Tensor::from_parts(
        grad.shape().to_vec(),
        forward
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    ))
}

fn matrix_dims(x: &Tensor) -> Result<(usize, usize, bool)> {
    match *x.shape() {
        [n] => Ok((1, n, false)),
        [b, n] => Ok((b, n, true)),
        _ => bail!(
            Shape,
            "expected a vector or a batch of vectors, got {:?}",
            x.shape()
        ),
    }
}

/// `x · W + b` with `W` of shape `in × out`.
pub fn dense(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, inputs, batched) = matrix_dims(x)?;
    let &[w_in, outputs] = weights.shape() else {
        bail!(
            Shape,
            "dense weights must be in x out, got {:?}",
            weights.shape()
        );
    };
    if w_in != inputs || bias.len() != outputs {
        bail!(
            Shape,
            "dense {:?} with weights {:?} and bias {:?}",
            x.shape(),
            weights.shape(),
            bias.shape()
        );
    }
    let mut out = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(
        batch,
        inputs,
        outputs,
        x.data(),
        false,
        weights.data(),
        false,
        1.0,
        &mut out,
    );
    let shape = if batched {
        vec![batch, outputs]
    } else {
        vec![outputs]
    };
    Ok(Tensor::from_parts(shape, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

pub fn dense_backward(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (batch, inputs, _) = matrix_dims(x)?;
    let outputs = weights.shape().get(1).copied().unwrap_or(0);
    if weights.shape() != [inputs, outputs] || grad_out.len() != batch * outputs {
        bail!(Shape, "dense backward shapes do not line up");
    }
    let mut gw = vec![0.0; inputs * outputs];
    gemm(
        inputs,
        batch,
        outputs,
        x.data(),
        true,
        grad_out.data(),
        false,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; outputs];
    for row in grad_out.data().chunks_exact(outputs) {
        gb.iter_mut().zip(row).for_each(|(b, v)| *b += v);
    }
    let mut gx = vec![0.0; batch * inputs];
    gemm(
        batch,
        outputs,
        inputs,
        grad_out.data(),
        false,
        weights.data(),
        true,
        0.0,
        &mut gx,
    );
    Ok(DenseGrads {
        weights: Tensor::from_parts(vec![inputs, outputs], gw),
        bias: Tensor::from_parts(vec![outputs], gb),
        input: Tensor::from_parts(x.shape().to_vec(), gx),
    })
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let Some(&n) = x.shape().last() else {
        bail!(Shape, "softmax of a scalar");
    };
    if n == 0 {
        bail!(Shape, "softmax over an empty axis");
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        softmax_slice(row);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn softmax_slice(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Gradient through softmax given its output `p`: `p ⊙ (g − Σ p·g)`.
pub fn softmax_backward(output: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if output.shape() != grad.shape() {
        bail!(
            Shape,
            "softmax gradient {:?} for {:?}",
            grad.shape(),
            output.shape()
        );
    }
    let n = *output.shape().last().unwrap_or(&1);
    let mut gx = vec![0.0; grad.len()];
    for ((p, g), dst) in output
        .data()
        .chunks_exact(n)
        .zip(grad.data().chunks_exact(n))
        .zip(gx.chunks_exact_mut(n))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((d, &pi), &gi) in dst.iter_mut().zip(p).zip(g) {
            *d = pi * (gi - dot);
        }
    }
    Ok(Tensor::from_parts(grad.shape().to_vec(), gx))
}

fn pool_geometry(x: &Tensor) -> Result<Images> {
    let geo = images(x)?;
    if geo.height % 2 != 0 || geo.width % 2 != 0 {
        bail!(
            Shape,
            "2x2 pooling needs even sizes, got {}x{}",
            geo.height,
            geo.width
        );
    }
    Ok(geo)
}

/// Index of the maximum in each 2×2 window (first one on ties).
fn pool_argmax(x: &Tensor, geo: Images) -> Vec<usize> {
    let Images {
        batch,
        height,
        width,
        channels,
        ..
    } = geo;
    let (oh, ow) = (height / 2, width / 2);
    let data = x.data();
    let mut idx = Vec::with_capacity(batch * oh * ow * channels);
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..channels {
                    let at = |y: usize, xx: usize| ((b * height + y) * width + xx) * channels + c;
                    let candidates = [
                        at(2 * oy, 2 * ox),
                        at(2 * oy, 2 * ox + 1),
                        at(2 * oy + 1, 2 * ox),
                        at(2 * oy + 1, 2 * ox + 1),
                    ];
                    let best = candidates
                        .into_iter()
                        .reduce(|best, i| if data[i] > data[best] { i } else { best })
                        .unwrap_or(candidates[0]);
                    idx.push(best);
                }
            }
        }
    }
    idx
}

/// 2×2 max pooling with stride 2.
pub fn maxpool2x2(x: &Tensor) -> Result<Tensor> {
    let geo = pool_geometry(x)?;
    let data = x.data();
    let out = pool_argmax(x, geo).into_iter().map(|i| data[i]).collect();
    Ok(Tensor::from_parts(
        image_shape(geo, geo.height / 2, geo.width / 2, geo.channels),
        out,
    ))
}

pub fn maxpool2x2_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let geo = pool_geometry(x)?;
    let expected = image_shape(geo, geo.height / 2, geo.width / 2, geo.channels);
    if grad.shape() != expected.as_slice() {
        bail!(
            Shape,
            "pool gradient {:?} for output {:?}",
            grad.shape(),
            expected
        );
    }
    let mut gx = vec![0.0; x.len()];
    for (i, g) in pool_argmax(x, geo).into_iter().zip(grad.data()) {
        gx[i] += g;
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), gx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_shape_chain() {
        let x = Tensor::zeros(&[14, 14, 2]);
        let k = Tensor::zeros(&[6, 6, 2, 128]);
        let y = conv2d_valid(&x, &k, &Tensor::zeros(&[128]), 1).unwrap();
        assert_eq!(y.shape(), &[9, 9, 128]);
        let k2 = Tensor::zeros(&[4, 4, 128, 256]);
        let z = conv2d_valid(&y, &k2, &Tensor::zeros(&[256]), 1).unwrap();
        assert_eq!(z.shape(), &[6, 6, 256]);
    }

    #[test]
    fn conv_hand_sum() {
        let x = Tensor::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[2, 2, 1, 1], 1.0);
        let y = conv2d_valid(&x, &k, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y, t(&[2, 2, 1], &[4.0; 4]));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[2, 2, 2], &[1.0, -2.0, 3.0, 4.5, -5.0, 6.0, 7.0, 0.25]);
        let mut k = Tensor::zeros(&[1, 1, 2, 2]);
        k.data_mut()[0] = 1.0; // c0 -> c0
        k.data_mut()[3] = 1.0; // c1 -> c1
        let y = conv2d_valid(&x, &k, &Tensor::zeros(&[2]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_stride_and_errors() {
        let x = Tensor::full(&[5, 5, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d_valid(&x, &k, &Tensor::zeros(&[1]), 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        let big = Tensor::zeros(&[6, 6, 1, 1]);
        assert!(matches!(
            conv2d_valid(&x, &big, &Tensor::zeros(&[1]), 1),
            Err(crate::Error::Shape(_))
        ));
        assert!(conv2d_valid(&x, &k, &Tensor::zeros(&[2]), 1).is_err());
    }

    #[test]
    fn relu_values() {
        let y = relu(&t(&[2], &[-1.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 2.0]);
        let g = relu_backward(&t(&[2], &[-1.0, 2.0]), &t(&[2], &[5.0, 7.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0]);
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&Tensor::zeros(&[4])).unwrap();
        assert_eq!(p.data(), &[0.25; 4]);
    }

    #[test]
    fn pool_shapes_and_errors() {
        let x = Tensor::zeros(&[6, 6, 256]);
        assert_eq!(maxpool2x2(&x).unwrap().shape(), &[3, 3, 256]);
        assert!(matches!(
            maxpool2x2(&Tensor::zeros(&[5, 6, 1])),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn pool_picks_maximum() {
        let x = t(&[2, 2, 1], &[1.0, 4.0, -2.0, 3.0]);
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[4.0]);
        let g = maxpool2x2_backward(&x, &t(&[1, 1, 1], &[2.5])).unwrap();
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn dense_values() {
        let x = t(&[2], &[1.0, 2.0]);
        let w = t(&[2, 3], &[1.0, 0.0, -1.0, 0.5, 2.0, 0.0]);
        let b = t(&[3], &[0.1, 0.2, 0.3]);
        let y = dense(&x, &w, &b).unwrap();
        assert!(y.max_abs_diff(&t(&[3], &[2.1, 4.2, -0.7])) < 1e-12);
        assert!(dense(&t(&[3], &[0.0; 3]), &w, &b).is_err());
    }
}
