//! Squash non-linearity and routing-by-agreement between capsule layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::numerics::ops::softmax_slice;
use crate::numerics::Tensor;

fn norm(s: &[f64]) -> f64 {
    libm::sqrt(s.iter().map(|x| x * x).sum())
}

/// `v = ‖s‖² / (1 + ‖s‖²) · s / ‖s‖`, with `squash(0) = 0`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let mut v = s.to_vec();
    squash_in_place(&mut v);
    v
}

pub(crate) fn squash_in_place(s: &mut [f64]) {
    let n = norm(s);
    let g = n / (1.0 + n * n);
    s.iter_mut().for_each(|x| *x *= g);
}

/// Vector-Jacobian product of [`squash`] at `s`.
///
/// With `v = g(n)·s`, `g(n) = n / (1 + n²)`:
/// `∂L/∂s = g·∂L/∂v + s·(g'(n)/n)·(s·∂L/∂v)`.
pub fn squash_backward(s: &[f64], grad_v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    squash_backward_into(s, grad_v, &mut out);
    out
}

pub(crate) fn squash_backward_into(s: &[f64], grad_v: &[f64], out: &mut [f64]) {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let n = libm::sqrt(n2);
    let g = n / (1.0 + n2);
    let dg_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
    let dot: f64 = s.iter().zip(grad_v).map(|(a, b)| a * b).sum();
    for ((o, &si), &gi) in out.iter_mut().zip(s).zip(grad_v) {
        *o = g * gi + si * dg_over_n * dot;
    }
}

/// Logits and couplings left after the final routing iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    /// `inputs × outputs` agreement logits.
    pub logits: Tensor,
    /// `inputs × outputs` coupling coefficients, softmax of the logits
    /// used in the last iteration.
    pub couplings: Tensor,
    /// Couplings of every iteration, first to last.
    pub coupling_history: Vec<Tensor>,
    pub iterations: usize,
}

/// Per-iteration values needed to differentiate through routing.
#[derive(Debug, Clone)]
pub(crate) struct RoutingTrace {
    inputs: usize,
    outputs: usize,
    dim: usize,
    /// Coupling coefficients for each iteration, `inputs × outputs`.
    couplings: Vec<Vec<f64>>,
    /// Weighted sums before squash, `outputs × dim`.
    sums: Vec<Vec<f64>>,
    /// Squashed outputs, `outputs × dim`.
    outputs_v: Vec<Vec<f64>>,
    final_logits: Vec<f64>,
}

impl RoutingTrace {
    pub(crate) fn output(&self) -> &[f64] {
        self.outputs_v.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn state(&self) -> RoutingState {
        let shape = vec![self.inputs, self.outputs];
        RoutingState {
            logits: Tensor::from_parts(shape.clone(), self.final_logits.clone()),
            couplings: Tensor::from_parts(
                shape.clone(),
                self.couplings.last().cloned().unwrap_or_default(),
            ),
            coupling_history: self
                .couplings
                .iter()
                .map(|c| Tensor::from_parts(shape.clone(), c.clone()))
                .collect(),
            iterations: self.couplings.len(),
        }
    }
}

/// Routing on a flat `inputs × outputs × dim` prediction array.
pub(crate) fn route_slice(
    uhat: &[f64],
    inputs: usize,
    outputs: usize,
    dim: usize,
    iterations: usize,
) -> RoutingTrace {
    debug_assert_eq!(uhat.len(), inputs * outputs * dim);
    let mut b = vec![0.0; inputs * outputs];
    let mut trace = RoutingTrace {
        inputs,
        outputs,
        dim,
        couplings: Vec::with_capacity(iterations),
        sums: Vec::with_capacity(iterations),
        outputs_v: Vec::with_capacity(iterations),
        final_logits: Vec::new(),
    };
    for _ in 0..iterations {
        let mut c = b.clone();
        for row in c.chunks_exact_mut(outputs) {
            softmax_slice(row);
        }
        let mut s = vec![0.0; outputs * dim];
        for i in 0..inputs {
            for j in 0..outputs {
                let cij = c[i * outputs + j];
                let u = &uhat[(i * outputs + j) * dim..(i * outputs + j + 1) * dim];
                s[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(u)
                    .for_each(|(acc, x)| *acc += cij * x);
            }
        }
        let mut v = s.clone();
        for vj in v.chunks_exact_mut(dim) {
            squash_in_place(vj);
        }
        for i in 0..inputs {
            for j in 0..outputs {
                let u = &uhat[(i * outputs + j) * dim..(i * outputs + j + 1) * dim];
                let agreement: f64 = u
                    .iter()
                    .zip(&v[j * dim..(j + 1) * dim])
                    .map(|(a, b)| a * b)
                    .sum();
                b[i * outputs + j] += agreement;
            }
        }
        trace.couplings.push(c);
        trace.sums.push(s);
        trace.outputs_v.push(v);
    }
    trace.final_logits = b;
    trace
}

/// Gradient of the routed output with respect to the predictions, through
/// every unrolled iteration. Accumulates into `grad_uhat`.
pub(crate) fn route_backward_slice(
    trace: &RoutingTrace,
    uhat: &[f64],
    grad_out: &[f64],
    grad_uhat: &mut [f64],
) {
    let RoutingTrace {
        inputs,
        outputs,
        dim,
        ..
    } = *trace;
    let iterations = trace.couplings.len();
    // Gradient with respect to the logits produced by the current iteration.
    let mut grad_b = vec![0.0; inputs * outputs];
    let mut grad_s = vec![0.0; outputs * dim];
    let mut grad_c = vec![0.0; outputs];
    for r in (0..iterations).rev() {
        let c = &trace.couplings[r];
        let s = &trace.sums[r];
        let v = &trace.outputs_v[r];
        let mut grad_v = if r + 1 == iterations {
            grad_out.to_vec()
        } else {
            vec![0.0; outputs * dim]
        };
        // b_ij += û_ij · v_j
        if r + 1 < iterations {
            for i in 0..inputs {
                for j in 0..outputs {
                    let gb = grad_b[i * outputs + j];
                    if gb == 0.0 {
                        continue;
                    }
                    let at = (i * outputs + j) * dim;
                    for d in 0..dim {
                        grad_uhat[at + d] += gb * v[j * dim + d];
                        grad_v[j * dim + d] += gb * uhat[at + d];
                    }
                }
            }
        }
        for j in 0..outputs {
            squash_backward_into(
                &s[j * dim..(j + 1) * dim],
                &grad_v[j * dim..(j + 1) * dim],
                &mut grad_s[j * dim..(j + 1) * dim],
            );
        }
        // s_j = Σ_i c_ij û_ij, then c = softmax(b_prev)
        for i in 0..inputs {
            for j in 0..outputs {
                let at = (i * outputs + j) * dim;
                let cij = c[i * outputs + j];
                let mut dot = 0.0;
                for d in 0..dim {
                    let gs = grad_s[j * dim + d];
                    grad_uhat[at + d] += cij * gs;
                    dot += gs * uhat[at + d];
                }
                grad_c[j] = dot;
            }
            if r > 0 {
                let row = &c[i * outputs..(i + 1) * outputs];
                let weighted: f64 = row.iter().zip(grad_c.iter()).map(|(a, b)| a * b).sum();
                for j in 0..outputs {
                    grad_b[i * outputs + j] += row[j] * (grad_c[j] - weighted);
                }
            }
        }
    }
}

/// Routing-by-agreement over predictions shaped `inputs × outputs × dim`.
///
/// Logits start at zero; each iteration takes couplings as the softmax over
/// outputs, squashes the coupled sums and adds the agreement `û · v` to the
/// logits. Returns the outputs of the last iteration (`outputs × dim`).
pub fn route(predictions: &Tensor, iterations: usize) -> Result<(Tensor, RoutingState)> {
    let &[inputs, outputs, dim] = predictions.shape() else {
        bail!(
            Shape,
            "predictions must be inputs x outputs x dim, got {:?}",
            predictions.shape()
        );
    };
    if iterations == 0 {
        bail!(Argument, "routing needs at least one iteration");
    }
    if outputs == 0 || dim == 0 {
        bail!(
            Shape,
            "routing needs at least one output capsule of nonzero size"
        );
    }
    let trace = route_slice(predictions.data(), inputs, outputs, dim, iterations);
    let v = Tensor::from_parts(vec![outputs, dim], trace.output().to_vec());
    Ok((v, trace.state()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn squash_values() {
        assert!(close(&squash(&[1.0, 0.0]), &[0.5, 0.0], 1e-15));
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        let v = squash(&[6.0, 8.0]);
        assert!((norm(&v) - 100.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn squash_backward_matches_differences() {
        let s = [0.3, -1.2, 0.7, 2.1];
        let gv = [0.5, 0.25, -1.0, 0.75];
        let analytic = squash_backward(&s, &gv);
        let eps = 1e-6;
        for k in 0..s.len() {
            let mut p = s;
            p[k] += eps;
            let mut m = s;
            m[k] -= eps;
            let f = |x: &[f64]| squash(x).iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>();
            let numeric = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((numeric - analytic[k]).abs() < 1e-8);
        }
        assert_eq!(squash_backward(&[0.0, 0.0], &[1.0, 1.0]), vec![0.0, 0.0]);
    }

    fn two_way() -> Tensor {
        Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn single_iteration_by_hand() {
        let (v, st) = route(&two_way(), 1).unwrap();
        assert!(close(v.data(), &[0.2, 0.0, 0.0, 0.2], 1e-15));
        assert!(close(st.couplings.data(), &[0.5, 0.5], 1e-15));
        assert_eq!(st.iterations, 1);
    }

    #[test]
    fn symmetric_fixed_point() {
        let (v1, _) = route(&two_way(), 1).unwrap();
        for it in 2..6 {
            let (v, st) = route(&two_way(), it).unwrap();
            assert!(close(v.data(), v1.data(), 1e-15));
            assert!(close(st.couplings.data(), &[0.5, 0.5], 1e-15));
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(matches!(
            route(&two_way(), 0),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn single_output_takes_everything() {
        let data = vec![0.1, 0.2, -0.3, 0.5, 0.4, 0.0];
        let u = Tensor::new(vec![3, 1, 2], data.clone()).unwrap();
        let (v, st) = route(&u, 3).unwrap();
        assert!(st.couplings.data().iter().all(|&c| c == 1.0));
        let s = [0.1 - 0.3 + 0.4, 0.2 + 0.5];
        assert!(close(v.data(), &squash(&s), 1e-15));
    }

    #[test]
    fn equal_predictions_fix_direction() {
        let dir = [0.6, -0.8, 0.0];
        let mut data = Vec::new();
        for i in 0..5 {
            data.extend_from_slice(&dir);
            data.extend((0..3).map(|d| (i * 3 + d) as f64 * 0.1 - 0.4));
        }
        let u = Tensor::new(vec![5, 2, 3], data).unwrap();
        let (v, _) = route(&u, 3).unwrap();
        let v0 = &v.data()[..3];
        let n = norm(v0);
        assert!(close(&[v0[0] / n, v0[1] / n, v0[2] / n], &dir, 1e-12));
    }

    #[test]
    fn couplings_are_normalized() {
        let u = Tensor::new(
            vec![7, 4, 3],
            (0..84).map(|k| libm::sin(k as f64 * 1.7)).collect(),
        )
        .unwrap();
        let trace = route_slice(u.data(), 7, 4, 3, 3);
        for c in &trace.couplings {
            for row in c.chunks_exact(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for vj in trace.output().chunks_exact(3) {
            assert!(norm(vj) < 1.0);
        }
    }

    #[test]
    fn routing_backward_matches_differences() {
        let (n, j, d) = (5, 3, 4);
        let uhat: Vec<f64> = (0..n * j * d)
            .map(|k| libm::sin(k as f64 * 0.77) * 0.9)
            .collect();
        let weights: Vec<f64> = (0..j * d).map(|k| libm::cos(k as f64 * 1.3)).collect();
        let objective = |u: &[f64]| -> f64 {
            let t = route_slice(u, n, j, d, 3);
            t.output().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let trace = route_slice(&uhat, n, j, d, 3);
        let mut grad = vec![0.0; uhat.len()];
        route_backward_slice(&trace, &uhat, &weights, &mut grad);
        let eps = 1e-5;
        for k in 0..uhat.len() {
            let mut p = uhat.clone();
            p[k] += eps;
            let mut m = uhat.clone();
            m[k] -= eps;
            let numeric = (objective(&p) - objective(&m)) / (2.0 * eps);
            assert!(
                (numeric - grad[k]).abs() < 1e-8,
                "{k}: {numeric} vs {}",
                grad[k]
            );
        }
    }
}
