use super::*;
use crate::numerics::AdamConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_arch() -> CapsArch {
    CapsArch {
        stem: StemArch {
            input_side: 4,
            in_channels: 2,
            conv1_kernel: 2,
            conv1_filters: 4,
            conv2_kernel: 2,
            conv2_filters: 8,
        },
        primary_dim: 4,
        digit_dim: 4,
        classes: 4,
        routing_iterations: 3,
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    t
}

fn loss_of(params: &CapsNetParams, x: &Tensor, labels: &[usize]) -> f64 {
    let (d, _) = forward(params, x).unwrap();
    batch_margin_loss(&d, labels, &MarginLossConfig::default())
        .unwrap()
        .0
}

#[test]
fn standard_shapes() {
    let arch = CapsArch::standard(InputVariant::Complex);
    assert_eq!(arch.primary_count(), 1152);
    assert_eq!(arch.primary_types(), 32);
    let p = CapsNetParams::zeros(arch).unwrap();
    let x = Tensor::zeros(&[14, 14, 2]);
    let (digits, trace) = forward(&p, &x).unwrap();
    assert_eq!(digits.shape(), &[1, 4, 8]);
    assert_eq!(trace.conv1_output().shape(), &[1, 9, 9, 128]);
    assert_eq!(trace.conv2_output().shape(), &[1, 6, 6, 256]);
    assert_eq!(trace.primary_capsules().shape(), &[1, 1152, 8]);
    assert_eq!(trace.predictions().shape(), &[1, 1152, 4, 8]);
    assert!(digits.data().iter().all(|&v| v == 0.0));
    assert!(forward(&p, &Tensor::zeros(&[14, 14, 1])).is_err());
}

#[test]
fn parameter_counts_by_variant() {
    let c = CapsNetParams::zeros(CapsArch::standard(InputVariant::Complex)).unwrap();
    let a = CapsNetParams::zeros(CapsArch::standard(InputVariant::Absolute)).unwrap();
    let transforms = 1152 * 4 * 8 * 8;
    let conv2 = 4 * 4 * 128 * 256 + 256;
    assert_eq!(c.param_count(), 6 * 6 * 2 * 128 + 128 + conv2 + transforms);
    assert_eq!(a.param_count(), 6 * 6 * 128 + 128 + conv2 + transforms);
    let (cs, as_) = (c.shapes(), a.shapes());
    assert_eq!(cs[0], vec![6, 6, 2, 128]);
    assert_eq!(as_[0], vec![6, 6, 1, 128]);
    assert_eq!(cs[1..], as_[1..]);
}

#[test]
fn digit_capsules_are_shorter_than_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = CapsNetParams::init(CapsArch::standard(InputVariant::Complex), &mut rng).unwrap();
    let x = random_tensor(&[2, 14, 14, 2], &mut rng);
    let (digits, trace) = forward(&p, &x).unwrap();
    for norms in capsule_norms(&digits) {
        assert!(norms.iter().all(|&n| n < 1.0));
    }
    let st = trace.routing_state(1);
    assert_eq!(st.couplings.shape(), &[1152, 4]);
    assert_eq!(st.coupling_history.len(), 3);
    for c in &st.coupling_history {
        for row in c.data().chunks_exact(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn decisions() {
    assert_eq!(decide(&[0.1, 0.8, 0.2, 0.1]), 1);
    assert_eq!(decide(&[0.5, 0.5, 0.1, 0.1]), 0);
    let norms = [0.3, 0.1, 0.7, 0.69];
    let squashed: Vec<f64> = norms.iter().map(|n| n * n * n + 2.0).collect();
    assert_eq!(decide(&norms), decide(&squashed));
}

#[test]
fn single_digit_margin_loss() {
    let mut v = Tensor::zeros(&[4, 8]);
    for (k, n) in [0.2, 0.1, 0.95, 0.3].into_iter().enumerate() {
        v.data_mut()[k * 8 + 3] = n;
    }
    let l = margin_loss(&v, 2, &MarginLossConfig::default()).unwrap();
    assert!((l - 0.025).abs() < 1e-15);
    assert!(margin_loss(&v, 7, &MarginLossConfig::default()).is_err());
}

fn check_gradients(seed: u64, batch: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = CapsNetParams::init(tiny_arch(), &mut rng).unwrap();
    let x = random_tensor(&[batch, 4, 4, 2], &mut rng);
    let labels: Vec<usize> = (0..batch).map(|k| (k * 3 + 1) % 4).collect();
    let (digits, trace) = forward(&params, &x).unwrap();
    let (_, g) = batch_margin_loss(&digits, &labels, &MarginLossConfig::default()).unwrap();
    let grads = backward(&params, &trace, &g).unwrap();

    let eps = 1e-4;
    for (t, name) in PARAM_NAMES.iter().enumerate() {
        let analytic = grads.tensors()[t].data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let mut p = params.clone();
            p.tensors_mut()[t].data_mut()[k] += eps;
            let up = loss_of(&p, &x, &labels);
            p.tensors_mut()[t].data_mut()[k] -= 2.0 * eps;
            let down = loss_of(&p, &x, &labels);
            *n = (up - down) / (2.0 * eps);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let size: f64 = analytic.iter().chain(&numeric).map(|a| a * a).sum();
        let rel = libm::sqrt(diff) / libm::sqrt(size).max(1e-12);
        assert!(rel < 1e-4, "seed {seed}, {name}: relative error {rel}");
        assert!(size > 0.0, "{name}: gradient vanished");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (seed, batch) in [(1, 1), (2, 2), (3, 3), (4, 4), (5, 5)] {
        check_gradients(seed, batch);
    }
}

#[test]
fn training_is_deterministic_and_rejects_empty_batches() {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&[5, 4, 4, 2], &mut rng);
    let labels = [0, 1, 2, 3, 0];
    let run = || {
        let mut p = CapsNetParams::init(arch, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut opt = optimizer(&p, AdamConfig::default());
        for _ in 0..2 {
            train_step(&mut p, &mut opt, &x, &labels, &MarginLossConfig::default()).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
    let mut p = CapsNetParams::init(arch, &mut rng).unwrap();
    let mut opt = optimizer(&p, AdamConfig::default());
    let empty = Tensor::zeros(&[0, 4, 4, 2]);
    assert!(matches!(
        train_step(&mut p, &mut opt, &empty, &[], &MarginLossConfig::default()),
        Err(crate::Error::Argument(_))
    ));
}

#[test]
fn loss_drops_on_a_small_problem() {
    // Four separable classes: a bright quadrant per class plus noise.
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400;
    let mut x = Tensor::zeros(&[n, 4, 4, 2]);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % 4;
        labels.push(class);
        let (qy, qx) = (class / 2 * 2, class % 2 * 2);
        for y in 0..4 {
            for xx in 0..4 {
                for c in 0..2 {
                    let inside = (qy..qy + 2).contains(&y) && (qx..qx + 2).contains(&xx);
                    let v = if inside { 1.0 } else { 0.0 } + rng.random_range(-0.2..0.2);
                    x.data_mut()[((s * 4 + y) * 4 + xx) * 2 + c] = v;
                }
            }
        }
    }
    let mut p = CapsNetParams::init(arch, &mut rng).unwrap();
    let mut opt = optimizer(&p, AdamConfig::default());
    let initial = loss_of(&p, &x, &labels);
    for step in 0..200 {
        let lo = (step * 20) % n;
        let batch = Tensor::new(
            vec![20, 4, 4, 2],
            x.data()[lo * 32..(lo + 20) * 32].to_vec(),
        )
        .unwrap();
        train_step(
            &mut p,
            &mut opt,
            &batch,
            &labels[lo..lo + 20],
            &MarginLossConfig::default(),
        )
        .unwrap();
    }
    let last = loss_of(&p, &x, &labels);
    assert!(last < initial, "{last} >= {initial}");
}
