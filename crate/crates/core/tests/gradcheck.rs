use intersect_core::nn::{LayerSpec, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

/// loss = Σ c_i · out_i for a fixed random projection `c`.
fn loss(net: &Network<f64>, x: &[f64], c: &[f64]) -> f64 {
    net.predict(x).unwrap().iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Sign pattern of every ReLU input, used to detect kink crossings.
fn relu_mask(net: &mut Network<f64>, specs: &[LayerSpec], x: &[f64]) -> Vec<bool> {
    net.forward(x).unwrap();
    let acts = net.activations().unwrap();
    let mask = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, LayerSpec::Relu))
        .flat_map(|(i, _)| acts[i].iter().map(|v| *v > 0.0))
        .collect();
    net.zero_grad();
    mask
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Returns (max parameter error, max input error, entries checked). Entries
/// whose perturbation crosses a ReLU kink are skipped.
fn check(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> (f64, f64, usize) {
    let mut net = Network::<f64>::new(input_shape, specs, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let n_in: usize = input_shape.iter().product();
    let x: Vec<f64> = (0..2 * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut flat = net.flat_params();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    net.set_flat_params(&flat).unwrap();
    let c: Vec<f64> = (0..2 * net.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = relu_mask(&mut net, specs, &x);

    net.zero_grad();
    net.forward(&x).unwrap();
    let dx = net.backward(&c).unwrap();
    let grads = net.flat_grads();

    let mut checked = 0;
    let mut worst_p: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] += STEP;
        net.set_flat_params(&p).unwrap();
        let smooth_up = relu_mask(&mut net, specs, &x) == base;
        let up = loss(&net, &x, &c);
        p[i] -= 2.0 * STEP;
        net.set_flat_params(&p).unwrap();
        let smooth_down = relu_mask(&mut net, specs, &x) == base;
        let down = loss(&net, &x, &c);
        if smooth_up && smooth_down {
            worst_p = worst_p.max(rel_err(grads[i], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    }
    net.set_flat_params(&flat).unwrap();

    let mut worst_x: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += STEP;
        let smooth_up = relu_mask(&mut net, specs, &xp) == base;
        let up = loss(&net, &xp, &c);
        xp[i] -= 2.0 * STEP;
        let smooth_down = relu_mask(&mut net, specs, &xp) == base;
        let down = loss(&net, &xp, &c);
        if smooth_up && smooth_down {
            worst_x = worst_x.max(rel_err(dx[i], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    }
    (worst_p, worst_x, checked)
}

fn assert_grad(input_shape: &[usize], specs: &[LayerSpec]) {
    let mut checked = 0;
    for seed in 0..5 {
        let (p, x, n) = check(input_shape, specs, seed);
        assert!(p < TOL, "parameter gradient error {p} for {specs:?}");
        assert!(x < TOL, "input gradient error {x} for {specs:?}");
        checked += n;
    }
    assert!(checked > 0, "every entry crossed a ReLU kink");
}

#[test]
fn dense_gradients() {
    assert_grad(&[5], &[LayerSpec::Dense { out_dim: 4 }]);
}

#[test]
fn conv_gradients() {
    assert_grad(
        &[2, 6, 7],
        &[LayerSpec::Conv2d {
            out_channels: 3,
            kernel: 3,
            stride: 2,
        }],
    );
    assert_grad(
        &[1, 5, 5],
        &[LayerSpec::Conv2d {
            out_channels: 2,
            kernel: 2,
            stride: 1,
        }],
    );
}

#[test]
fn relu_gradients() {
    assert_grad(&[6], &[LayerSpec::Relu]);
}

#[test]
fn flatten_gradients() {
    assert_grad(
        &[2, 3, 3],
        &[
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 2 },
        ],
    );
}

#[test]
fn softmax_gradients() {
    assert_grad(&[4], &[LayerSpec::Dense { out_dim: 3 }, LayerSpec::Softmax]);
}

#[test]
fn full_stack_gradients() {
    assert_grad(
        &[2, 8, 10],
        &[
            LayerSpec::Conv2d {
                out_channels: 3,
                kernel: 4,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 5 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: 3 },
            LayerSpec::Softmax,
        ],
    );
}

#[test]
fn softmax_rows_are_distributions() {
    let net = Network::<f32>::new(&[6], &[LayerSpec::Dense { out_dim: 3 }, LayerSpec::Softmax], 3)
        .unwrap();
    let x: Vec<f32> = (0..60).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
    for row in net.predict(&x).unwrap().chunks(3) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_dense_stacks(seed in 0u64..10_000, h in 1usize..6, o in 1usize..4) {
        let specs = [
            LayerSpec::Dense { out_dim: h },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: o },
        ];
        let (p, x, _) = check(&[3], &specs, seed);
        prop_assert!(p < TOL);
        prop_assert!(x < TOL);
    }

    #[test]
    fn serialization_round_trip(seed in 0u64..10_000, oc in 1usize..4, hidden in 1usize..8) {
        let specs = [
            LayerSpec::Conv2d { out_channels: oc, kernel: 2, stride: 2 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: hidden },
        ];
        let net = Network::<f32>::new(&[2, 4, 6], &specs, seed).unwrap();
        let bytes = intersect_core::nn::io::to_bytes(&net);
        let back: Network<f32> = intersect_core::nn::io::from_bytes(&bytes, &[2, 4, 6]).unwrap();
        let a: Vec<u32> = net.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        let x: Vec<f32> = (0..48).map(|i| (i as f32 * 0.3).sin()).collect();
        prop_assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
    }
}
