//! Network engine checks on the headline shape (40 inputs, three hidden layers of ten).

use mpc_imitation::dataset::{Dataset, Sample};
use mpc_imitation::features::{FeatureKind, FeatureVector};
use mpc_imitation::nn::{self, init_glorot, Activation, Mlp};
use mpc_imitation::rng::seeded;
use mpc_imitation::sl::{train_supervised, Architecture, TrainConfig};
use ndarray::{Array1, Array2};
use rand::Rng;

const DELTA_MAX: f64 = 0.4189;

fn headline(activation: Activation, seed: u64) -> Mlp {
    init_glorot(&[40, 10, 10, 10, 1], &[activation; 3], DELTA_MAX, seed).unwrap()
}

fn batch(rows: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut rng = seeded(seed);
    let x = Array2::from_shape_simple_fn((rows, 40), || rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_simple_fn(rows, || rng.random_range(-DELTA_MAX..DELTA_MAX));
    (x, y)
}

/// Copy of `net` with parameter `idx` (weights first, then biases, layer by layer) shifted by `h`.
fn nudged(net: &Mlp, mut idx: usize, h: f64) -> Mlp {
    let mut layers = net.layers().to_vec();
    for l in &mut layers {
        let nw = l.weights.len();
        if idx < nw {
            let cols = l.weights.ncols();
            l.weights[(idx / cols, idx % cols)] += h;
            return Mlp::new(layers, net.output_scale()).unwrap();
        }
        idx -= nw;
        if idx < l.biases.len() {
            l.biases[idx] += h;
            return Mlp::new(layers, net.output_scale()).unwrap();
        }
        idx -= l.biases.len();
    }
    panic!("parameter index out of range");
}

#[test]
fn backprop_matches_central_differences() {
    let h = 1e-5;
    for (i, act) in [Activation::Sigmoid, Activation::Tanh, Activation::Relu].into_iter().enumerate() {
        let net = headline(act, 11 + i as u64);
        let (x, y) = batch(16, 5 + i as u64);
        let (_, grads) = net.backward(x.view(), y.view());
        let analytic = grads.flatten();
        assert_eq!(analytic.len(), net.param_count());
        let fd: Vec<f64> = (0..analytic.len())
            .map(|p| {
                let lp = nudged(&net, p, h).loss_mse(x.view(), y.view());
                let lm = nudged(&net, p, -h).loss_mse(x.view(), y.view());
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff / norm;
        println!("{act}: relative gradient error {rel:e}");
        assert!(rel < 1e-6, "{act}: relative error {rel:e}");
    }
}

#[test]
fn overfits_one_sample() {
    let mut rng = seeded(9);
    let sample = Sample {
        features: FeatureVector {
            kind: FeatureKind::I40,
            values: (0..40).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
        label: 0.3,
    };
    let data = Dataset::from_samples(FeatureKind::I40, &[sample]).unwrap();
    let cfg = TrainConfig {
        epochs: 3000,
        learning_rate: 1e-2,
        early_stop_patience: 3000,
        ..TrainConfig::default()
    };
    let (net, _) = train_supervised(&data, &Architecture::headline(), &cfg, DELTA_MAX, 20).unwrap();
    let loss = net.loss_mse(data.features.view(), data.labels.view());
    assert!(loss < 1e-8, "loss {loss:e}");
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, act) in [Activation::Sigmoid, Activation::Tanh, Activation::Relu].into_iter().enumerate() {
        let net = headline(act, 100 + i as u64);
        let path = dir.path().join(format!("{act}.json"));
        nn::save(&net, &path).unwrap();
        let back = nn::load(&path).unwrap();
        assert_eq!(back.dims(), net.dims());
        for (a, b) in net.layers().iter().zip(back.layers()) {
            assert_eq!(a.activation, b.activation);
            assert!(a.weights.iter().zip(&b.weights).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(a.biases.iter().zip(&b.biases).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(net.output_scale().to_bits(), back.output_scale().to_bits());
        let (x, _) = batch(4, 1);
        for row in x.rows() {
            let v = row.to_vec();
            assert_eq!(net.forward(&v).to_bits(), back.forward(&v).to_bits());
        }
        // Saving the loaded net reproduces the file byte for byte.
        let again = dir.path().join("again.json");
        nn::save(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}
