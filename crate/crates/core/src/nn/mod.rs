//! Small fully connected networks in 64-bit floats.
//!
//! Each layer computes `a(W x + b)`. Controllers ([`Mlp`]) end in a single
//! unit with a scaled `tanh`, so the steering output stays strictly inside
//! `(-output_scale, output_scale)`.

mod adam;
mod io;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::AdamState;
pub use io::{load, save};

/// `tanh` rounds to exactly 1 beyond |z| ~ 19; the head is capped below it so
/// the output bound stays strict in floating point.
const TANH_CAP: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Identity; used by critic heads, never by controllers.
    Linear,
    /// `scale * tanh(z)`, the controller output head.
    ScaledTanhOutput,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
            Activation::ScaledTanhOutput => "scaled_tanh_output",
        }
    }

    #[inline]
    pub fn apply(self, z: f64, scale: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
            Activation::ScaledTanhOutput => scale * z.tanh().clamp(-TANH_CAP, TANH_CAP),
        }
    }

    /// Derivative with respect to the pre-activation, written in terms of the output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64, scale: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
            Activation::ScaledTanhOutput => {
                let t = y / scale;
                scale * (1.0 - t * t)
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            "scaled_tanh_output" => Ok(Activation::ScaledTanhOutput),
            other => Err(Error::invalid(format!(
                "unknown activation `{other}` (expected relu, tanh, sigmoid, linear or scaled_tanh_output)"
            ))),
        }
    }
}

/// One fully connected layer; `weights` is `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            biases: Array1::zeros(layer.biases.raw_dim()),
        }
    }
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-a..a)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Batch forward: rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>, scale: f64) -> Array2<f64> {
        let mut z = self.preactivation_batch(x);
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v, scale));
        z
    }

    /// Batch backward given the layer input, its output and the upstream gradient.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        out: ArrayView2<f64>,
        dout: ArrayView2<f64>,
        scale: f64,
        want_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        let act = self.activation;
        let mut dz = dout.to_owned();
        ndarray::Zip::from(&mut dz).and(&out).for_each(|d, &y| *d *= act.derivative_from_output(y, scale));
        self.backward_preactivation(x, dz.view(), want_input_grad)
    }

    /// Backward pass for a gradient given directly on the pre-activation.
    pub fn backward_preactivation(
        &self,
        x: ArrayView2<f64>,
        dz: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        let grad = DenseGrad {
            weights: dz.t().dot(&x),
            biases: dz.sum_axis(Axis(0)),
        };
        let dx = want_input_grad.then(|| dz.dot(&self.weights));
        (grad, dx)
    }

    /// `x W^T + b` without the activation.
    pub fn preactivation_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.biases;
        z
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64], scale: f64) {
        let w = self.weights.as_slice().expect("standard layout");
        let n = x.len();
        for (o, (row, b)) in out.iter_mut().zip(w.chunks_exact(n).zip(self.biases.iter())) {
            let mut acc = *b;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *o = self.activation.apply(acc, scale);
        }
    }

    fn ensure_standard_layout(&mut self) {
        if !self.weights.is_standard_layout() {
            self.weights = self.weights.as_standard_layout().into_owned();
        }
    }
}

/// Per-layer parameter gradients, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        Self {
            layers: layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weights.iter().chain(g.biases.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.biases.iter()).copied())
            .collect()
    }
}

/// Intermediate outputs of a batch forward pass, one matrix per layer.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub outputs: Vec<Array2<f64>>,
}

impl BatchTrace {
    /// Network output as a column.
    pub fn prediction(&self) -> ArrayView1<'_, f64> {
        self.outputs.last().expect("at least one layer").column(0)
    }
}

/// Scratch space for allocation-free single-sample inference.
#[derive(Debug, Clone, Default)]
pub struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Feed-forward steering controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    output_scale: f64,
}

impl Mlp {
    /// Checks that dimensions chain, only the last layer is the scaled-tanh
    /// head, and the output is one unit.
    pub fn new(mut layers: Vec<Dense>, output_scale: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network without layers"));
        }
        if !(output_scale > 0.0) || !output_scale.is_finite() {
            return Err(Error::invalid(format!("output scale must be positive, got {output_scale}")));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].outputs(),
                    got: w[1].inputs(),
                });
            }
        }
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.outputs() {
                return Err(Error::DimensionMismatch {
                    expected: l.outputs(),
                    got: l.biases.len(),
                });
            }
            let is_head = l.activation == Activation::ScaledTanhOutput;
            if is_head != (i == last) {
                return Err(Error::invalid("exactly the last layer must use scaled_tanh_output"));
            }
            if l.activation == Activation::Linear {
                return Err(Error::invalid("controllers have no linear layers"));
            }
        }
        if layers[last].outputs() != 1 {
            return Err(Error::invalid("controller output must be a single unit"));
        }
        layers.iter_mut().for_each(Dense::ensure_standard_layout);
        Ok(Self { layers, output_scale })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Layer widths including input and output, e.g. `[40, 10, 10, 10, 1]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Dense::outputs)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Single-sample inference. Panics if `input` has the wrong length.
    pub fn forward(&self, input: &[f64]) -> f64 {
        self.forward_with(input, &mut ForwardScratch::default())
    }

    pub fn forward_with(&self, input: &[f64], scratch: &mut ForwardScratch) -> f64 {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "network expects {} inputs, got {}",
            self.input_dim(),
            input.len()
        );
        let ForwardScratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(input);
        for layer in &self.layers {
            b.clear();
            b.resize(layer.outputs(), 0.0);
            layer.forward_into(a, b, self.output_scale);
            std::mem::swap(a, b);
        }
        a[0]
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> BatchTrace {
        assert_eq!(x.ncols(), self.input_dim(), "batch has wrong feature count");
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().map_or(x, |o| o.view());
            let out = layer.forward_batch(input, self.output_scale);
            outputs.push(out);
        }
        BatchTrace { outputs }
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.forward_batch(x).prediction().to_owned()
    }

    /// Mean squared steering error over the batch.
    pub fn loss_mse(&self, x: ArrayView2<f64>, labels: ArrayView1<f64>) -> f64 {
        assert!(!labels.is_empty(), "empty batch");
        let pred = self.predict_batch(x);
        pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / labels.len() as f64
    }

    /// Loss and exact gradient of [`Mlp::loss_mse`].
    pub fn backward(&self, x: ArrayView2<f64>, labels: ArrayView1<f64>) -> (f64, Gradients) {
        assert!(!labels.is_empty(), "empty batch");
        let trace = self.forward_batch(x);
        let m = labels.len() as f64;
        let pred = trace.prediction();
        let loss = pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / m;
        let dout = Array1::from_iter(pred.iter().zip(labels).map(|(p, l)| 2.0 * (p - l) / m));
        (loss, self.backward_output(x, &trace, dout.view()))
    }

    /// Backpropagates an arbitrary gradient on the network output.
    pub fn backward_output(&self, x: ArrayView2<f64>, trace: &BatchTrace, dout: ArrayView1<f64>) -> Gradients {
        self.backward_from(x, trace, dout.insert_axis(Axis(1)).to_owned(), false)
    }

    /// Backpropagates a gradient given on the output unit's pre-activation,
    /// which stays informative where the bounded head is saturated.
    pub fn backward_head_preactivation(&self, x: ArrayView2<f64>, trace: &BatchTrace, dz: ArrayView1<f64>) -> Gradients {
        self.backward_from(x, trace, dz.insert_axis(Axis(1)).to_owned(), true)
    }

    /// Pre-activation of the output unit for each row of the traced batch.
    pub fn head_preactivation(&self, x: ArrayView2<f64>, trace: &BatchTrace) -> Array1<f64> {
        let n = self.layers.len();
        let input = if n == 1 { x } else { trace.outputs[n - 2].view() };
        self.layers[n - 1].preactivation_batch(input).column(0).to_owned()
    }

    fn backward_from(&self, x: ArrayView2<f64>, trace: &BatchTrace, mut upstream: Array2<f64>, head_pre: bool) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = if i == 0 { x } else { trace.outputs[i - 1].view() };
            let (g, dx) = if head_pre && i == last {
                layer.backward_preactivation(input, upstream.view(), i > 0)
            } else {
                layer.backward_batch(input, trace.outputs[i].view(), upstream.view(), self.output_scale, i > 0)
            };
            grads.push(g);
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

/// Glorot-initialized controller with the given widths (input first, output
/// last) and one activation per hidden layer.
pub fn init_glorot(dims: &[usize], hidden: &[Activation], output_scale: f64, seed: u64) -> Result<Mlp> {
    if dims.len() < 2 || hidden.len() != dims.len() - 2 {
        return Err(Error::invalid(format!(
            "{} widths need {} hidden activations, got {}",
            dims.len(),
            dims.len().saturating_sub(2),
            hidden.len()
        )));
    }
    if dims.iter().any(|d| *d == 0) {
        return Err(Error::invalid("zero-width layer"));
    }
    let mut rng = crate::rng::seeded(seed);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = hidden.get(i).copied().unwrap_or(Activation::ScaledTanhOutput);
            Dense::glorot(w[0], w[1], act, &mut rng)
        })
        .collect();
    Mlp::new(layers, output_scale)
}

/// `target <- tau * live + (1 - tau) * target`, parameter by parameter.
pub fn soft_update(target: &mut [Dense], live: &[Dense], tau: f64) {
    for (t, l) in target.iter_mut().zip(live) {
        ndarray::Zip::from(&mut t.weights).and(&l.weights).for_each(|t, &l| *t = tau * l + (1.0 - tau) * *t);
        ndarray::Zip::from(&mut t.biases).and(&l.biases).for_each(|t, &l| *t = tau * l + (1.0 - tau) * *t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_simple_fn(rows, || rng.random_range(-0.4..0.4));
        (x, y)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::new(
            vec![Dense::zeros(4, 3, Activation::Sigmoid), Dense::zeros(3, 1, Activation::ScaledTanhOutput)],
            0.4189,
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]), 0.0);
    }

    #[test]
    fn hand_evaluated_one_one_one() {
        let hidden = Dense {
            weights: array![[1.0]],
            biases: array![0.0],
            activation: Activation::Relu,
        };
        let head = Dense {
            weights: array![[1.0]],
            biases: array![0.0],
            activation: Activation::ScaledTanhOutput,
        };
        let net = Mlp::new(vec![hidden, head], 1.0).unwrap();
        assert!((net.forward(&[0.5]) - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn output_is_strictly_bounded() {
        let net = init_glorot(&[5, 8, 1], &[Activation::Relu], 0.4189, 1).unwrap();
        let mut big = net.clone();
        big.layers_mut()[1].weights.mapv_inplace(|w| w * 1e3);
        for x in [[10.0; 5], [-10.0; 5], [0.3; 5]] {
            assert!(net.forward(&x).abs() < 0.4189);
            assert!(big.forward(&x).abs() < 0.4189);
        }
    }

    #[test]
    #[should_panic(expected = "network expects")]
    fn wrong_input_length_panics() {
        init_glorot(&[3, 2, 1], &[Activation::Tanh], 1.0, 0).unwrap().forward(&[1.0]);
    }

    #[test]
    fn structural_validation() {
        let bad_chain = Mlp::new(
            vec![Dense::zeros(4, 3, Activation::Relu), Dense::zeros(2, 1, Activation::ScaledTanhOutput)],
            1.0,
        );
        assert!(bad_chain.is_err());
        let no_head = Mlp::new(vec![Dense::zeros(4, 1, Activation::Tanh)], 1.0);
        assert!(no_head.is_err());
        assert!(init_glorot(&[4, 3, 1], &[], 1.0, 0).is_err());
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let net = init_glorot(&[6, 7, 5, 1], &[Activation::Sigmoid, Activation::Tanh], 0.4, 3).unwrap();
        let (x, _) = random_batch(9, 6, 4);
        let batch = net.predict_batch(x.view());
        for (row, b) in x.rows().into_iter().zip(batch.iter()) {
            assert!((net.forward(row.as_slice().unwrap()) - b).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let hidden = Dense {
            weights: array![[0.0]],
            biases: array![0.0],
            activation: Activation::Relu,
        };
        let head = Dense {
            weights: array![[0.0]],
            biases: array![0.1f64.atanh()],
            activation: Activation::ScaledTanhOutput,
        };
        let net = Mlp::new(vec![hidden, head], 1.0).unwrap();
        let loss = net.loss_mse(array![[0.0]].view(), array![0.3].view());
        assert!((loss - 0.04).abs() < 1e-12);
        let perfect = net.loss_mse(array![[0.0], [1.0]].view(), array![0.1, 0.1].view());
        assert!(perfect < 1e-30);
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let net = init_glorot(&[4, 6, 1], &[Activation::Relu], 0.4, 8).unwrap();
        let (x, y) = random_batch(12, 4, 9);
        let whole = net.loss_mse(x.view(), y.view());
        let mean = (0..12)
            .map(|i| net.loss_mse(x.slice(ndarray::s![i..i + 1, ..]), y.slice(ndarray::s![i..i + 1])))
            .sum::<f64>()
            / 12.0;
        assert!((whole - mean).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        let net = init_glorot(&[4, 6, 1], &[Activation::Tanh], 0.4, 2).unwrap();
        let (x, _) = random_batch(10, 4, 3);
        let y = net.predict_batch(x.view());
        let (loss, g) = net.backward(x.view(), y.view());
        assert!(loss < 1e-30);
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gradient_scales_with_residual() {
        let net = init_glorot(&[5, 6, 6, 1], &[Activation::Sigmoid, Activation::Relu], 0.4, 5).unwrap();
        let (x, y) = random_batch(16, 5, 6);
        let pred = net.predict_batch(x.view());
        let y2 = &pred - &((&pred - &y) * 2.0);
        let (_, g1) = net.backward(x.view(), y.view());
        let (_, g2) = net.backward(x.view(), y2.view());
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let dims = [40, 10, 10, 10, 1];
        let acts = [Activation::Sigmoid; 3];
        let a = init_glorot(&dims, &acts, 0.4189, 7).unwrap();
        let b = init_glorot(&dims, &acts, 0.4189, 7).unwrap();
        let c = init_glorot(&dims, &acts, 0.4189, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.layers() {
            let bound = (6.0 / (l.inputs() + l.outputs()) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.biases.iter().all(|b| *b == 0.0));
        }
        assert_eq!(a.dims(), dims.to_vec());
    }

    #[test]
    fn mirror_built_net_is_odd() {
        // tanh hidden layer with zero biases is odd; so is the head.
        let net = init_glorot(&[6, 8, 1], &[Activation::Tanh], 0.4, 4).unwrap();
        let x = [0.3, -0.2, 0.8, 0.1, -0.5, 0.05];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((net.forward(&x) + net.forward(&neg)).abs() < 1e-15);
    }

    #[test]
    fn soft_update_extremes() {
        let live = init_glorot(&[3, 4, 1], &[Activation::Relu], 1.0, 1).unwrap();
        let mut target = init_glorot(&[3, 4, 1], &[Activation::Relu], 1.0, 2).unwrap();
        let before = target.clone();
        soft_update(target.layers_mut(), live.layers(), 0.0);
        assert_eq!(target, before);
        soft_update(target.layers_mut(), live.layers(), 1.0);
        assert_eq!(target, live);
    }

    #[test]
    fn activation_names_round_trip() {
        for a in [
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Linear,
            Activation::ScaledTanhOutput,
        ] {
            assert_eq!(a.name().parse::<Activation>().unwrap(), a);
        }
        let err = "swish".parse::<Activation>().unwrap_err().to_string();
        assert!(err.contains("swish"));
    }
}
