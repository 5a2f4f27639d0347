use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::nn::{Activation, Dense, Gradients};

/// `Q(s, a)`: the state passes one relu layer, the action joins at the
/// second relu layer, and a linear unit reads the value.
///
/// The action enters divided by `action_scale`, so it carries the same
/// weight as a unit-sized hidden feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub layers: Vec<Dense>,
    pub action_scale: f64,
}

/// Intermediate outputs of a batch evaluation.
#[derive(Debug, Clone)]
pub struct CriticTrace {
    h1: Array2<f64>,
    z: Array2<f64>,
    h2: Array2<f64>,
    pub q: Array2<f64>,
}

impl Critic {
    pub fn new(state_dim: usize, hidden: [usize; 2], action_scale: f64, seed: u64) -> Self {
        assert!(action_scale > 0.0, "action scale must be positive");
        let mut rng = crate::rng::seeded(seed);
        let mut out = Dense::glorot(hidden[1], 1, Activation::Linear, &mut rng);
        // Small final weights keep the initial values near zero.
        out.weights.mapv_inplace(|w| w * 1e-2);
        Self {
            layers: vec![
                Dense::glorot(state_dim, hidden[0], Activation::Relu, &mut rng),
                Dense::glorot(hidden[0] + 1, hidden[1], Activation::Relu, &mut rng),
                out,
            ],
            action_scale,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn forward(&self, s: ArrayView2<f64>, a: ArrayView1<f64>) -> CriticTrace {
        let h1 = self.layers[0].forward_batch(s, 1.0);
        let a = a.mapv(|a| a / self.action_scale);
        let z = concatenate![Axis(1), h1, a.insert_axis(Axis(1))];
        let h2 = self.layers[1].forward_batch(z.view(), 1.0);
        let q = self.layers[2].forward_batch(h2.view(), 1.0);
        CriticTrace { h1, z, h2, q }
    }

    pub fn q(&self, s: ArrayView2<f64>, a: ArrayView1<f64>) -> Array1<f64> {
        self.forward(s, a).q.column(0).to_owned()
    }

    /// Parameter gradients for an upstream gradient `dq` on the values, and
    /// the gradient with respect to the action.
    pub fn backward(&self, s: ArrayView2<f64>, trace: &CriticTrace, dq: ArrayView1<f64>) -> (Gradients, Array1<f64>) {
        let dq = dq.insert_axis(Axis(1));
        let (g3, dh2) = self.layers[2].backward_batch(trace.h2.view(), trace.q.view(), dq, 1.0, true);
        let dh2 = dh2.expect("input gradient requested");
        let (g2, dz) = self.layers[1].backward_batch(trace.z.view(), trace.h2.view(), dh2.view(), 1.0, true);
        let dz = dz.expect("input gradient requested");
        let width = trace.h1.ncols();
        let dh1 = dz.slice(s![.., ..width]);
        let da = dz.column(width).mapv(|g| g / self.action_scale);
        let (g1, _) = self.layers[0].backward_batch(s, trace.h1.view(), dh1, 1.0, false);
        (Gradients { layers: vec![g1, g2, g3] }, da)
    }

    /// `dQ/da` for each row, without parameter gradients of the first layer.
    pub fn action_gradient(&self, s: ArrayView2<f64>, a: ArrayView1<f64>) -> Array1<f64> {
        let trace = self.forward(s, a);
        let ones = Array1::ones(a.len());
        let (_, dh2) = self.layers[2].backward_batch(trace.h2.view(), trace.q.view(), ones.view().insert_axis(Axis(1)), 1.0, true);
        let dh2 = dh2.expect("input gradient requested");
        let act = self.layers[1].activation;
        let mut dz2 = dh2;
        ndarray::Zip::from(&mut dz2)
            .and(&trace.h2)
            .for_each(|d, &y| *d *= act.derivative_from_output(y, 1.0));
        // Only the action column of the second layer's weights is needed.
        let w_a = self.layers[1].weights.column(trace.h1.ncols());
        dz2.dot(&w_a) / self.action_scale
    }
}
