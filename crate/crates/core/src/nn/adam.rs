use super::{Dense, DenseGrad, Gradients};

/// Moments of parameters whose gradient stays zero (dead relu units) decay
/// geometrically into the subnormal range, where arithmetic is many times
/// slower. They are flushed to zero well before that.
const FLUSH: f64 = 1e-150;

#[inline]
fn flush(x: f64, below: f64) -> f64 {
    if x.abs() < below {
        0.0
    } else {
        x
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(layers: &[Dense], learning_rate: f64) -> Self {
        Self {
            m: layers.iter().map(DenseGrad::zeros_like).collect(),
            v: layers.iter().map(DenseGrad::zeros_like).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Panics if the gradient shapes do not mirror the layers.
    pub fn step(&mut self, layers: &mut [Dense], grads: &Gradients) {
        assert_eq!(layers.len(), grads.layers.len(), "gradient/layer count mismatch");
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = self.step as i32;
        let lr_t = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let eps_t = eps * (1.0 - b2.powi(t)).sqrt();
        for (((layer, g), m), v) in layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(layer.weights.raw_dim(), g.weights.raw_dim(), "gradient shape mismatch");
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let gs = g.weights.iter().chain(g.biases.iter());
            let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
            let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = flush(b1 * *m + (1.0 - b1) * g, FLUSH);
                *v = flush(b2 * *v + (1.0 - b2) * g * g, FLUSH * FLUSH);
                // Equivalent to lr * m_hat / (sqrt(v_hat) + eps).
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            }
        }
    }
}
