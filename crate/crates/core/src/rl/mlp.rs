//! Dense tanh networks with a hand-written backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Fully connected network: tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

/// Activations saved by [`Mlp::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; entry 0 is the network input.
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("network shapes differ: {0:?} vs {1:?}")]
pub struct ShapeMismatch(pub Vec<usize>, pub Vec<usize>);

impl Mlp {
    /// Xavier-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|io| Dense {
                    w: Array2::zeros((io[1], io[0])),
                    b: Array1::zeros(io[1]),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.b.len()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").b.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w.t()) + &l.b;
            if i + 1 < n {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_trace(&self, x: &Array2<f64>) -> (Array2<f64>, Trace) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w.t()) + &l.b;
            inputs.push(h);
            h = if i + 1 < n { z.mapv(f64::tanh) } else { z };
        }
        (h, Trace { inputs })
    }

    /// Gradients of a scalar loss given `grad_out` = dL/d(output). Returns
    /// parameter gradients and dL/d(input).
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>) -> (Grads, Array2<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            let x = &trace.inputs[i];
            let l = &self.layers[i];
            grads.push(Dense {
                w: g.t().dot(x),
                b: g.sum_axis(Axis(0)),
            });
            let mut gx = g.dot(&l.w);
            if i > 0 {
                // x = tanh(z) of the previous layer
                gx.zip_mut_with(x, |d, &a| *d *= 1.0 - a * a);
            }
            g = gx;
        }
        grads.reverse();
        (Grads { layers: grads }, g)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in storage order: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter count");
        let mut it = p.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// target ← tau·source + (1 − tau)·target, elementwise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<(), ShapeMismatch> {
        if self.sizes() != source.sizes() {
            return Err(ShapeMismatch(self.sizes(), source.sizes()));
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.w.zip_mut_with(&s.w, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_mut_with(&s.b, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
        Ok(())
    }
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}
