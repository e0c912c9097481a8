use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dense::{axpy, dot};
use crate::numerics::{DenseMatrix, SplitMix64};

/// Default slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer activation; the output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { alpha: LEAKY_SLOPE }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network. Layer `k` maps `x ↦ W_k x + b_k`, `W_k` being
/// `sizes[k+1] × sizes[k]`; hidden layers are followed by the activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Per-layer values of a batched forward pass, samples as rows.
pub struct Trace {
    /// Inputs of every layer plus the network output.
    activations: Vec<DenseMatrix>,
    /// Pre-activation values of the hidden layers.
    pre: Vec<DenseMatrix>,
}

impl Trace {
    pub fn output(&self) -> &DenseMatrix {
        self.activations.last().expect("at least one layer")
    }
}

impl Mlp {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut SplitMix64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "reduction",
                format!("bad layer sizes {sizes:?}"),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DenseMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.uniform(-limit, limit)
            }));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn from_layers(
        weights: Vec<DenseMatrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid(
                "reduction",
                "need one bias per weight matrix",
            ));
        }
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != b.len() || (k > 0 && weights[k - 1].rows() != w.cols()) {
                return Err(Error::dim(format!("layer {k} does not chain")));
            }
        }
        let m = Self {
            weights,
            biases,
            activation,
        };
        if !m.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(m)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].cols()];
        s.extend(self.weights.iter().map(|w| w.rows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").rows()
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    /// Flattened parameters: per layer the weights row-major, then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w.as_slice());
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.weights.len() - 1;
        let mut a = x.to_vec();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: Vec<f64> = (0..w.rows()).map(|o| dot(w.row(o), &a) + b[o]).collect();
            if k < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        a
    }

    /// Batched forward pass keeping what backpropagation needs.
    pub fn forward_trace(&self, x: &DenseMatrix) -> Trace {
        let last = self.weights.len() - 1;
        let n = x.rows();
        let mut activations = vec![x.clone()];
        let mut pre = Vec::with_capacity(last);
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = activations.last().expect("input present");
            let mut z = DenseMatrix::zeros(n, w.rows());
            for s in 0..n {
                let xs = input.row(s);
                let zs = z.row_mut(s);
                for o in 0..w.rows() {
                    zs[o] = dot(w.row(o), xs) + b[o];
                }
            }
            if k < last {
                let mut a = z.clone();
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
                pre.push(z);
                activations.push(a);
            } else {
                activations.push(z);
            }
        }
        Trace { activations, pre }
    }

    /// Samples as rows in, samples as rows out.
    pub fn forward_batch(&self, x: &DenseMatrix) -> DenseMatrix {
        self.forward_trace(x)
            .activations
            .pop()
            .expect("output present")
    }

    /// Given `∂L/∂output` (samples as rows), returns the flattened parameter
    /// gradient and `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, d_out: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
        let layers = self.weights.len();
        let n = d_out.rows();
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(layers);
        let mut delta = d_out.clone();
        for k in (0..layers).rev() {
            if k < layers - 1 {
                let z = &trace.pre[k];
                for (d, zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= self.activation.derivative(*zv);
                }
            }
            let w = &self.weights[k];
            let input = &trace.activations[k];
            let mut gw = DenseMatrix::zeros(w.rows(), w.cols());
            let mut gb = vec![0.0; w.rows()];
            let mut d_in = DenseMatrix::zeros(n, w.cols());
            for s in 0..n {
                let ds = delta.row(s);
                let xs = input.row(s);
                for o in 0..w.rows() {
                    let g = ds[o];
                    if g != 0.0 {
                        axpy(g, xs, gw.row_mut(o));
                        axpy(g, w.row(o), d_in.row_mut(s));
                    }
                    gb[o] += g;
                }
            }
            grads.push((gw.into_vec(), gb));
            delta = d_in;
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads.into_iter().rev() {
            flat.extend(gw);
            flat.extend(gb);
        }
        (flat, delta)
    }
}
