//! Minimal fully connected network: ReLU hidden layers, linear output,
//! hand-derived backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn he_init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer activations from one forward pass; `[0]` is the input and the
/// last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input at least")
    }

    /// Activations of the last hidden layer.
    pub fn features(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.bias.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`, He-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Dense::he_init(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(&activations[i], &mut out);
            if i != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(out);
        }
        Trace { activations }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).activations.pop().expect("non-empty")
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
        }
    }

    /// Accumulates dLoss/dparams into `grads` given dLoss/doutput.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grads: &mut Gradients) {
        let last = self.layers.len() - 1;
        let mut delta = d_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i != last {
                for (d, a) in delta.iter_mut().zip(&trace.activations[i + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.activations[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.bias[i][o] += d;
                let row = &mut grads.weights[i][o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                    if d != 0.0 {
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
                    }
                }
                delta = prev;
            }
        }
    }

    /// Plain gradient-descent step.
    pub fn step(&mut self, grads: &Gradients, lr: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}
