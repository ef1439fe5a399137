//! Dense feedforward value network with ReLU hidden layers and a linear head.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// One dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradient with the same shape as the network.
pub type Gradient = Mlp;

impl Mlp {
    /// Layer sizes `[input, hidden.., output]`, all weights zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("hidden_layers", "network needs positive input and output sizes"));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-uniform weights, zero biases.
    pub fn random<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().expect("output layer"))
    }

    /// Input followed by each layer's post-activation output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().expect("previous"), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Gradient of `0.5 * (target - Q[action])^2` with respect to every
    /// weight and bias, along with `Q[action]`.
    pub fn gradient(&self, x: &[f64], target: f64, action: usize) -> Result<(Gradient, f64)> {
        self.check_input(x)?;
        if action >= self.output_dim() {
            return Err(Error::Index {
                what: "action",
                index: action,
                lo: 0,
                hi: self.output_dim() - 1,
            });
        }
        let acts = self.activations(x);
        let q = acts.last().expect("output")[action];
        let mut grad = Self::zeros(&self.sizes())?;
        // d loss / d pre-activation of the current layer
        let mut delta = vec![0.0; self.output_dim()];
        delta[action] = q - target;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grad.layers[li];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw = d * v;
                }
            }
            if li == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            // ReLU derivative, taken as zero at the kink
            for (b, a) in back.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
        Ok((grad, q))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Layer count, then `(inputs, outputs)` per layer as little-endian u64,
    /// then per layer the row-major weights and the biases as little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs as u64).to_le_bytes())?;
            w.write_all(&(l.outputs as u64).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let count = next_u64(&mut r)? as usize;
        if count == 0 || count > 64 {
            return Err(Error::config("weights", format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let i = next_u64(&mut r)? as usize;
            let o = next_u64(&mut r)? as usize;
            dims.push((i, o));
        }
        if dims.windows(2).any(|d| d[0].1 != d[1].0) {
            return Err(Error::config("weights", "layer dimensions do not chain"));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, o) in dims {
            let mut layer = Layer::zeros(i, o);
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                r.read_exact(&mut word)?;
                *v = f64::from_le_bytes(word);
            }
            layers.push(layer);
        }
        Ok(Self { layers })
    }
}
