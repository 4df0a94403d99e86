use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a fully connected network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Flat parameter vector. Layer by layer: a row-major `fan_out x fan_in`
/// weight block followed by `fan_out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Four independent partial sums, so the reduction is not latency bound.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Reusable activation buffers for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(UqError::InvalidArgument(
                "all layer widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_widths);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Weights `~ N(0, 1/fan_in)`, biases zero.
    pub fn init(&self, rng: &mut RngStream) -> ParamVector {
        let mut values = Vec::with_capacity(self.n_params());
        for (fan_in, fan_out) in self.layers() {
            let scale = (1.0 / fan_in as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| scale * rng.next_normal()));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(values)
    }

    pub fn scratch(&self) -> Scratch {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_widths);
        widths.push(self.output_dim);
        Scratch {
            acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(UqError::DimensionMismatch {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(UqError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(theta)?;
        self.check_input(x)?;
        let mut scratch = self.scratch();
        Ok(self.forward_with(theta.as_slice(), x, &mut scratch).to_vec())
    }

    pub fn predict_batch(&self, theta: &ParamVector, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_params(theta)?;
        let mut scratch = self.scratch();
        xs.iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(self.forward_with(theta.as_slice(), x, &mut scratch).to_vec())
            })
            .collect()
    }

    /// Forward pass without dimension checks; returns the output slice of
    /// `scratch`, which also retains the activations for `backward_with`.
    pub fn forward_with<'s>(&self, theta: &[f64], x: &[f64], scratch: &'s mut Scratch) -> &'s [f64] {
        scratch.acts[0].copy_from_slice(x);
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let (w, rest) = theta[offset..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            let (head, tail) = scratch.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let z = b[j] + dot(row, input);
                out[j] = if l == last { z } else { self.activation.apply(z) };
            }
            offset += (fan_in + 1) * fan_out;
        }
        &scratch.acts[last + 1]
    }

    /// Accumulates `d_out^T (d output / d theta)` into `grad`, using the
    /// activations left in `scratch` by the preceding `forward_with`.
    pub fn backward_with(&self, theta: &[f64], scratch: &mut Scratch, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.layers();
        let n_layers = layers.len();
        scratch.deltas[n_layers].copy_from_slice(d_out);
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for &(fan_in, fan_out) in &layers {
            offsets.push(offset);
            offset += (fan_in + 1) * fan_out;
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            let (d_head, d_tail) = scratch.deltas.split_at_mut(l + 1);
            let delta = &d_tail[0];
            let input = &scratch.acts[l];
            {
                let (gw, gb) = grad[off..off + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
                for j in 0..fan_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    for (g, a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                        *g += dj * a;
                    }
                }
            }
            if l > 0 {
                let w = &theta[off..off + fan_in * fan_out];
                let prev = &mut d_head[l];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..fan_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    for (p, wji) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *p += wji * dj;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.derivative_from_output(*a);
                }
            }
        }
    }
}
