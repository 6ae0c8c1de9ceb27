//! Layer primitives with exact backward passes: valid 1D cross-correlation,
//! max pooling, inverted dropout, and dense/affine layers with tanh, ReLU,
//! and sigmoid activations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Output length of a valid (no padding) convolution or pooling stage.
pub fn valid_out_len(l_in: usize, width: usize, stride: usize) -> usize {
    (l_in - width) / stride + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dShape {
    pub c_in: usize,
    pub l_in: usize,
    pub c_out: usize,
    pub width: usize,
    pub stride: usize,
}

impl Conv1dShape {
    pub fn l_out(&self) -> usize {
        valid_out_len(self.l_in, self.width, self.stride)
    }

    fn check(&self, input: &[f64], weights: &[f64], bias: &[f64]) -> Result<()> {
        if self.l_in < self.width || self.stride == 0 {
            return Err(Error::Shape {
                context: "conv1d".into(),
                expected: format!("l_in >= width ({}), stride >= 1", self.width),
                actual: format!("l_in = {}, stride = {}", self.l_in, self.stride),
            });
        }
        let checks = [
            ("input", input.len(), self.c_in * self.l_in),
            ("weights", weights.len(), self.c_out * self.c_in * self.width),
            ("bias", bias.len(), self.c_out),
        ];
        for (what, actual, expected) in checks {
            if actual != expected {
                return Err(Error::Shape {
                    context: format!("conv1d {what}"),
                    expected: expected.to_string(),
                    actual: actual.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Valid cross-correlation:
/// out[f][i] = bias[f] + sum_{c,j} weights[f][c][j] * input[c][i*stride + j].
pub fn conv1d(shape: &Conv1dShape, input: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    shape.check(input, weights, bias)?;
    let (l_in, l_out, width) = (shape.l_in, shape.l_out(), shape.width);
    let mut out = vec![0.0; shape.c_out * l_out];
    for f in 0..shape.c_out {
        let out_row = &mut out[f * l_out..(f + 1) * l_out];
        out_row.fill(bias[f]);
        for c in 0..shape.c_in {
            let w = &weights[(f * shape.c_in + c) * width..(f * shape.c_in + c + 1) * width];
            let x = &input[c * l_in..(c + 1) * l_in];
            for (i, o) in out_row.iter_mut().enumerate() {
                let base = i * shape.stride;
                let mut acc = 0.0;
                for j in 0..width {
                    acc += w[j] * x[base + j];
                }
                *o += acc;
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv1d`] w.r.t. input, weights, and bias.
pub fn conv1d_backward(
    shape: &Conv1dShape,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (l_in, l_out, width) = (shape.l_in, shape.l_out(), shape.width);
    debug_assert_eq!(grad_out.len(), shape.c_out * l_out);
    let mut grad_input = vec![0.0; shape.c_in * l_in];
    let mut grad_weights = vec![0.0; weights.len()];
    let mut grad_bias = vec![0.0; shape.c_out];

    for f in 0..shape.c_out {
        let g_row = &grad_out[f * l_out..(f + 1) * l_out];
        grad_bias[f] = g_row.iter().sum();
        for c in 0..shape.c_in {
            let w = &weights[(f * shape.c_in + c) * width..(f * shape.c_in + c + 1) * width];
            let gw = &mut grad_weights[(f * shape.c_in + c) * width..(f * shape.c_in + c + 1) * width];
            let x = &input[c * l_in..(c + 1) * l_in];
            let gx = &mut grad_input[c * l_in..(c + 1) * l_in];
            for (i, &g) in g_row.iter().enumerate() {
                let base = i * shape.stride;
                for j in 0..width {
                    gw[j] += g * x[base + j];
                    gx[base + j] += g * w[j];
                }
            }
        }
    }
    (grad_input, grad_weights, grad_bias)
}

/// Max pooling over contiguous windows; the trailing remainder is dropped.
/// Returns pooled values and the flat input index of each maximum (first
/// index wins ties), which the backward pass routes gradients to.
pub fn maxpool(
    input: &[f64],
    channels: usize,
    l_in: usize,
    width: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    debug_assert_eq!(input.len(), channels * l_in);
    debug_assert!(l_in >= width);
    let l_out = valid_out_len(l_in, width, stride);
    let mut out = Vec::with_capacity(channels * l_out);
    let mut argmax = Vec::with_capacity(channels * l_out);
    for c in 0..channels {
        let row = &input[c * l_in..(c + 1) * l_in];
        for i in 0..l_out {
            let base = i * stride;
            let mut best = base;
            for j in base + 1..base + width {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push((c * l_in + best) as u32);
        }
    }
    (out, argmax)
}

pub fn maxpool_backward(grad_out: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut grad_input = vec![0.0; input_len];
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        grad_input[idx as usize] += g;
    }
    grad_input
}

/// Bernoulli keep-mask for inverted dropout (true = keep).
pub fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<bool> {
    (0..len).map(|_| rng.gen::<f64>() >= p).collect()
}

/// Train-mode inverted dropout: zero dropped entries, scale survivors by
/// 1/(1-p) so that eval mode is the identity.
pub fn apply_dropout(x: &mut [f64], mask: &[bool], p: f64) {
    let scale = 1.0 / (1.0 - p);
    for (v, &keep) in x.iter_mut().zip(mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
}

pub fn dropout_backward(grad: &mut [f64], mask: &[bool], p: f64) {
    apply_dropout(grad, mask, p);
}

/// Affine map: out[m] = bias[m] + sum_n weights[m][n] * input[n].
pub fn dense(input: &[f64], weights: &[f64], bias: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
    if input.len() != n || weights.len() != m * n || bias.len() != m {
        return Err(Error::Shape {
            context: "dense".into(),
            expected: format!("input {n}, weights {}, bias {m}", m * n),
            actual: format!("input {}, weights {}, bias {}", input.len(), weights.len(), bias.len()),
        });
    }
    Ok(weights
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, &b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect())
}

/// Exact gradients of [`dense`] w.r.t. input, weights, and bias, given the
/// gradient at the pre-activation output.
pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_pre: &[f64],
    m: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(grad_pre.len(), m);
    let mut grad_input = vec![0.0; n];
    let mut grad_weights = vec![0.0; m * n];
    for i in 0..m {
        let g = grad_pre[i];
        if g == 0.0 {
            continue;
        }
        let row = &weights[i * n..(i + 1) * n];
        let grow = &mut grad_weights[i * n..(i + 1) * n];
        for j in 0..n {
            grad_input[j] += g * row[j];
            grow[j] = g * input[j];
        }
    }
    (grad_input, grad_weights, grad_pre.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

/// Affine map followed by the named activation.
pub fn dense_activate(
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    m: usize,
    n: usize,
    act: Activation,
) -> Result<Vec<f64>> {
    let mut out = dense(input, weights, bias, m, n)?;
    match act {
        Activation::Tanh => tanh_inplace(&mut out),
        Activation::Relu => relu_inplace(&mut out),
        Activation::Sigmoid => {
            for v in out.iter_mut() {
                *v = sigmoid(*v);
            }
        }
    }
    Ok(out)
}

pub fn tanh_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

/// grad at pre-activation = grad at output * (1 - tanh^2), using the cached
/// activated values.
pub fn tanh_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        *g *= 1.0 - a * a;
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
