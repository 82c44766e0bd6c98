//! Fixed-topology three-layer perceptrons with hand-written backprop, and
//! the Adam optimizer.
//!
//! A network is `input -> hidden -> hidden -> output` with ReLU after the
//! first two affine layers. All parameters live in one flat vector so the
//! optimizer, checkpoints and finite-difference checks can treat them
//! uniformly. Per layer the layout is the weight matrix (row-major,
//! `out x in`) followed by the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax over the outputs (policy network).
    Softmax,
    /// Single linear output (value network).
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: [usize; 4],
    head: Head,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
struct Trace {
    acts: [Vec<f64>; 3],
    out: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize, head: Head) -> Self {
        let widths = [input, hidden, hidden, output];
        let count = (0..3).map(|l| widths[l + 1] * (widths[l] + 1)).sum();
        Self {
            widths,
            head,
            params: vec![0.0; count],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output, head);
        for l in 0..3 {
            let (w, _) = net.layer_range(l);
            let bound = 1.0 / (net.widths[l] as f64).sqrt();
            for p in &mut net.params[w] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn actor<R: Rng + ?Sized>(input: usize, hidden: usize, actions: usize, rng: &mut R) -> Self {
        Self::new(input, hidden, actions, Head::Softmax, rng)
    }

    pub fn critic<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self::new(input, hidden, 1, Head::Scalar, rng)
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[3]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Index ranges of layer `l`'s weights and biases.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut offset = 0;
        for k in 0..l {
            offset += self.widths[k + 1] * (self.widths[k] + 1);
        }
        let w_len = self.widths[l + 1] * self.widths[l];
        let b_len = self.widths[l + 1];
        (offset..offset + w_len, offset + w_len..offset + w_len + b_len)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.widths[0] {
            return Err(Error::ShapeMismatch {
                expected: self.widths[0],
                actual: input.len(),
            });
        }
        Ok(())
    }

    fn run(&self, input: &[f64]) -> Trace {
        let mut acts: [Vec<f64>; 3] = [input.to_vec(), Vec::new(), Vec::new()];
        let mut out = Vec::new();
        for l in 0..3 {
            let (w, b) = self.layer_range(l);
            let (w, b) = (&self.params[w], &self.params[b]);
            let n_in = self.widths[l];
            let x = &acts[l];
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l < 2 {
                acts[l + 1] = z.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                out = z;
            }
        }
        Trace { acts, out }
    }

    /// Raw output-layer values (logits for the softmax head).
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input).out)
    }

    /// Policy: softmax of the output layer.
    pub fn forward_actor(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.require(Head::Softmax)?;
        Ok(softmax(&self.output(input)?))
    }

    /// Value estimate.
    pub fn forward_critic(&self, input: &[f64]) -> Result<f64> {
        self.require(Head::Scalar)?;
        Ok(self.output(input)?[0])
    }

    fn require(&self, head: Head) -> Result<()> {
        if self.head != head {
            return Err(Error::Invalid(format!(
                "network has a {:?} head, expected {head:?}",
                self.head
            )));
        }
        Ok(())
    }

    /// Parameter gradient of `upstream . output(input)`, where `upstream`
    /// is the gradient of some loss with respect to the raw outputs.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if upstream.len() != self.widths[3] {
            return Err(Error::ShapeMismatch {
                expected: self.widths[3],
                actual: upstream.len(),
            });
        }
        let trace = self.run(input);
        Ok(self.backprop(&trace, upstream.to_vec()))
    }

    fn backprop(&self, trace: &Trace, mut delta: Vec<f64>) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        for l in (0..3).rev() {
            let (w_range, b_range) = self.layer_range(l);
            let n_in = self.widths[l];
            let x = &trace.acts[l];
            for (o, &d) in delta.iter().enumerate() {
                grads[b_range.start + o] = d;
                if d != 0.0 {
                    let row = &mut grads[w_range.start + o * n_in..w_range.start + (o + 1) * n_in];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g = d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_range];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // ReLU gate: acts[l] = max(z, 0)
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        grads
    }

    /// Gradient of `log mu_action(input)` for the softmax head.
    pub fn grad_log_prob(&self, input: &[f64], action: usize) -> Result<Vec<f64>> {
        self.require(Head::Softmax)?;
        self.check_input(input)?;
        if action >= self.widths[3] {
            return Err(Error::IndexOutOfRange {
                index: action,
                n: self.widths[3],
            });
        }
        let trace = self.run(input);
        let probs = softmax(&trace.out);
        let upstream = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| f64::from(j == action) - p)
            .collect();
        Ok(self.backprop(&trace, upstream))
    }

    /// Gradient of the policy's entropy `-sum mu log mu`.
    pub fn grad_policy_entropy(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.require(Head::Softmax)?;
        self.check_input(input)?;
        let trace = self.run(input);
        let log_probs = log_softmax(&trace.out);
        let h: f64 = -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
        let upstream = log_probs.iter().map(|&lp| -lp.exp() * (lp + h)).collect();
        Ok(self.backprop(&trace, upstream))
    }

    /// Gradient of the scalar value output.
    pub fn grad_value(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.require(Head::Scalar)?;
        self.backward(input, &[1.0])
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - log_sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], direction: Direction) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.first_moment.len(),
                actual: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = match direction {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += sign * self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Parameter update rule. `Sgd` is plain (non-adaptive) gradient steps,
/// used to check update fidelity against the raw gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam(Adam),
    Sgd { learning_rate: f64 },
}

impl Optimizer {
    pub fn adam(learning_rate: f64, n_params: usize) -> Self {
        Optimizer::Adam(Adam::new(learning_rate, n_params))
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], direction: Direction) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grads, direction),
            Optimizer::Sgd { learning_rate } => {
                if grads.len() != params.len() {
                    return Err(Error::ShapeMismatch {
                        expected: params.len(),
                        actual: grads.len(),
                    });
                }
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite("gradient"));
                }
                let sign = if direction == Direction::Ascend { 1.0 } else { -1.0 };
                for (p, g) in params.iter_mut().zip(grads) {
                    *p += sign * *learning_rate * g;
                }
                Ok(())
            }
        }
    }
}
