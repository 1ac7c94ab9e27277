//! Elman and Jordan networks.
//!
//! Both compute `h(t) = sigmoid(U·x(t) + V·r(t-1) + b_h)` and
//! `y(t) = softmax(W·h(t) + b_y)`; they differ only in the recurrent input
//! `r`: the previous hidden layer for Elman, the previous output distribution
//! for Jordan. `r(-1)` is the zero vector.

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, sigmoid, softmax_into, uniform_init, Matrix, SeededRng};

/// What the hidden layer receives from the previous time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    /// Elman: `h(t-1)`.
    Hidden,
    /// Jordan: `y(t-1)`.
    Output,
}

/// Weights of an Elman or Jordan tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnParams {
    pub feedback: Feedback,
    /// `U`: `H × s·d`
    pub input_weights: Matrix,
    /// `V`: `H × H` (Elman) or `H × K` (Jordan)
    pub recurrent_weights: Matrix,
    /// `W`: `K × H`
    pub output_weights: Matrix,
    pub hidden_bias: Matrix,
    pub output_bias: Matrix,
}

pub type ElmanParams = SrnParams;
pub type JordanParams = SrnParams;

impl SrnParams {
    /// Weight matrices uniform in `[-1, 1)`, biases zero.
    pub fn random(
        feedback: Feedback,
        input_dim: usize,
        hidden: usize,
        num_tags: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fb_dim = match feedback {
            Feedback::Hidden => hidden,
            Feedback::Output => num_tags,
        };
        Ok(Self {
            feedback,
            input_weights: uniform_init(hidden, input_dim, -1.0, 1.0, rng)?,
            recurrent_weights: uniform_init(hidden, fb_dim, -1.0, 1.0, rng)?,
            output_weights: uniform_init(num_tags, hidden, -1.0, 1.0, rng)?,
            hidden_bias: Matrix::zeros(hidden, 1),
            output_bias: Matrix::zeros(num_tags, 1),
        })
    }

    pub fn zeros(feedback: Feedback, input_dim: usize, hidden: usize, num_tags: usize) -> Self {
        let fb_dim = match feedback {
            Feedback::Hidden => hidden,
            Feedback::Output => num_tags,
        };
        Self {
            feedback,
            input_weights: Matrix::zeros(hidden, input_dim),
            recurrent_weights: Matrix::zeros(hidden, fb_dim),
            output_weights: Matrix::zeros(num_tags, hidden),
            hidden_bias: Matrix::zeros(hidden, 1),
            output_bias: Matrix::zeros(num_tags, 1),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.input_weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.cols()
    }

    pub fn num_tags(&self) -> usize {
        self.output_weights.rows()
    }

    pub fn feedback_dim(&self) -> usize {
        self.recurrent_weights.cols()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("input_weights", &self.input_weights),
            ("recurrent_weights", &self.recurrent_weights),
            ("output_weights", &self.output_weights),
            ("hidden_bias", &self.hidden_bias),
            ("output_bias", &self.output_bias),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.input_weights,
            &mut self.recurrent_weights,
            &mut self.output_weights,
            &mut self.hidden_bias,
            &mut self.output_bias,
        ]
    }

    /// `sigmoid(U·x + V·prev + b_h)`
    pub fn step(&self, x: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.hidden_bias.as_slice().to_vec();
        self.input_weights.matvec_acc(x, &mut a)?;
        if prev.len() != self.feedback_dim() {
            return Err(Error::dims(
                "recurrent input",
                self.feedback_dim(),
                prev.len(),
            ));
        }
        self.recurrent_weights.matvec_acc(prev, &mut a)?;
        a.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(a)
    }

    fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.output_bias.as_slice().to_vec();
        self.output_weights.matvec_acc(h, &mut z)?;
        Ok(z)
    }

    /// `softmax(W·h + b_y)`
    pub fn output_distribution(&self, h: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(h)?;
        let mut y = vec![0.0; z.len()];
        softmax_into(&z, &mut y)?;
        Ok(y)
    }
}

/// One Elman hidden-layer update.
pub fn elman_step(x: &[f64], h_prev: &[f64], params: &ElmanParams) -> Result<Vec<f64>> {
    params.step(x, h_prev)
}

/// One Jordan hidden-layer update from the previous output distribution.
pub fn jordan_step(x: &[f64], y_prev: &[f64], params: &JordanParams) -> Result<Vec<f64>> {
    params.step(x, y_prev)
}

/// `softmax(W·h + b_y)` for either network.
pub fn output_distribution(h: &[f64], params: &SrnParams) -> Result<Vec<f64>> {
    params.output_distribution(h)
}

/// Activations of a full forward pass, kept for backpropagation.
pub(crate) struct SrnTrace {
    pub hidden: Vec<Vec<f64>>,
    pub dropped_hidden: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl SrnParams {
    /// Runs the network over pre-built (already dropped-out) inputs.
    /// `hidden_masks[t]` scales `h(t)` before the output layer.
    pub(crate) fn forward(
        &self,
        xs: &[Vec<f64>],
        hidden_masks: Option<&[Vec<f64>]>,
    ) -> Result<SrnTrace> {
        let mut trace = SrnTrace {
            hidden: Vec::with_capacity(xs.len()),
            dropped_hidden: Vec::with_capacity(xs.len()),
            outputs: Vec::with_capacity(xs.len()),
            logits: Vec::with_capacity(xs.len()),
        };
        let mut prev = vec![0.0; self.feedback_dim()];
        for (t, x) in xs.iter().enumerate() {
            let h = self.step(x, &prev)?;
            let hd: Vec<f64> = match hidden_masks {
                Some(m) => h.iter().zip(&m[t]).map(|(a, b)| a * b).collect(),
                None => h.clone(),
            };
            let z = self.logits(&hd)?;
            let mut y = vec![0.0; z.len()];
            softmax_into(&z, &mut y)?;
            prev = match self.feedback {
                Feedback::Hidden => h.clone(),
                Feedback::Output => y.clone(),
            };
            trace.hidden.push(h);
            trace.dropped_hidden.push(hd);
            trace.outputs.push(y);
            trace.logits.push(z);
        }
        Ok(trace)
    }

    /// Summed per-token cross-entropy of `gold` under a forward trace.
    pub(crate) fn cross_entropy(trace: &SrnTrace, gold: &[usize]) -> f64 {
        trace
            .logits
            .iter()
            .zip(gold)
            .map(|(z, &g)| log_sum_exp(z) - z[g])
            .sum()
    }

    /// Full BPTT of the summed cross-entropy. Accumulates parameter gradients
    /// into `grads` and returns `∂L/∂x(t)` for every step (before input
    /// dropout is undone).
    pub(crate) fn backward(
        &self,
        xs: &[Vec<f64>],
        trace: &SrnTrace,
        gold: &[usize],
        hidden_masks: Option<&[Vec<f64>]>,
        grads: &mut SrnParams,
    ) -> Result<Vec<Vec<f64>>> {
        let steps = xs.len();
        let hidden = self.hidden_size();
        let mut dxs = vec![vec![0.0; self.input_dim()]; steps];
        // ∂L/∂r(t), where r(t) is the vector fed back into step t+1
        let mut carry = vec![0.0; self.feedback_dim()];
        let zero_prev = vec![0.0; self.feedback_dim()];
        for t in (0..steps).rev() {
            let y = &trace.outputs[t];
            let mut dz = y.clone();
            dz[gold[t]] -= 1.0;
            if self.feedback == Feedback::Output {
                let inner: f64 = carry.iter().zip(y).map(|(c, p)| c * p).sum();
                for ((d, &p), &c) in dz.iter_mut().zip(y).zip(&carry) {
                    *d += p * (c - inner);
                }
            }
            grads
                .output_weights
                .add_outer(&dz, &trace.dropped_hidden[t])?;
            grads.output_bias.axpy(1.0, &Matrix::column(dz.clone()))?;

            let mut dh = vec![0.0; hidden];
            self.output_weights.matvec_t_acc(&dz, &mut dh)?;
            if let Some(m) = hidden_masks {
                dh.iter_mut().zip(&m[t]).for_each(|(d, k)| *d *= k);
            }
            if self.feedback == Feedback::Hidden {
                dh.iter_mut().zip(&carry).for_each(|(d, c)| *d += c);
            }
            let h = &trace.hidden[t];
            let da: Vec<f64> = dh.iter().zip(h).map(|(d, v)| d * v * (1.0 - v)).collect();

            let prev = if t == 0 {
                &zero_prev
            } else {
                match self.feedback {
                    Feedback::Hidden => &trace.hidden[t - 1],
                    Feedback::Output => &trace.outputs[t - 1],
                }
            };
            grads.input_weights.add_outer(&da, &xs[t])?;
            grads.recurrent_weights.add_outer(&da, prev)?;
            grads.hidden_bias.axpy(1.0, &Matrix::column(da.clone()))?;
            self.input_weights.matvec_t_acc(&da, &mut dxs[t])?;

            carry.iter_mut().for_each(|c| *c = 0.0);
            self.recurrent_weights.matvec_t_acc(&da, &mut carry)?;
        }
        Ok(dxs)
    }
}
