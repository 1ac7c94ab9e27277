//! Bidirectional LSTM with a CRF output layer.
//!
//! Each direction is a forget-gate LSTM without peepholes:
//!
//! ```text
//! i = σ(W_i x + R_i h + b_i)    f = σ(W_f x + R_f h + b_f)
//! o = σ(W_o x + R_o h + b_o)    g = tanh(W_g x + R_g h + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```
//!
//! The four gates are stacked row-wise in the order `[i; f; o; g]`, so each
//! direction owns one `4H × s·d` input matrix, one `4H × H` recurrent matrix
//! and one `4H` bias. Emission scores are `P·[→h(t); ←h(t)] + b_p`.

use crate::crf::{self, EmissionScores, TransitionMask, TransitionTable};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, uniform_init, Matrix, SeededRng};

const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate weights of one LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    pub input_weights: Matrix,
    pub recurrent_weights: Matrix,
    pub bias: Matrix,
}

impl LstmDirection {
    pub fn random(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut bias = Matrix::zeros(4 * hidden, 1);
        bias.as_mut_slice()[hidden..2 * hidden].fill(FORGET_BIAS);
        Ok(Self {
            input_weights: uniform_init(4 * hidden, input_dim, -1.0, 1.0, rng)?,
            recurrent_weights: uniform_init(4 * hidden, hidden, -1.0, 1.0, rng)?,
            bias,
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_weights: Matrix::zeros(4 * hidden, input_dim),
            recurrent_weights: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent_weights.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.cols()
    }
}

/// Weights of the full BiLSTM-CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
    /// `P`: `K × 2H`
    pub projection: Matrix,
    pub projection_bias: Matrix,
    pub crf: TransitionTable,
}

impl LstmParams {
    /// Weight matrices uniform in `[-1, 1)`; biases zero except the forget
    /// gate (1.0); CRF transitions zero.
    pub fn random(
        input_dim: usize,
        hidden: usize,
        num_tags: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmDirection::random(input_dim, hidden, rng)?,
            backward: LstmDirection::random(input_dim, hidden, rng)?,
            projection: uniform_init(num_tags, 2 * hidden, -1.0, 1.0, rng)?,
            projection_bias: Matrix::zeros(num_tags, 1),
            crf: TransitionTable::zeros(num_tags),
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize, num_tags: usize) -> Self {
        Self {
            forward: LstmDirection::zeros(input_dim, hidden),
            backward: LstmDirection::zeros(input_dim, hidden),
            projection: Matrix::zeros(num_tags, 2 * hidden),
            projection_bias: Matrix::zeros(num_tags, 1),
            crf: TransitionTable::zeros(num_tags),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn num_tags(&self) -> usize {
        self.projection.rows()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("forward.input_weights", &self.forward.input_weights),
            ("forward.recurrent_weights", &self.forward.recurrent_weights),
            ("forward.bias", &self.forward.bias),
            ("backward.input_weights", &self.backward.input_weights),
            (
                "backward.recurrent_weights",
                &self.backward.recurrent_weights,
            ),
            ("backward.bias", &self.backward.bias),
            ("projection", &self.projection),
            ("projection_bias", &self.projection_bias),
            ("crf.transitions", &self.crf.transitions),
            ("crf.start", &self.crf.start),
            ("crf.stop", &self.crf.stop),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.forward.input_weights,
            &mut self.forward.recurrent_weights,
            &mut self.forward.bias,
            &mut self.backward.input_weights,
            &mut self.backward.recurrent_weights,
            &mut self.backward.bias,
            &mut self.projection,
            &mut self.projection_bias,
            &mut self.crf.transitions,
            &mut self.crf.start,
            &mut self.crf.stop,
        ]
    }

    pub fn direction(&self, direction: Direction) -> &LstmDirection {
        match direction {
            Direction::LeftToRight => &self.forward,
            Direction::RightToLeft => &self.backward,
        }
    }
}

/// Everything one step computes, for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn step_cached(x: &[f64], state: &HiddenState, params: &LstmDirection) -> Result<StepCache> {
    let hidden = params.hidden_size();
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::dims(
            "LSTM state",
            hidden,
            state.h.len().max(state.c.len()),
        ));
    }
    let mut pre = params.bias.as_slice().to_vec();
    params.input_weights.matvec_acc(x, &mut pre)?;
    params.recurrent_weights.matvec_acc(&state.h, &mut pre)?;
    let i: Vec<f64> = pre[..hidden].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = pre[hidden..2 * hidden]
        .iter()
        .map(|&v| sigmoid(v))
        .collect();
    let o: Vec<f64> = pre[2 * hidden..3 * hidden]
        .iter()
        .map(|&v| sigmoid(v))
        .collect();
    let g: Vec<f64> = pre[3 * hidden..].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..hidden)
        .map(|k| f[k] * state.c[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    Ok(StepCache {
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        o,
        g,
        tanh_c,
        h,
    })
}

impl StepCache {
    fn cell(&self) -> Vec<f64> {
        (0..self.i.len())
            .map(|k| self.f[k] * self.c_prev[k] + self.i[k] * self.g[k])
            .collect()
    }
}

/// One LSTM update in the given direction.
pub fn lstm_step(
    x: &[f64],
    state: &HiddenState,
    params: &LstmParams,
    direction: Direction,
) -> Result<HiddenState> {
    let cache = step_cached(x, state, params.direction(direction))?;
    Ok(HiddenState {
        c: cache.cell(),
        h: cache.h,
    })
}

/// Step caches of one direction, indexed by sentence position.
fn run_direction(
    xs: &[Vec<f64>],
    params: &LstmDirection,
    direction: Direction,
) -> Result<Vec<StepCache>> {
    let steps = xs.len();
    let mut state = HiddenState::zeros(params.hidden_size());
    let mut caches: Vec<Option<StepCache>> = vec![None; steps];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::LeftToRight => Box::new(0..steps),
        Direction::RightToLeft => Box::new((0..steps).rev()),
    };
    for t in order {
        let cache = step_cached(&xs[t], &state, params)?;
        state = HiddenState {
            c: cache.cell(),
            h: cache.h.clone(),
        };
        caches[t] = Some(cache);
    }
    Ok(caches
        .into_iter()
        .map(|c| c.expect("every position visited"))
        .collect())
}

/// `T × 2H` matrix whose row `t` is `[→h(t); ←h(t)]`, both directions
/// starting from zero state.
pub fn bilstm_forward(xs: &[Vec<f64>], params: &LstmParams) -> Result<Matrix> {
    if xs.is_empty() {
        return Err(Error::Empty("BiLSTM input sequence"));
    }
    let fwd = run_direction(xs, &params.forward, Direction::LeftToRight)?;
    let bwd = run_direction(xs, &params.backward, Direction::RightToLeft)?;
    let hidden = params.hidden_size();
    let mut out = Matrix::zeros(xs.len(), 2 * hidden);
    for t in 0..xs.len() {
        out.row_mut(t)[..hidden].copy_from_slice(&fwd[t].h);
        out.row_mut(t)[hidden..].copy_from_slice(&bwd[t].h);
    }
    Ok(out)
}

pub(crate) struct LstmTrace {
    forward: Vec<StepCache>,
    backward: Vec<StepCache>,
    /// `[→h; ←h]` after hidden dropout
    features: Vec<Vec<f64>>,
    pub emissions: EmissionScores,
}

impl LstmParams {
    pub(crate) fn forward_pass(
        &self,
        xs: &[Vec<f64>],
        hidden_masks: Option<&[Vec<f64>]>,
    ) -> Result<LstmTrace> {
        if xs.is_empty() {
            return Err(Error::Empty("BiLSTM input sequence"));
        }
        let fwd = run_direction(xs, &self.forward, Direction::LeftToRight)?;
        let bwd = run_direction(xs, &self.backward, Direction::RightToLeft)?;
        let k = self.num_tags();
        let mut emissions = Matrix::zeros(xs.len(), k);
        let mut features = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let mut feat = [fwd[t].h.as_slice(), bwd[t].h.as_slice()].concat();
            if let Some(m) = hidden_masks {
                feat.iter_mut().zip(&m[t]).for_each(|(v, k)| *v *= k);
            }
            let row = emissions.row_mut(t);
            row.copy_from_slice(self.projection_bias.as_slice());
            self.projection.matvec_acc(&feat, row)?;
            features.push(feat);
        }
        Ok(LstmTrace {
            forward: fwd,
            backward: bwd,
            features,
            emissions: EmissionScores::new(emissions),
        })
    }

    pub(crate) fn decode(
        &self,
        xs: &[Vec<f64>],
        mask: Option<&TransitionMask>,
    ) -> Result<Vec<usize>> {
        let trace = self.forward_pass(xs, None)?;
        Ok(crf::viterbi_decode_masked(&trace.emissions, &self.crf, mask)?.0)
    }

    /// CRF NLL and its full gradient. Returns `∂L/∂x(t)` per position.
    pub(crate) fn backward_pass(
        &self,
        xs: &[Vec<f64>],
        trace: &LstmTrace,
        gold: &[usize],
        hidden_masks: Option<&[Vec<f64>]>,
        grads: &mut LstmParams,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let crf_grads = crf::gradients(&trace.emissions, &self.crf, gold)?;
        grads
            .crf
            .transitions
            .axpy(1.0, &crf_grads.transitions.transitions)?;
        grads.crf.start.axpy(1.0, &crf_grads.transitions.start)?;
        grads.crf.stop.axpy(1.0, &crf_grads.transitions.stop)?;

        let hidden = self.hidden_size();
        let steps = xs.len();
        let mut d_fwd = vec![vec![0.0; hidden]; steps];
        let mut d_bwd = vec![vec![0.0; hidden]; steps];
        for t in 0..steps {
            let de = crf_grads.emissions.row(t);
            grads.projection.add_outer(de, &trace.features[t])?;
            grads
                .projection_bias
                .as_mut_slice()
                .iter_mut()
                .zip(de)
                .for_each(|(g, d)| *g += d);
            let mut dfeat = vec![0.0; 2 * hidden];
            self.projection.matvec_t_acc(de, &mut dfeat)?;
            if let Some(m) = hidden_masks {
                dfeat.iter_mut().zip(&m[t]).for_each(|(d, k)| *d *= k);
            }
            d_fwd[t].copy_from_slice(&dfeat[..hidden]);
            d_bwd[t].copy_from_slice(&dfeat[hidden..]);
        }

        let mut dxs = vec![vec![0.0; self.input_dim()]; steps];
        backprop_direction(
            xs,
            &self.forward,
            &trace.forward,
            &d_fwd,
            Direction::LeftToRight,
            &mut grads.forward,
            &mut dxs,
        )?;
        backprop_direction(
            xs,
            &self.backward,
            &trace.backward,
            &d_bwd,
            Direction::RightToLeft,
            &mut grads.backward,
            &mut dxs,
        )?;
        Ok((crf_grads.nll, dxs))
    }
}

/// BPTT through one direction. `dh_out[t]` is the loss gradient reaching
/// `h(t)` from the emission layer.
fn backprop_direction(
    xs: &[Vec<f64>],
    params: &LstmDirection,
    caches: &[StepCache],
    dh_out: &[Vec<f64>],
    direction: Direction,
    grads: &mut LstmDirection,
    dxs: &mut [Vec<f64>],
) -> Result<()> {
    let hidden = params.hidden_size();
    let steps = xs.len();
    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];
    // reverse of the processing order
    let order: Vec<usize> = match direction {
        Direction::LeftToRight => (0..steps).rev().collect(),
        Direction::RightToLeft => (0..steps).collect(),
    };
    let mut dpre = vec![0.0; 4 * hidden];
    for t in order {
        let s = &caches[t];
        for k in 0..hidden {
            let dh = dh_out[t][k] + dh_carry[k];
            let d_o = dh * s.tanh_c[k];
            let dc = dc_carry[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            let d_f = dc * s.c_prev[k];
            dpre[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            dpre[hidden + k] = d_f * s.f[k] * (1.0 - s.f[k]);
            dpre[2 * hidden + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            dpre[3 * hidden + k] = d_g * (1.0 - s.g[k] * s.g[k]);
            dc_carry[k] = dc * s.f[k];
        }
        grads.input_weights.add_outer(&dpre, &xs[t])?;
        grads.recurrent_weights.add_outer(&dpre, &s.h_prev)?;
        grads
            .bias
            .as_mut_slice()
            .iter_mut()
            .zip(&dpre)
            .for_each(|(g, d)| *g += d);
        params.input_weights.matvec_t_acc(&dpre, &mut dxs[t])?;
        dh_carry.iter_mut().for_each(|v| *v = 0.0);
        params
            .recurrent_weights
            .matvec_t_acc(&dpre, &mut dh_carry)?;
    }
    Ok(())
}
