//! Recurrent taggers: Elman, Jordan and BiLSTM-CRF.
//!
//! A [`Tagger`] owns the embedding table and one [`Network`]. Input at step
//! `t` is the concatenated embeddings of the context window around token `t`.
//! Elman/Jordan predict the per-token argmax of the softmax output (ties go
//! to the lowest tag index); BiLSTM-CRF predicts the Viterbi path.

pub mod lstm;
pub mod srn;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::crf::TransitionMask;
use crate::embedding::{context_window, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numeric::{argmax, Matrix, SeededRng};

pub use lstm::{bilstm_forward, lstm_step, Direction, HiddenState, LstmDirection, LstmParams};
pub use srn::{
    elman_step, jordan_step, output_distribution, ElmanParams, Feedback, JordanParams, SrnParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Elman,
    Jordan,
    BiLstmCrf,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Elman,
        Architecture::Jordan,
        Architecture::BiLstmCrf,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::Elman => "elman",
            Architecture::Jordan => "jordan",
            Architecture::BiLstmCrf => "bilstm-crf",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Architecture::Elman => 1,
            Architecture::Jordan => 2,
            Architecture::BiLstmCrf => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Architecture::Elman),
            2 => Ok(Architecture::Jordan),
            3 => Ok(Architecture::BiLstmCrf),
            other => Err(Error::Checkpoint(format!(
                "unknown architecture code {other}"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown architecture `{s}` (expected elman, jordan or bilstm-crf)"
                ))
            })
    }
}

/// Layer sizes of a tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden: usize,
    pub window: usize,
    pub embedding_dim: usize,
    pub num_tags: usize,
}

impl ModelDims {
    pub fn input_dim(&self) -> usize {
        self.window * self.embedding_dim
    }

    /// Width of the layer dropout is applied to before the output projection.
    pub fn feature_dim(&self, arch: Architecture) -> usize {
        match arch {
            Architecture::BiLstmCrf => 2 * self.hidden,
            _ => self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Elman(ElmanParams),
    Jordan(JordanParams),
    BiLstmCrf(LstmParams),
}

impl Network {
    pub fn random(arch: Architecture, dims: ModelDims, rng: &mut SeededRng) -> Result<Self> {
        let input = dims.input_dim();
        Ok(match arch {
            Architecture::Elman => Network::Elman(SrnParams::random(
                Feedback::Hidden,
                input,
                dims.hidden,
                dims.num_tags,
                rng,
            )?),
            Architecture::Jordan => Network::Jordan(SrnParams::random(
                Feedback::Output,
                input,
                dims.hidden,
                dims.num_tags,
                rng,
            )?),
            Architecture::BiLstmCrf => {
                Network::BiLstmCrf(LstmParams::random(input, dims.hidden, dims.num_tags, rng)?)
            }
        })
    }

    pub fn zeros(arch: Architecture, dims: ModelDims) -> Self {
        let input = dims.input_dim();
        match arch {
            Architecture::Elman => Network::Elman(SrnParams::zeros(
                Feedback::Hidden,
                input,
                dims.hidden,
                dims.num_tags,
            )),
            Architecture::Jordan => Network::Jordan(SrnParams::zeros(
                Feedback::Output,
                input,
                dims.hidden,
                dims.num_tags,
            )),
            Architecture::BiLstmCrf => {
                Network::BiLstmCrf(LstmParams::zeros(input, dims.hidden, dims.num_tags))
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Network::Elman(_) => Architecture::Elman,
            Network::Jordan(_) => Architecture::Jordan,
            Network::BiLstmCrf(_) => Architecture::BiLstmCrf,
        }
    }

    /// Named trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            Network::Elman(p) | Network::Jordan(p) => p.tensors(),
            Network::BiLstmCrf(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Network::Elman(p) | Network::Jordan(p) => p.tensors_mut(),
            Network::BiLstmCrf(p) => p.tensors_mut(),
        }
    }
}

/// Inverted-dropout masks for one sentence: entries are `0` or `1/(1-r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub input: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(
        rng: &mut SeededRng,
        steps: usize,
        input_dim: usize,
        hidden_dim: usize,
        rate: f64,
    ) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
                .collect()
        };
        let input = (0..steps).map(|_| draw(input_dim)).collect();
        let hidden = (0..steps).map(|_| draw(hidden_dim)).collect();
        Self { input, hidden }
    }
}

/// Loss gradient of a [`Tagger`]: dense network gradients plus the touched
/// embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub network: Network,
    pub embeddings: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn squared_norm(&self) -> f64 {
        let net: f64 = self
            .network
            .tensors()
            .iter()
            .map(|(_, m)| m.squared_norm())
            .sum();
        let emb: f64 = self
            .embeddings
            .values()
            .flat_map(|row| row.iter())
            .map(|v| v * v)
            .sum();
        net + emb
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.network.tensors_mut() {
            m.scale(factor);
        }
        for row in self.embeddings.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// A complete tagger: embeddings, context window and recurrent network.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagger {
    dims: ModelDims,
    embeddings: EmbeddingTable,
    network: Network,
}

impl Tagger {
    /// Fresh tagger with embeddings and weights drawn uniformly from `[-1, 1)`.
    pub fn new(
        arch: Architecture,
        vocab_size: usize,
        dims: ModelDims,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        validate_dims(dims)?;
        let embeddings = EmbeddingTable::random(vocab_size, dims.embedding_dim, rng)?;
        let network = Network::random(arch, dims, rng)?;
        Ok(Self {
            dims,
            embeddings,
            network,
        })
    }

    pub fn from_parts(
        dims: ModelDims,
        embeddings: EmbeddingTable,
        network: Network,
    ) -> Result<Self> {
        validate_dims(dims)?;
        if embeddings.dim() != dims.embedding_dim {
            return Err(Error::dims(
                "embedding dimension",
                dims.embedding_dim,
                embeddings.dim(),
            ));
        }
        let expected = Network::zeros(network.architecture(), dims);
        for ((name, want), (_, got)) in expected.tensors().iter().zip(network.tensors()) {
            if !want.same_shape(got) {
                return Err(Error::invalid(format!(
                    "tensor {name} has shape {}x{}, expected {}x{}",
                    got.rows(),
                    got.cols(),
                    want.rows(),
                    want.cols()
                )));
            }
        }
        Ok(Self {
            dims,
            embeddings,
            network,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.network.architecture()
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.embeddings
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// Context windows and their embedded, input-dropped vectors.
    fn inputs(
        &self,
        tokens: &[usize],
        input_masks: Option<&[Vec<f64>]>,
    ) -> Result<(Vec<Vec<usize>>, Vec<Vec<f64>>)> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        let mut windows = Vec::with_capacity(tokens.len());
        let mut xs = Vec::with_capacity(tokens.len());
        for t in 0..tokens.len() {
            let window = context_window(tokens, t, self.dims.window)?;
            let mut x = crate::embedding::window_embed(&window, &self.embeddings)?;
            if let Some(m) = input_masks {
                x.iter_mut().zip(&m[t]).for_each(|(v, k)| *v *= k);
            }
            windows.push(window);
            xs.push(x);
        }
        Ok((windows, xs))
    }

    fn check_masks(&self, steps: usize, masks: Option<&DropoutMasks>) -> Result<()> {
        let Some(m) = masks else { return Ok(()) };
        let feat = self.dims.feature_dim(self.architecture());
        if m.input.len() != steps || m.hidden.len() != steps {
            return Err(Error::dims(
                "dropout mask steps",
                steps,
                m.input.len().min(m.hidden.len()),
            ));
        }
        if m.input.iter().any(|v| v.len() != self.dims.input_dim())
            || m.hidden.iter().any(|v| v.len() != feat)
        {
            return Err(Error::invalid(
                "dropout mask width does not match the model",
            ));
        }
        Ok(())
    }

    /// Sentence loss (summed cross-entropy for Elman/Jordan, CRF negative
    /// log-likelihood for BiLSTM-CRF) and its exact gradient.
    pub fn loss_and_gradients(
        &self,
        tokens: &[usize],
        gold: &[usize],
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Gradients)> {
        if gold.len() != tokens.len() {
            return Err(Error::dims("gold tag count", tokens.len(), gold.len()));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= self.dims.num_tags) {
            return Err(Error::invalid(format!(
                "gold tag {bad} out of range 0..{}",
                self.dims.num_tags
            )));
        }
        self.check_masks(tokens.len(), masks)?;
        let input_masks = masks.map(|m| m.input.as_slice());
        let hidden_masks = masks.map(|m| m.hidden.as_slice());
        let (windows, xs) = self.inputs(tokens, input_masks)?;

        let mut grad_net = Network::zeros(self.architecture(), self.dims);
        let (loss, dxs) = match (&self.network, &mut grad_net) {
            (Network::Elman(p), Network::Elman(g)) | (Network::Jordan(p), Network::Jordan(g)) => {
                let trace = p.forward(&xs, hidden_masks)?;
                let loss = SrnParams::cross_entropy(&trace, gold);
                let dxs = p.backward(&xs, &trace, gold, hidden_masks, g)?;
                (loss, dxs)
            }
            (Network::BiLstmCrf(p), Network::BiLstmCrf(g)) => {
                let trace = p.forward_pass(&xs, hidden_masks)?;
                p.backward_pass(&xs, &trace, gold, hidden_masks, g)?
            }
            _ => unreachable!("gradient network mirrors the model"),
        };

        let d = self.dims.embedding_dim;
        let mut embeddings: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (t, (window, dx)) in windows.iter().zip(&dxs).enumerate() {
            for (j, &row) in window.iter().enumerate() {
                let acc = embeddings.entry(row).or_insert_with(|| vec![0.0; d]);
                let seg = &dx[j * d..(j + 1) * d];
                match input_masks {
                    Some(m) => {
                        let mseg = &m[t][j * d..(j + 1) * d];
                        for ((a, g), k) in acc.iter_mut().zip(seg).zip(mseg) {
                            *a += g * k;
                        }
                    }
                    None => acc.iter_mut().zip(seg).for_each(|(a, g)| *a += g),
                }
            }
        }
        Ok((
            loss,
            Gradients {
                network: grad_net,
                embeddings,
            },
        ))
    }

    /// Sentence loss without dropout.
    pub fn loss(&self, tokens: &[usize], gold: &[usize]) -> Result<f64> {
        if gold.len() != tokens.len() {
            return Err(Error::dims("gold tag count", tokens.len(), gold.len()));
        }
        let (_, xs) = self.inputs(tokens, None)?;
        match &self.network {
            Network::Elman(p) | Network::Jordan(p) => {
                let trace = p.forward(&xs, None)?;
                Ok(SrnParams::cross_entropy(&trace, gold))
            }
            Network::BiLstmCrf(p) => {
                let trace = p.forward_pass(&xs, None)?;
                crate::crf::nll(&trace.emissions, &p.crf, gold)
            }
        }
    }

    /// Per-token tag indices. Never applies dropout.
    pub fn predict(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        self.predict_masked(tokens, None)
    }

    /// As [`Tagger::predict`]; `mask` restricts CRF decoding to allowed
    /// bigrams and is ignored by Elman/Jordan.
    pub fn predict_masked(
        &self,
        tokens: &[usize],
        mask: Option<&TransitionMask>,
    ) -> Result<Vec<usize>> {
        let (_, xs) = self.inputs(tokens, None)?;
        match &self.network {
            Network::Elman(p) | Network::Jordan(p) => {
                let trace = p.forward(&xs, None)?;
                Ok(trace.outputs.iter().map(|y| argmax(y)).collect())
            }
            Network::BiLstmCrf(p) => p.decode(&xs, mask),
        }
    }

    /// `θ ← θ − lr · g`
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.network.architecture() != self.architecture() {
            return Err(Error::invalid(
                "gradient architecture does not match the model",
            ));
        }
        for (p, (_, g)) in self
            .network
            .tensors_mut()
            .into_iter()
            .zip(grads.network.tensors())
        {
            p.axpy(-learning_rate, g)?;
        }
        for (&row, g) in &grads.embeddings {
            if row >= self.embeddings.len() {
                return Err(Error::invalid(format!(
                    "embedding gradient row {row} out of range"
                )));
            }
            for (p, gv) in self.embeddings.row_mut(row).iter_mut().zip(g) {
                *p -= learning_rate * gv;
            }
        }
        Ok(())
    }

    /// All trainable values, network tensors first, then the embedding table.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (_, m) in self.network.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        out.extend_from_slice(self.embeddings.matrix().as_slice());
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self
            .network
            .tensors()
            .iter()
            .map(|(_, m)| m.len())
            .sum::<usize>()
            + self.embeddings.matrix().len();
        if values.len() != total {
            return Err(Error::dims("flat parameter vector", total, values.len()));
        }
        let mut offset = 0;
        for m in self.network.tensors_mut() {
            let n = m.len();
            m.as_mut_slice()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        self.embeddings
            .matrix_mut()
            .as_mut_slice()
            .copy_from_slice(&values[offset..]);
        Ok(())
    }

    /// Gradient laid out like [`Tagger::flat_params`].
    pub fn flat_gradients(&self, grads: &Gradients) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (_, m) in grads.network.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        let d = self.dims.embedding_dim;
        let mut emb = vec![0.0; self.embeddings.len() * d];
        for (&row, g) in &grads.embeddings {
            emb[row * d..(row + 1) * d].copy_from_slice(g);
        }
        out.extend(emb);
        out
    }

    /// Name of the tensor holding flat parameter `index`.
    pub fn param_name(&self, index: usize) -> String {
        let mut offset = 0;
        for (name, m) in self.network.tensors() {
            if index < offset + m.len() {
                return format!("{name}[{}]", index - offset);
            }
            offset += m.len();
        }
        format!("embeddings[{}]", index - offset)
    }
}

fn validate_dims(dims: ModelDims) -> Result<()> {
    if dims.hidden == 0 || dims.embedding_dim == 0 || dims.num_tags == 0 {
        return Err(Error::invalid(
            "hidden size, embedding dimension and tag count must be positive",
        ));
    }
    if dims.window == 0 || dims.window % 2 == 0 {
        return Err(Error::invalid(format!(
            "window size must be odd and >= 1, got {}",
            dims.window
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
