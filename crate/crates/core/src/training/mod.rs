//! Per-sentence SGD with dropout, best-on-validation checkpointing, data
//! splitting and random hyperparameter search.

mod checkpoint;
mod search;

use std::collections::HashMap;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::Serialize;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use search::{
    random_search, random_search_with_validation, sample_hyperparams, SearchConfig, SearchOutcome,
    TrialRecord,
};

use crate::corpus::Corpus;
use crate::embedding::{normalize_token, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::eval::{evaluate_strict, EvalReport};
use crate::models::{Architecture, DropoutMasks, ModelDims, Tagger};
use crate::numeric::SeededRng;
use crate::tags::{iob_to_spans, EntitySpan, Tag, TagSet};

pub const HIDDEN_SIZES: [usize; 3] = [25, 50, 100];
pub const WINDOW_SIZES: [usize; 3] = [1, 3, 5];
pub const EMBEDDING_DIMS: [usize; 5] = [50, 100, 300, 500, 1000];
/// Closed interval for both the learning rate and the dropout rate.
pub const RATE_RANGE: (f64, f64) = (0.05, 0.1);
pub const DEFAULT_MAX_EPOCHS: usize = 100;
pub const TRAIN_FRACTION: f64 = 0.7;
/// Probability of replacing a training-split singleton with `<unk>`.
pub const UNK_REPLACEMENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub hidden: usize,
    pub window: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    /// Probability of dropping a unit.
    pub dropout_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Rescale the sentence gradient to this L2 norm when it is larger. Off
    /// unless set.
    pub clip_norm: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden: 50,
            window: 3,
            embedding_dim: 100,
            learning_rate: 0.05,
            dropout_rate: 0.05,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
            clip_norm: None,
        }
    }
}

fn set_listing(values: &[usize]) -> String {
    let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

impl HyperParams {
    pub fn dims(&self, num_tags: usize) -> ModelDims {
        ModelDims {
            hidden: self.hidden,
            window: self.window,
            embedding_dim: self.embedding_dim,
            num_tags,
        }
    }

    /// Checks that the values can be trained with at all: positive sizes, odd
    /// window, `0 <= dropout < 1`, finite non-negative learning rate.
    pub fn validate_structure(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid(
                "hidden size and embedding dimension must be positive",
            ));
        }
        if self.window % 2 == 0 {
            return Err(Error::invalid(format!(
                "window size must be odd, got {}",
                self.window
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max epochs must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!(
                    "clip norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// [`HyperParams::validate_structure`] plus membership in the search
    /// sets and rate interval.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let check_set = |name: &str, value: usize, set: &[usize]| {
            if set.contains(&value) {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} {value} is outside the allowed set {}",
                    set_listing(set)
                )))
            }
        };
        check_set("hidden size", self.hidden, &HIDDEN_SIZES)?;
        check_set("window size", self.window, &WINDOW_SIZES)?;
        check_set("embedding dimension", self.embedding_dim, &EMBEDDING_DIMS)?;
        let (lo, hi) = RATE_RANGE;
        for (name, v) in [
            ("learning rate", self.learning_rate),
            ("dropout rate", self.dropout_rate),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} {v} is outside the allowed range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_f1: f64,
    /// Milliseconds since the Unix epoch when the epoch finished.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainRecord {
    pub fn best_f1(&self) -> f64 {
        self.epochs[self.best_epoch - 1].validation_f1
    }
}

/// A training sentence as vocabulary and tag indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub gold: Vec<usize>,
    /// Positions eligible for `<unk>` replacement.
    pub singleton: Vec<bool>,
}

/// Encodes a tagged corpus. Words seen exactly once in `corpus` are marked
/// as singletons.
pub fn encode_training(corpus: &Corpus, vocab: &Vocabulary) -> Result<Vec<EncodedSentence>> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in &corpus.sentences {
        for w in &s.words {
            *counts.entry(normalize_token(w)).or_default() += 1;
        }
    }
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let tags = s.tags.as_ref().ok_or_else(|| {
                Error::invalid(format!("training sentence {} has no gold tags", n + 1))
            })?;
            if s.words.is_empty() {
                return Err(Error::Empty("training sentence"));
            }
            Ok(EncodedSentence {
                tokens: vocab.encode(&s.words),
                gold: tags.iter().map(|t| t.index()).collect(),
                singleton: s
                    .words
                    .iter()
                    .map(|w| counts[&normalize_token(w)] == 1)
                    .collect(),
            })
        })
        .collect()
}

/// Shuffled sentence-level split with `round(ratio * N)` training sentences.
/// Both parts keep the corpus order.
pub fn split_train_validation(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 sentences to split, got {n}"
        )));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "ratio {ratio} leaves one side of a {n}-sentence split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let part = |want: bool, suffix: &str| Corpus {
        sentences: (0..n)
            .filter(|&i| in_train[i] == want)
            .map(|i| corpus.sentences[i].clone())
            .collect(),
        provenance: format!("{}:{suffix}", corpus.provenance),
        documents: None,
    };
    Ok((part(true, "train"), part(false, "validation")))
}

/// One pass over `data` in a freshly shuffled order, updating after every
/// sentence. Returns the mean sentence loss.
pub fn sgd_epoch(
    tagger: &mut Tagger,
    data: &[EncodedSentence],
    hp: &HyperParams,
    rng: &mut SeededRng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let dims = tagger.dims();
    if (dims.hidden, dims.window, dims.embedding_dim) != (hp.hidden, hp.window, hp.embedding_dim) {
        return Err(Error::invalid(
            "model dimensions do not match the hyperparameters",
        ));
    }
    let feature_dim = dims.feature_dim(tagger.architecture());
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    let mut tokens = Vec::new();
    for &i in &order {
        let s = &data[i];
        tokens.clear();
        for (&tok, &single) in s.tokens.iter().zip(&s.singleton) {
            tokens.push(if single && rng.bernoulli(UNK_REPLACEMENT) {
                UNK
            } else {
                tok
            });
        }
        let masks = (hp.dropout_rate > 0.0).then(|| {
            DropoutMasks::sample(
                rng,
                tokens.len(),
                dims.input_dim(),
                feature_dim,
                hp.dropout_rate,
            )
        });
        let (loss, mut grads) = tagger.loss_and_gradients(&tokens, &s.gold, masks.as_ref())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} on sentence {}",
                i + 1
            )));
        }
        if let Some(limit) = hp.clip_norm {
            let norm = grads.squared_norm().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient norm on sentence {}",
                    i + 1
                )));
            }
            if norm > limit {
                grads.scale(limit / norm);
            }
        }
        tagger.apply_gradients(&grads, hp.learning_rate)?;
        total += loss;
    }
    if tagger.flat_params().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model parameters after epoch".into()));
    }
    Ok(total / data.len() as f64)
}

/// Tags every sentence and scores the result against the gold tags.
pub(crate) fn evaluate_tagger(
    corpus: &Corpus,
    mut predict: impl FnMut(&[String]) -> Result<Vec<Tag>>,
) -> Result<EvalReport> {
    let mut gold: Vec<Vec<EntitySpan>> = Vec::with_capacity(corpus.len());
    let mut predicted = Vec::with_capacity(corpus.len());
    for (n, s) in corpus.sentences.iter().enumerate() {
        let tags = s.tags.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "sentence {} has no gold tags; evaluation needs a tagged corpus",
                n + 1
            ))
        })?;
        gold.push(iob_to_spans(tags));
        predicted.push(iob_to_spans(&predict(&s.words)?));
    }
    evaluate_strict(&gold, &predicted)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Splits `corpus` 70/30 with `hp.seed`, then runs
/// [`train_with_validation`].
pub fn train(
    arch: Architecture,
    corpus: &Corpus,
    hp: &HyperParams,
) -> Result<(Checkpoint, TrainRecord)> {
    let (train_set, validation) = split_train_validation(corpus, TRAIN_FRACTION, hp.seed)?;
    train_with_validation(arch, &train_set, &validation, hp)
}

/// Trains for `hp.max_epochs` epochs, scoring strict micro-F1 on
/// `validation` after each one, and returns the parameters of the best
/// epoch (earliest on ties).
pub fn train_with_validation(
    arch: Architecture,
    train_set: &Corpus,
    validation: &Corpus,
    hp: &HyperParams,
) -> Result<(Checkpoint, TrainRecord)> {
    hp.validate_structure()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let tag_set = TagSet::standard();
    let vocab = Vocabulary::build(train_set.sentences.iter().map(|s| s.words.as_slice()))?;
    let data = encode_training(train_set, &vocab)?;
    let mut init_rng = SeededRng::derive(hp.seed, 1);
    let mut rng = SeededRng::derive(hp.seed, 2);
    let tagger = Tagger::new(arch, vocab.len(), hp.dims(tag_set.len()), &mut init_rng)?;
    let mut current = Checkpoint::new(*hp, vocab, tagger)?;

    let mut epochs = Vec::with_capacity(hp.max_epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    for epoch in 1..=hp.max_epochs {
        let loss = sgd_epoch(&mut current.tagger, &data, hp, &mut rng)?;
        let f1 = current.evaluate(validation, false)?.micro().f1();
        info!("{arch} epoch {epoch}: loss {loss:.4}, validation F1 {f1:.2}");
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            validation_f1: f1,
            timestamp_ms: now_ms(),
        });
        if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, current.clone()));
        }
    }
    let (_, best_epoch, checkpoint) = best.expect("max_epochs >= 1");
    Ok((checkpoint, TrainRecord { epochs, best_epoch }))
}
