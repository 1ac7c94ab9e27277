//! Random hyperparameter search.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::numeric::SeededRng;

use super::{
    split_train_validation, train_with_validation, Checkpoint, HyperParams, EMBEDDING_DIMS,
    HIDDEN_SIZES, RATE_RANGE, TRAIN_FRACTION, WINDOW_SIZES,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub clip_norm: Option<f64>,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            max_epochs: super::DEFAULT_MAX_EPOCHS,
            clip_norm: None,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub hyperparams: HyperParams,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub validation_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// In trial order.
    pub trials: Vec<TrialRecord>,
    pub best_trial: usize,
    pub checkpoint: Checkpoint,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best_trial]
    }
}

/// Draws H, s and d uniformly from their sets and both rates uniformly from
/// the closed rate interval. The trial seed comes from the same stream.
pub fn sample_hyperparams(
    rng: &mut SeededRng,
    max_epochs: usize,
    clip_norm: Option<f64>,
) -> HyperParams {
    let (lo, hi) = RATE_RANGE;
    HyperParams {
        hidden: *rng.choose(&HIDDEN_SIZES),
        window: *rng.choose(&WINDOW_SIZES),
        embedding_dim: *rng.choose(&EMBEDDING_DIMS),
        learning_rate: rng.uniform_inclusive(lo, hi),
        dropout_rate: rng.uniform_inclusive(lo, hi),
        max_epochs,
        seed: rng.next_u64(),
        clip_norm,
    }
}

/// Splits `corpus` 70/30 once (with the search seed) and runs
/// [`random_search_with_validation`] on that split.
pub fn random_search(
    arch: Architecture,
    corpus: &Corpus,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let (train_set, validation) = split_train_validation(corpus, TRAIN_FRACTION, config.seed)?;
    random_search_with_validation(arch, &train_set, &validation, config)
}

type Best = Option<(f64, usize, Checkpoint)>;

fn better(a: Best, b: Best) -> Best {
    match (a, b) {
        (Some(x), Some(y)) => {
            // highest F1, then lowest trial index
            if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
        (x, None) => x,
        (None, y) => y,
    }
}

/// Trial `i` samples from `SeededRng::derive(seed, i)`, so results do not
/// depend on how trials are scheduled across threads.
pub fn random_search_with_validation(
    arch: Architecture,
    train_set: &Corpus,
    validation: &Corpus,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    if config.trials == 0 {
        return Err(Error::invalid("random search needs at least one trial"));
    }
    let run_trial = |i: usize| -> Result<(Vec<TrialRecord>, Best)> {
        let hp = sample_hyperparams(
            &mut SeededRng::derive(config.seed, i as u64),
            config.max_epochs,
            config.clip_norm,
        );
        log::info!(
            "trial {i}: H={} s={} d={} lr={:.4} dropout={:.4}",
            hp.hidden,
            hp.window,
            hp.embedding_dim,
            hp.learning_rate,
            hp.dropout_rate
        );
        let (checkpoint, record) = train_with_validation(arch, train_set, validation, &hp)?;
        let f1 = record.best_f1();
        let trial = TrialRecord {
            trial: i,
            hyperparams: hp,
            best_epoch: record.best_epoch,
            epochs_run: record.epochs.len(),
            validation_f1: f1,
        };
        Ok((vec![trial], Some((f1, i, checkpoint))))
    };
    let merge = |a: Result<(Vec<TrialRecord>, Best)>, b: Result<(Vec<TrialRecord>, Best)>| {
        let (mut ra, ba) = a?;
        let (rb, bb) = b?;
        ra.extend(rb);
        Ok((ra, better(ba, bb)))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))?;
    let (mut trials, best) = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(run_trial)
            .reduce(|| Ok((Vec::new(), None)), merge)
    })?;
    trials.sort_by_key(|t| t.trial);
    let (_, best_trial, checkpoint) = best.expect("at least one trial");
    Ok(SearchOutcome {
        trials,
        best_trial,
        checkpoint,
    })
}
