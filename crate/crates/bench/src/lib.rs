//! Shared fixtures for the benchmarks.

use drugtag::crf::{EmissionScores, TransitionTable};
use drugtag::models::{Architecture, ModelDims, Tagger};
use drugtag::numeric::{Matrix, SeededRng};

pub const NUM_TAGS: usize = 9;

pub fn emissions(len: usize, seed: u64) -> EmissionScores {
    let mut rng = SeededRng::new(seed);
    let data = (0..len * NUM_TAGS)
        .map(|_| rng.uniform(-5.0, 5.0))
        .collect();
    EmissionScores::new(Matrix::from_vec(len, NUM_TAGS, data).expect("shape"))
}

pub fn transitions(seed: u64) -> TransitionTable {
    let mut rng = SeededRng::new(seed);
    let mut table = TransitionTable::zeros(NUM_TAGS);
    for m in [&mut table.transitions, &mut table.start, &mut table.stop] {
        m.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-2.0, 2.0));
    }
    table
}

/// Tagger over a 5000-word vocabulary.
pub fn tagger(arch: Architecture, hidden: usize, window: usize, embedding_dim: usize) -> Tagger {
    let dims = ModelDims {
        hidden,
        window,
        embedding_dim,
        num_tags: NUM_TAGS,
    };
    Tagger::new(arch, 5000, dims, &mut SeededRng::new(1)).expect("valid dims")
}

/// Token ids and gold tag ids for a sentence of `len` tokens.
pub fn sentence(len: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let tokens = (0..len).map(|_| 2 + rng.below(4998)).collect();
    let gold = (0..len).map(|_| rng.below(NUM_TAGS)).collect();
    (tokens, gold)
}
