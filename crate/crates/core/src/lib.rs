//! Recurrent sequence taggers for drug name recognition.
//!
//! Three architectures share one pipeline: an Elman network, a Jordan network
//! and a bidirectional LSTM with a linear-chain CRF output layer. Words are
//! mapped to trainable vectors, concatenated over a context window, and tagged
//! with the IOB scheme over four entity classes (`drug`, `brand`, `group`,
//! `drug_n`). Training is plain per-sentence SGD with full backpropagation
//! through time; evaluation is strict span matching.

pub mod corpus;
pub mod crf;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod models;
pub mod numeric;
pub mod tags;
pub mod training;

pub use corpus::{Corpus, CorpusStats, Sentence};
pub use embedding::Vocabulary;
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use models::{Architecture, ModelDims, Tagger};
pub use numeric::{Matrix, SeededRng};
pub use tags::{EntityClass, EntitySpan, Tag, TagSet};
pub use training::{Checkpoint, HyperParams, SearchConfig, SearchOutcome, TrainRecord};
