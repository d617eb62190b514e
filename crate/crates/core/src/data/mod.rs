//! Corpus ingestion, tokenization, sentence-pair sampling, whole-word
//! masking and batching.
//!
//! Corpus text format: one sentence per line, documents separated by blank
//! lines. Vocab files hold one token per line; the line number is the id.

mod batch;
mod corpus;
mod masking;
mod pairs;
mod synthetic;
mod tasks;
mod vocab;

pub use batch::{make_batch, Batch};
pub use corpus::{Corpus, TokenizedCorpus};
pub use masking::{
    format_pair, validate_structure, whole_word_mask, FormattedPair, MaskConfig, PretrainExample, Treatment,
};
pub use pairs::{sample_sentence_pair, PairIndex, IS_NEXT, NOT_NEXT};
pub use synthetic::{gen_synthetic_corpus, BigramOracle, SyntheticCorpus, SyntheticSpec};
pub use tasks::{
    classification_task, make_task_batch, span_task, TaskBatch, TaskExample, TaskLabel, SPAN_CLOSE, SPAN_OPEN,
};
pub use vocab::{Piece, Vocab};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}
