//! Synthetic fine-tuning tasks.
//!
//! Classification: each class owns a few indicator tokens, and every
//! example carries indicators of its class among random filler, so a
//! bag-of-tokens classifier separates the classes perfectly.
//!
//! Span extraction: the answer is the run of tokens strictly between the
//! only `SPAN_OPEN` and `SPAN_CLOSE` markers in the sequence.

use rand::{Rng, SeedableRng};

use super::{CLS, NUM_SPECIAL, SEP};
use crate::params::Rng as ChaCha;
use crate::{Error, Result};

/// Marker id opening the answer span in [`span_task`] sequences.
pub const SPAN_OPEN: usize = NUM_SPECIAL;
/// Marker id closing the answer span.
pub const SPAN_CLOSE: usize = NUM_SPECIAL + 1;

const INDICATORS_PER_CLASS: usize = 3;
const INDICATORS_PER_EXAMPLE: usize = 2;
const MAX_ANSWER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskLabel {
    Class(usize),
    /// Inclusive token positions.
    Span {
        start: usize,
        end: usize,
    },
}

/// `[CLS] tokens [SEP]`, single segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExample {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub label: TaskLabel,
}

impl TaskExample {
    /// `[CLS] body [SEP]`, all in segment 0.
    pub fn wrap(body: Vec<usize>, label: TaskLabel) -> Self {
        let mut token_ids = Vec::with_capacity(body.len() + 2);
        token_ids.push(CLS);
        token_ids.extend(body);
        token_ids.push(SEP);
        let segment_ids = vec![0; token_ids.len()];
        Self {
            token_ids,
            segment_ids,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Right-padded batch of task examples, row-major `[B, S]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskBatch {
    pub batch: usize,
    pub seq: usize,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub valid: Vec<bool>,
    pub labels: Vec<TaskLabel>,
}

pub fn make_task_batch(examples: &[TaskExample]) -> Result<TaskBatch> {
    if examples.is_empty() {
        return Err(Error::Data("cannot batch zero examples".into()));
    }
    let batch = examples.len();
    let seq = examples.iter().map(TaskExample::len).max().unwrap_or(0);
    let mut out = TaskBatch {
        batch,
        seq,
        token_ids: vec![super::PAD; batch * seq],
        segment_ids: vec![0; batch * seq],
        valid: vec![false; batch * seq],
        labels: examples.iter().map(|e| e.label).collect(),
    };
    for (b, e) in examples.iter().enumerate() {
        let row = b * seq;
        out.token_ids[row..row + e.len()].copy_from_slice(&e.token_ids);
        out.segment_ids[row..row + e.len()].copy_from_slice(&e.segment_ids);
        out.valid[row..row + e.len()].iter_mut().for_each(|v| *v = true);
    }
    Ok(out)
}

fn check_len(len: usize, min: usize, max_len: usize) -> Result<()> {
    if len < min || len + 2 > max_len {
        return Err(Error::Config(format!(
            "task body length {len} must be in [{min}, {}]",
            max_len.saturating_sub(2)
        )));
    }
    Ok(())
}

/// `num_examples` sequences of `body_len` tokens labelled by class.
pub fn classification_task(
    num_examples: usize,
    num_classes: usize,
    body_len: usize,
    vocab_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TaskExample>> {
    check_len(body_len, INDICATORS_PER_EXAMPLE, max_len)?;
    let first_filler = NUM_SPECIAL + num_classes * INDICATORS_PER_CLASS;
    if num_classes < 2 || first_filler >= vocab_size {
        return Err(Error::Config(format!(
            "{num_classes} classes do not fit a vocabulary of {vocab_size}"
        )));
    }
    let mut rng = ChaCha::seed_from_u64(seed);
    let examples = (0..num_examples)
        .map(|_| {
            let class = rng.random_range(0..num_classes);
            let mut body: Vec<usize> = (0..body_len)
                .map(|_| rng.random_range(first_filler..vocab_size))
                .collect();
            for _ in 0..INDICATORS_PER_EXAMPLE {
                let pos = rng.random_range(0..body_len);
                body[pos] =
                    NUM_SPECIAL + class * INDICATORS_PER_CLASS + rng.random_range(0..INDICATORS_PER_CLASS);
            }
            TaskExample::wrap(body, TaskLabel::Class(class))
        })
        .collect();
    Ok(examples)
}

/// `num_examples` sequences of `body_len` tokens containing one marked
/// answer of 1 to 4 tokens.
pub fn span_task(
    num_examples: usize,
    body_len: usize,
    vocab_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TaskExample>> {
    check_len(body_len, MAX_ANSWER_LEN + 2, max_len)?;
    let first_filler = SPAN_CLOSE + 1;
    if first_filler >= vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {vocab_size} leaves no filler tokens"
        )));
    }
    let mut rng = ChaCha::seed_from_u64(seed);
    let examples = (0..num_examples)
        .map(|_| {
            let mut body: Vec<usize> = (0..body_len)
                .map(|_| rng.random_range(first_filler..vocab_size))
                .collect();
            let answer = rng.random_range(1..=MAX_ANSWER_LEN);
            let open = rng.random_range(0..body_len - answer - 1);
            body[open] = SPAN_OPEN;
            body[open + answer + 1] = SPAN_CLOSE;
            // +1 for the leading [CLS].
            let start = open + 2;
            TaskExample::wrap(
                body,
                TaskLabel::Span {
                    start,
                    end: start + answer - 1,
                },
            )
        })
        .collect();
    Ok(examples)
}
