use super::{PretrainExample, PAD};
use crate::{Error, Result};

/// Right-padded batch in row-major `[B, S]` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// True at real tokens, false at padding.
    pub valid: Vec<bool>,
    /// MLM targets as flat indices `b·S + p`, in example order.
    pub mlm_positions: Vec<usize>,
    pub mlm_labels: Vec<usize>,
    pub nsp_labels: Vec<usize>,
}

impl Batch {
    pub fn lengths(&self) -> Vec<usize> {
        self.valid
            .chunks(self.seq)
            .map(|row| row.iter().filter(|&&v| v).count())
            .collect()
    }
}

/// Pads every example to the longest one. Examples longer than `max_len`
/// are truncated first (second segment before the first).
pub fn make_batch(examples: &[PretrainExample], max_len: usize) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::Data("cannot batch zero examples".into()));
    }
    let examples: Vec<PretrainExample> = examples
        .iter()
        .map(|e| e.truncated(max_len))
        .collect::<Result<_>>()?;
    let batch = examples.len();
    let seq = examples.iter().map(PretrainExample::len).max().unwrap_or(0);
    let mut out = Batch {
        batch,
        seq,
        token_ids: vec![PAD; batch * seq],
        segment_ids: vec![0; batch * seq],
        valid: vec![false; batch * seq],
        mlm_positions: Vec::new(),
        mlm_labels: Vec::new(),
        nsp_labels: Vec::with_capacity(batch),
    };
    for (b, e) in examples.iter().enumerate() {
        let row = b * seq;
        out.token_ids[row..row + e.len()].copy_from_slice(&e.token_ids);
        out.segment_ids[row..row + e.len()].copy_from_slice(&e.segment_ids);
        out.valid[row..row + e.len()].iter_mut().for_each(|v| *v = true);
        out.mlm_positions.extend(e.mlm_positions.iter().map(|p| row + p));
        out.mlm_labels.extend_from_slice(&e.mlm_labels);
        out.nsp_labels.push(e.nsp_label);
    }
    Ok(out)
}
