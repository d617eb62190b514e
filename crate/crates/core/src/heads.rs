//! Output heads and their losses.
//!
//! The MLM head's output projection is the transposed token-embedding table
//! (same store entry), plus a per-token bias. Sentence-level heads read the
//! `[CLS]` position through a tanh pooler.

use crate::nn::{Blstm, LayerNorm, Linear};
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::tensor::Var;
use crate::{Error, Result};

/// Number of stacked BLSTM layers in the task decoder.
pub const DECODER_LAYERS: usize = 2;

/// Longest span considered by [`decode_span`].
pub const MAX_SPAN_LEN: usize = 30;

#[derive(Debug, Clone)]
pub struct MlmHead {
    pub transform: Linear,
    pub norm: LayerNorm,
    pub bias: ParamId,
    /// The encoder's token embedding table `[V, H]`.
    pub tied_table: ParamId,
}

impl MlmHead {
    pub fn new(
        b: &mut ParamBuilder<'_>,
        hidden: usize,
        vocab_size: usize,
        eps: f64,
        tied_table: ParamId,
    ) -> Result<Self> {
        Ok(Self {
            transform: Linear::new(&mut b.sub("transform"), hidden, hidden)?,
            norm: LayerNorm::new(&mut b.sub("norm"), hidden, eps)?,
            bias: b.zeros("bias", &[vocab_size])?,
            tied_table,
        })
    }

    /// Vocabulary logits `[M, V]` at the given flat positions of `hidden`.
    pub fn logits(&self, g: &mut Graph<'_>, hidden: Var, flat_positions: &[usize]) -> Result<Var> {
        let h = *g.tape.shape(hidden).last().unwrap();
        let rows = g.tape.value(hidden).len() / h;
        let flat = g.tape.reshape(hidden, &[rows, h])?;
        let picked = g.tape.gather(flat, flat_positions)?;
        let t = self.transform.forward(g, picked)?;
        let t = g.tape.gelu(t)?;
        let t = self.norm.forward(g, t)?;
        let table_t = g.tape.transpose(g.param(self.tied_table))?;
        let logits = g.tape.matmul(t, table_t)?;
        Ok(g.tape.add(logits, g.param(self.bias))?)
    }
}

/// Mean cross-entropy over masked positions only.
pub fn mlm_loss(
    g: &mut Graph<'_>,
    hidden: Var,
    flat_positions: &[usize],
    labels: &[usize],
    head: &MlmHead,
) -> Result<Var> {
    if flat_positions.is_empty() {
        return Err(Error::Contract(
            "MLM loss needs at least one masked position".into(),
        ));
    }
    if flat_positions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} masked positions but {} labels",
            flat_positions.len(),
            labels.len()
        )));
    }
    let logits = head.logits(g, hidden, flat_positions)?;
    Ok(g.tape.cross_entropy(logits, labels, None)?)
}

/// `tanh(W·h_[CLS] + b)` over position 0 of each sequence; returns `[B, H]`.
#[derive(Debug, Clone)]
pub struct Pooler {
    pub dense: Linear,
}

impl Pooler {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize) -> Result<Self> {
        Ok(Self {
            dense: Linear::new(&mut b.sub("dense"), hidden, hidden)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
        let shape = g.tape.shape(hidden).to_vec();
        let (batch, h) = (shape[0], shape[shape.len() - 1]);
        let cls = if shape.len() == 3 {
            let first = g.tape.slice(hidden, 1, 0, 1)?;
            g.tape.reshape(first, &[batch, h])?
        } else {
            g.tape.slice(hidden, 0, 0, 1)?
        };
        let d = self.dense.forward(g, cls)?;
        Ok(g.tape.tanh(d)?)
    }
}

/// Pooler plus a linear map to `num_classes` logits. Used for next-sentence
/// prediction (2 classes) and sentence classification.
#[derive(Debug, Clone)]
pub struct ClsHead {
    pub pooler: Pooler,
    pub classifier: Linear,
    pub num_classes: usize,
}

impl ClsHead {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            pooler: Pooler::new(&mut b.sub("pooler"), hidden)?,
            classifier: Linear::new(&mut b.sub("classifier"), hidden, num_classes)?,
            num_classes,
        })
    }

    /// `[B, C]` logits.
    pub fn logits(&self, g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
        let pooled = self.pooler.forward(g, hidden)?;
        let pooled = g.dropout(pooled)?;
        self.classifier.forward(g, pooled)
    }
}

/// NSP labels: 0 = B follows A, 1 = B is random.
pub fn nsp_loss(g: &mut Graph<'_>, hidden: Var, labels: &[usize], head: &ClsHead) -> Result<Var> {
    classification_loss(g, hidden, labels, head)
}

pub fn classification_loss(g: &mut Graph<'_>, hidden: Var, labels: &[usize], head: &ClsHead) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= head.num_classes) {
        return Err(Error::Contract(format!(
            "label {bad} outside [0, {})",
            head.num_classes
        )));
    }
    let logits = head.logits(g, hidden)?;
    Ok(g.tape.cross_entropy(logits, labels, None)?)
}

/// Two stacked BLSTM layers, each projected back to `H`.
#[derive(Debug, Clone)]
pub struct BlstmDecoder {
    pub layers: Vec<Blstm>,
}

impl BlstmDecoder {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize) -> Result<Self> {
        let layers = (0..DECODER_LAYERS)
            .map(|i| Blstm::new(&mut b.sub(&format!("layer{i}")), hidden, hidden, true))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph<'_>, hidden: Var, valid: &[bool]) -> Result<Var> {
        let mut h = hidden;
        for layer in &self.layers {
            h = layer.forward(g, h, valid)?;
        }
        Ok(h)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Blstm::num_params).sum()
    }
}

/// Per-position start/end logits for extractive span prediction.
#[derive(Debug, Clone)]
pub struct SpanHead {
    pub output: Linear,
}

impl SpanHead {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize) -> Result<Self> {
        Ok(Self {
            output: Linear::new(&mut b.sub("output"), hidden, 2)?,
        })
    }

    /// `(start, end)` logits, each `[B, S]`.
    pub fn logits(&self, g: &mut Graph<'_>, hidden: Var) -> Result<(Var, Var)> {
        let shape = g.tape.shape(hidden).to_vec();
        let (batch, seq) = (shape[0], shape[1]);
        let out = self.output.forward(g, hidden)?;
        let start = g.tape.slice(out, 2, 0, 1)?;
        let end = g.tape.slice(out, 2, 1, 2)?;
        Ok((
            g.tape.reshape(start, &[batch, seq])?,
            g.tape.reshape(end, &[batch, seq])?,
        ))
    }
}

/// Mean of the start and end cross-entropies. Padded positions are excluded
/// from the softmax over positions.
pub fn span_loss(
    g: &mut Graph<'_>,
    hidden: Var,
    starts: &[usize],
    ends: &[usize],
    valid: &[bool],
    head: &SpanHead,
) -> Result<Var> {
    let seq = g.tape.shape(hidden)[1];
    for (b, (&s, &e)) in starts.iter().zip(ends).enumerate() {
        let ok = s <= e && e < seq && valid[b * seq + s] && valid[b * seq + e];
        if !ok {
            return Err(Error::Contract(format!(
                "span labels ({s}, {e}) invalid for sequence {b} of length {seq}"
            )));
        }
    }
    let (start, end) = head.logits(g, hidden)?;
    let ls = g.tape.cross_entropy(start, starts, Some(valid))?;
    let le = g.tape.cross_entropy(end, ends, Some(valid))?;
    let sum = g.tape.add(ls, le)?;
    Ok(g.tape.scale(sum, 0.5)?)
}

/// Best `(start, end)` maximizing `start_logit + end_logit` subject to
/// `start ≤ end ≤ start + MAX_SPAN_LEN` over valid positions.
pub fn decode_span(start: &[f64], end: &[f64], valid: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for s in (0..start.len()).filter(|&s| valid[s]) {
        let hi = (s + MAX_SPAN_LEN).min(end.len() - 1);
        for e in (s..=hi).filter(|&e| valid[e]) {
            let score = start[s] + end[e];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}
