use super::LayerNorm;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::tensor::Var;
use crate::{Error, Result};

/// Token + learned position + segment embeddings, layer-normalized.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub segments: ParamId,
    pub norm: LayerNorm,
    pub vocab_size: usize,
    pub max_positions: usize,
}

pub const NUM_SEGMENTS: usize = 2;

impl Embeddings {
    pub fn new(
        b: &mut ParamBuilder<'_>,
        vocab_size: usize,
        max_positions: usize,
        hidden: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            tokens: b.normal("tokens", &[vocab_size, hidden])?,
            positions: b.normal("positions", &[max_positions, hidden])?,
            segments: b.normal("segments", &[NUM_SEGMENTS, hidden])?,
            norm: LayerNorm::new(&mut b.sub("norm"), hidden, eps)?,
            vocab_size,
            max_positions,
        })
    }

    /// Embeds `batch` sequences of length `seq` laid out row-major in
    /// `token_ids` / `segment_ids`. Returns `[B, S, H]`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        token_ids: &[usize],
        segment_ids: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        if token_ids.len() != batch * seq || segment_ids.len() != batch * seq {
            return Err(Error::Contract(format!(
                "expected {} token and segment ids, got {} and {}",
                batch * seq,
                token_ids.len(),
                segment_ids.len()
            )));
        }
        if seq == 0 || seq > self.max_positions {
            return Err(Error::Contract(format!(
                "sequence length {seq} outside [1, {}]",
                self.max_positions
            )));
        }
        if let Some(&id) = token_ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::Vocab {
                id,
                size: self.vocab_size,
            });
        }
        if let Some(&id) = segment_ids.iter().find(|&&id| id >= NUM_SEGMENTS) {
            return Err(Error::Vocab {
                id,
                size: NUM_SEGMENTS,
            });
        }
        let hidden = g.tape.shape(g.param(self.tokens))[1];
        let tok = g.tape.gather(g.param(self.tokens), token_ids)?;
        let seg = g.tape.gather(g.param(self.segments), segment_ids)?;
        let positions: Vec<usize> = (0..seq).collect();
        let pos = g.tape.gather(g.param(self.positions), &positions)?;
        let sum = g.tape.add(tok, seg)?;
        let sum = g.tape.reshape(sum, &[batch, seq, hidden])?;
        let sum = g.tape.add(sum, pos)?;
        let normed = self.norm.forward(g, sum)?;
        g.dropout(normed)
    }
}
