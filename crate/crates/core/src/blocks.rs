//! Encoder layer types and the N-layer encoder stack.
//!
//! Every sublayer is wrapped as `LayerNorm(x + Sublayer(x))`:
//!
//! ```text
//! TRANS          y = LN(x + Attn(x))          out = LN(y + FFN(y))
//! TRANS-BLSTM-1  y = LN(x + Attn(x))          out = LN(y + BLSTM(y))
//! TRANS-BLSTM-2  y = LN(x + Attn(x))          out = LN(y + FFN(y) + BLSTM(x))
//! pure BLSTM                                  out = LN(x + BLSTM(x))
//! ```
//!
//! `BLSTM(·)` includes the `2H_b → H` projection when the BLSTM is full
//! width. With [`SumPoint::Attention`] the TRANS-BLSTM-2 branch joins the
//! first sum instead: `y = LN(x + Attn(x) + BLSTM(x))`.

use crate::config::{BlstmMode, ModelConfig, SumPoint};
use crate::nn::{Blstm, Embeddings, FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{Graph, ParamBuilder};
use crate::tensor::Var;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub out_norm: LayerNorm,
}

impl TransformerBlock {
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(&mut b.sub("attention"), c.hidden, c.num_heads)?,
            attn_norm: LayerNorm::new(&mut b.sub("attn_norm"), c.hidden, c.layer_norm_eps)?,
            ffn: FeedForward::new(&mut b.sub("ffn"), c.hidden, c.ff_width)?,
            out_norm: LayerNorm::new(&mut b.sub("out_norm"), c.hidden, c.layer_norm_eps)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let y = attention_sublayer(g, &self.attention, &self.attn_norm, x, valid, None)?;
        let f = self.ffn.forward(g, y)?;
        let f = g.dropout(f)?;
        let sum = g.tape.add(y, f)?;
        self.out_norm.forward(g, sum)
    }
}

/// `LN(x + Attn(x) [+ extra])`
fn attention_sublayer(
    g: &mut Graph<'_>,
    attention: &MultiHeadAttention,
    norm: &LayerNorm,
    x: Var,
    valid: &[bool],
    extra: Option<Var>,
) -> Result<Var> {
    let a = attention.forward(g, x, valid)?;
    let a = g.dropout(a)?;
    let mut sum = g.tape.add(x, a)?;
    if let Some(e) = extra {
        sum = g.tape.add(sum, e)?;
    }
    norm.forward(g, sum)
}

fn blstm_branch(g: &mut Graph<'_>, blstm: &Blstm, x: Var, valid: &[bool]) -> Result<Var> {
    let out = blstm.forward(g, x, valid)?;
    g.dropout(out)
}

/// TRANS-BLSTM-1: the BLSTM replaces the feed-forward sublayer.
#[derive(Debug, Clone)]
pub struct TransBlstm1Block {
    pub attention: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub blstm: Blstm,
    pub out_norm: LayerNorm,
}

impl TransBlstm1Block {
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(&mut b.sub("attention"), c.hidden, c.num_heads)?,
            attn_norm: LayerNorm::new(&mut b.sub("attn_norm"), c.hidden, c.layer_norm_eps)?,
            blstm: Blstm::new(
                &mut b.sub("blstm"),
                c.hidden,
                c.blstm_hidden(),
                c.blstm_projected(),
            )?,
            out_norm: LayerNorm::new(&mut b.sub("out_norm"), c.hidden, c.layer_norm_eps)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let y = attention_sublayer(g, &self.attention, &self.attn_norm, x, valid, None)?;
        let r = blstm_branch(g, &self.blstm, y, valid)?;
        let sum = g.tape.add(y, r)?;
        self.out_norm.forward(g, sum)
    }
}

/// TRANS-BLSTM-2: a parallel BLSTM over the block input joins a residual sum.
#[derive(Debug, Clone)]
pub struct TransBlstm2Block {
    pub attention: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub blstm: Blstm,
    pub out_norm: LayerNorm,
    pub sum_point: SumPoint,
}

impl TransBlstm2Block {
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(&mut b.sub("attention"), c.hidden, c.num_heads)?,
            attn_norm: LayerNorm::new(&mut b.sub("attn_norm"), c.hidden, c.layer_norm_eps)?,
            ffn: FeedForward::new(&mut b.sub("ffn"), c.hidden, c.ff_width)?,
            blstm: Blstm::new(
                &mut b.sub("blstm"),
                c.hidden,
                c.blstm_hidden(),
                c.blstm_projected(),
            )?,
            out_norm: LayerNorm::new(&mut b.sub("out_norm"), c.hidden, c.layer_norm_eps)?,
            sum_point: c.sum_point,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let r = blstm_branch(g, &self.blstm, x, valid)?;
        let early = (self.sum_point == SumPoint::Attention).then_some(r);
        let y = attention_sublayer(g, &self.attention, &self.attn_norm, x, valid, early)?;
        let f = self.ffn.forward(g, y)?;
        let f = g.dropout(f)?;
        let mut sum = g.tape.add(y, f)?;
        if self.sum_point == SumPoint::Output {
            sum = g.tape.add(sum, r)?;
        }
        self.out_norm.forward(g, sum)
    }
}

/// One layer of the attention-free baseline: `LN(x + BLSTM(x))`.
#[derive(Debug, Clone)]
pub struct PureBlstmLayer {
    pub blstm: Blstm,
    pub norm: LayerNorm,
}

impl PureBlstmLayer {
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        Ok(Self {
            blstm: Blstm::new(
                &mut b.sub("blstm"),
                c.hidden,
                c.blstm_hidden(),
                c.blstm_projected(),
            )?,
            norm: LayerNorm::new(&mut b.sub("out_norm"), c.hidden, c.layer_norm_eps)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let r = blstm_branch(g, &self.blstm, x, valid)?;
        let sum = g.tape.add(x, r)?;
        self.norm.forward(g, sum)
    }
}

#[derive(Debug, Clone)]
pub enum EncoderLayer {
    Transformer(TransformerBlock),
    TransBlstm1(TransBlstm1Block),
    TransBlstm2(TransBlstm2Block),
    PureBlstm(PureBlstmLayer),
}

impl EncoderLayer {
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        Ok(match c.blstm_mode {
            BlstmMode::None => Self::Transformer(TransformerBlock::new(b, c)?),
            BlstmMode::ReplaceFfn => Self::TransBlstm1(TransBlstm1Block::new(b, c)?),
            BlstmMode::ParallelSum => Self::TransBlstm2(TransBlstm2Block::new(b, c)?),
            BlstmMode::PureBlstm => Self::PureBlstm(PureBlstmLayer::new(b, c)?),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        match self {
            Self::Transformer(l) => l.forward(g, x, valid),
            Self::TransBlstm1(l) => l.forward(g, x, valid),
            Self::TransBlstm2(l) => l.forward(g, x, valid),
            Self::PureBlstm(l) => l.forward(g, x, valid),
        }
    }
}

/// Embeddings followed by `num_layers` layers of the configured type.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embeddings: Embeddings,
    pub layers: Vec<EncoderLayer>,
    pub hidden: usize,
}

/// Row-major token/segment ids with a padding mask, shape `[B, S]`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub token_ids: &'a [usize],
    pub segment_ids: &'a [usize],
    pub valid: &'a [bool],
    pub batch: usize,
    pub seq: usize,
}

impl Encoder {
    /// Registers parameters under `b` (normally the `encoder` prefix).
    pub fn new(b: &mut ParamBuilder<'_>, c: &ModelConfig) -> Result<Self> {
        c.validate()?;
        let embeddings = Embeddings::new(
            &mut b.sub("embeddings"),
            c.vocab_size,
            c.max_positions,
            c.hidden,
            c.layer_norm_eps,
        )?;
        let layers = (0..c.num_layers)
            .map(|i| EncoderLayer::new(&mut b.sub(&format!("layer{i}")), c))
            .collect::<Result<_>>()?;
        Ok(Self {
            embeddings,
            layers,
            hidden: c.hidden,
        })
    }

    /// Final hidden states `[B, S, H]`.
    pub fn forward(&self, g: &mut Graph<'_>, input: EncoderInput<'_>) -> Result<Var> {
        if input.valid.len() != input.batch * input.seq {
            return Err(Error::Contract(format!(
                "padding mask has {} entries for a {}x{} batch",
                input.valid.len(),
                input.batch,
                input.seq
            )));
        }
        let mut h = self
            .embeddings
            .forward(g, input.token_ids, input.segment_ids, input.batch, input.seq)?;
        for layer in &self.layers {
            h = layer.forward(g, h, input.valid)?;
        }
        Ok(h)
    }
}
