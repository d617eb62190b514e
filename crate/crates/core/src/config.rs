//! Architecture description shared by every model in the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How BLSTM layers are fused into the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlstmMode {
    /// Plain transformer blocks.
    None,
    /// TRANS-BLSTM-1: the BLSTM takes the feed-forward sublayer's place.
    ReplaceFfn,
    /// TRANS-BLSTM-2: a BLSTM reads the block input in parallel and joins a
    /// pre-LayerNorm residual sum.
    ParallelSum,
    /// Stacked BLSTM layers with no attention at all.
    PureBlstm,
}

/// BLSTM hidden width relative to the model width `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlstmWidth {
    /// `H` units per direction; a `2H → H` projection follows.
    Full,
    /// `H/2` units per direction; the concatenation is already `H` wide.
    Half,
}

/// Task decoder placed between the encoder and the final linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    Linear,
    /// Two stacked BLSTM layers before the final linear map.
    Blstm2,
}

/// Which pre-LayerNorm residual sum receives the parallel BLSTM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumPoint {
    /// The block's final sum: `LN(y + FFN(y) + BLSTM(x))`.
    Output,
    /// The attention sum: `LN(x + Attn(x) + BLSTM(x))`.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Small,
    Base,
    Large,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "small" => Ok(Preset::Small),
            "base" => Ok(Preset::Base),
            "large" => Ok(Preset::Large),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected toy, small, base or large)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Small => "small",
            Preset::Base => "base",
            Preset::Large => "large",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ff_width: usize,
    pub blstm_mode: BlstmMode,
    pub blstm_width: BlstmWidth,
    pub sum_point: SumPoint,
    pub decoder_mode: DecoderMode,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let (num_layers, hidden, num_heads, vocab_size, max_positions) = match preset {
            Preset::Toy => (2, 16, 2, 100, 32),
            Preset::Small => (4, 128, 4, 2_000, 128),
            Preset::Base => (12, 768, 12, 30_000, 256),
            Preset::Large => (24, 1024, 16, 30_000, 256),
        };
        Self {
            num_layers,
            hidden,
            num_heads,
            ff_width: 4 * hidden,
            blstm_mode: BlstmMode::None,
            blstm_width: BlstmWidth::Full,
            sum_point: SumPoint::Output,
            decoder_mode: DecoderMode::Linear,
            vocab_size,
            max_positions,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn toy() -> Self {
        Self::preset(Preset::Toy)
    }

    pub fn with_blstm(mut self, mode: BlstmMode, width: BlstmWidth) -> Self {
        self.blstm_mode = mode;
        self.blstm_width = width;
        self
    }

    /// Units per BLSTM direction.
    pub fn blstm_hidden(&self) -> usize {
        match self.blstm_width {
            BlstmWidth::Full => self.hidden,
            BlstmWidth::Half => self.hidden / 2,
        }
    }

    /// Whether each encoder BLSTM carries a `2·H_b → H` projection.
    pub fn blstm_projected(&self) -> bool {
        self.blstm_width == BlstmWidth::Full
    }

    pub fn uses_attention(&self) -> bool {
        self.blstm_mode != BlstmMode::PureBlstm
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 {
            return fail("hidden size must be positive".into());
        }
        if self.uses_attention() && (self.num_heads == 0 || !self.hidden.is_multiple_of(self.num_heads)) {
            return fail(format!(
                "num_heads {} must divide hidden size {}",
                self.num_heads, self.hidden
            ));
        }
        if matches!(self.blstm_mode, BlstmMode::None | BlstmMode::ParallelSum) && self.ff_width == 0 {
            return fail("ff_width must be positive".into());
        }
        if self.blstm_width == BlstmWidth::Half && !self.hidden.is_multiple_of(2) {
            return fail(format!(
                "half-width BLSTM needs an even hidden size, got {}",
                self.hidden
            ));
        }
        if self.vocab_size <= crate::data::NUM_SPECIAL {
            return fail(format!("vocab_size {} leaves no content tokens", self.vocab_size));
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.layer_norm_eps < 0.0 {
            return fail("layer_norm_eps must be non-negative".into());
        }
        Ok(())
    }

    /// Whether two configs describe the same encoder body (everything a
    /// pretrained checkpoint hands to a fine-tuned model).
    pub fn same_body(&self, other: &Self) -> bool {
        let body = |c: &Self| {
            (
                c.num_layers,
                c.hidden,
                c.num_heads,
                c.ff_width,
                c.blstm_mode,
                c.blstm_width,
                c.sum_point,
                c.vocab_size,
                c.max_positions,
            )
        };
        body(self) == body(other)
    }
}
