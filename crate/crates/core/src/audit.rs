//! Closed-form parameter counts for a pretraining model.
//!
//! With `LN = 2H` (gain and bias) the per-component formulas are:
//!
//! ```text
//! embeddings   V·H + P·H + 2·H + LN
//! attention    4·(H² + H)                       per layer
//! layer norms  2·LN (1·LN for pure BLSTM)       per layer
//! FFN          H·F + F + F·H + H                per layer
//! BLSTM        2·4·(H·Hb + Hb² + Hb)            per layer
//! projection   2·Hb·H + H  (full-width only)    per layer
//! MLM head     H² + H + LN + V   (output matrix tied to the token table)
//! NSP head     H² + H + 2·H + 2  (pooler + classifier)
//! ```

use std::fmt;

use serde::Serialize;

use crate::config::{BlstmMode, ModelConfig};
use crate::params::ParamStore;
use crate::Result;

/// Counts for one encoder layer, by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCounts {
    pub attention: usize,
    pub layer_norm: usize,
    pub ffn: usize,
    pub blstm: usize,
    pub projection: usize,
}

impl LayerCounts {
    pub fn total(&self) -> usize {
        self.attention + self.layer_norm + self.ffn + self.blstm + self.projection
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub config: ModelConfig,
    pub embeddings: usize,
    pub per_layer: LayerCounts,
    pub num_layers: usize,
    pub mlm_head: usize,
    pub nsp_head: usize,
    pub total_without_heads: usize,
    pub total: usize,
}

impl ParamReport {
    pub fn encoder(&self) -> usize {
        self.embeddings + self.num_layers * self.per_layer.total()
    }

    pub fn heads(&self) -> usize {
        self.mlm_head + self.nsp_head
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn millions(n: usize) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.per_layer;
        let n = self.num_layers;
        let rows = [
            ("embeddings", self.embeddings),
            ("attention", n * l.attention),
            ("layer norms", n * l.layer_norm),
            ("feed-forward", n * l.ffn),
            ("blstm", n * l.blstm),
            ("projection", n * l.projection),
            ("mlm head", self.mlm_head),
            ("nsp head", self.nsp_head),
        ];
        writeln!(f, "{:<22}{:>14}{:>10}", "component", "parameters", "")?;
        for (name, count) in rows {
            writeln!(f, "{name:<22}{count:>14}{:>10}", millions(count))?;
        }
        writeln!(
            f,
            "{:<22}{:>14}{:>10}",
            "total without heads",
            self.total_without_heads,
            millions(self.total_without_heads)
        )?;
        write!(f, "{:<22}{:>14}{:>10}", "total", self.total, millions(self.total))
    }
}

pub fn count_params_analytic(c: &ModelConfig) -> Result<ParamReport> {
    c.validate()?;
    let h = c.hidden;
    let ln = 2 * h;
    let hb = c.blstm_hidden();
    let has_blstm = c.blstm_mode != BlstmMode::None;
    let has_ffn = matches!(c.blstm_mode, BlstmMode::None | BlstmMode::ParallelSum);
    let per_layer = LayerCounts {
        attention: if c.uses_attention() { 4 * (h * h + h) } else { 0 },
        layer_norm: if c.uses_attention() { 2 * ln } else { ln },
        ffn: if has_ffn {
            2 * h * c.ff_width + c.ff_width + h
        } else {
            0
        },
        blstm: if has_blstm {
            2 * 4 * (h * hb + hb * hb + hb)
        } else {
            0
        },
        projection: if has_blstm && c.blstm_projected() {
            2 * hb * h + h
        } else {
            0
        },
    };
    let embeddings = c.vocab_size * h + c.max_positions * h + 2 * h + ln;
    let mlm_head = h * h + h + ln + c.vocab_size;
    let nsp_head = h * h + h + 2 * h + 2;
    let total_without_heads = embeddings + c.num_layers * per_layer.total();
    Ok(ParamReport {
        config: c.clone(),
        embeddings,
        per_layer,
        num_layers: c.num_layers,
        mlm_head,
        nsp_head,
        total_without_heads,
        total: total_without_heads + mlm_head + nsp_head,
    })
}

/// Scalar count of an instantiated store; tied tensors are stored once.
pub fn count_params_model(store: &ParamStore) -> usize {
    store.num_elements()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlstmWidth, Preset};

    #[test]
    fn total_is_sum_of_components() {
        let c = ModelConfig::preset(Preset::Base).with_blstm(BlstmMode::ParallelSum, BlstmWidth::Half);
        let r = count_params_analytic(&c).unwrap();
        assert_eq!(r.total, r.encoder() + r.heads());
        assert_eq!(r.per_layer.projection, 0);
        let text = r.to_string();
        assert!(text.contains("total without heads"));
        assert!(r.to_json().contains("\"total\":"));
    }
}
