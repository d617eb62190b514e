use super::Linear;
use crate::params::{Graph, ParamBuilder};
use crate::tensor::Var;
use crate::{Error, Result};

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub num_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || !hidden.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "num_heads {num_heads} does not divide hidden size {hidden}"
            )));
        }
        Ok(Self {
            query: Linear::new(&mut b.sub("query"), hidden, hidden)?,
            key: Linear::new(&mut b.sub("key"), hidden, hidden)?,
            value: Linear::new(&mut b.sub("value"), hidden, hidden)?,
            output: Linear::new(&mut b.sub("output"), hidden, hidden)?,
            num_heads,
        })
    }

    /// `x` is `[B, S, H]`; `key_valid` has `B·S` flags and masked keys get
    /// exactly zero attention weight.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, key_valid: &[bool]) -> Result<Var> {
        let hidden = self.query.input;
        let d = hidden / self.num_heads;
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let rank = g.tape.shape(x).len();
        let axis = rank - 1;
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (lo, hi) = (h * d, (h + 1) * d);
            let qh = g.tape.slice(q, axis, lo, hi)?;
            let kh = g.tape.slice(k, axis, lo, hi)?;
            let vh = g.tape.slice(v, axis, lo, hi)?;
            let kt = g.tape.transpose(kh)?;
            let scores = g.tape.matmul(qh, kt)?;
            let scores = g.tape.scale(scores, scale)?;
            let weights = g.tape.masked_softmax(scores, key_valid)?;
            let weights = g.dropout(weights)?;
            heads.push(g.tape.matmul(weights, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.tape.concat(&heads, axis)?
        };
        self.output.forward(g, joined)
    }
}
