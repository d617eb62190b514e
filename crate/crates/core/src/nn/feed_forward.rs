use super::Linear;
use crate::params::{Graph, ParamBuilder};
use crate::tensor::Var;
use crate::Result;

/// Position-wise `W2·gelu(W1·x + b1) + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder<'_>, hidden: usize, width: usize) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(&mut b.sub("inner"), hidden, width)?,
            outer: Linear::new(&mut b.sub("outer"), width, hidden)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.outer.forward(g, h)
    }
}
