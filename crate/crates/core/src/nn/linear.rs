use crate::params::{Graph, ParamBuilder, ParamId};
use crate::tensor::Var;
use crate::Result;

/// `x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder<'_>, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: b.normal("weight", &[input, output])?,
            bias: b.zeros("bias", &[output])?,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let xw = g.tape.matmul(x, w)?;
        Ok(g.tape.add(xw, b)?)
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder<'_>, width: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: b.ones("gamma", &[width])?,
            beta: b.zeros("beta", &[width])?,
            eps,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.tape.layer_norm(x, gamma, beta, self.eps)?)
    }
}
