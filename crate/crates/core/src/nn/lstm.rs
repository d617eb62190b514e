use super::Linear;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::tensor::Var;
use crate::{Error, Result};

/// Parameters of one LSTM direction. Gate blocks are packed along the last
/// axis in the order input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    /// `[H_in, 4·H_lstm]`
    pub w_ih: ParamId,
    /// `[H_lstm, 4·H_lstm]`
    pub w_hh: ParamId,
    /// `[4·H_lstm]`
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmDirection {
    pub fn new(b: &mut ParamBuilder<'_>, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: b.normal("w_ih", &[input, 4 * hidden])?,
            w_hh: b.normal("w_hh", &[hidden, 4 * hidden])?,
            bias: b.zeros("bias", &[4 * hidden])?,
            input,
            hidden,
        })
    }

    pub fn num_params(&self) -> usize {
        4 * (self.input * self.hidden + self.hidden * self.hidden + self.hidden)
    }

    /// One cell step built from elementwise primitives. `x_t` is `[1, H_in]`,
    /// `h_prev` and `c_prev` are `[1, H_lstm]`; returns `(h_t, c_t)`.
    pub fn step(&self, g: &mut Graph<'_>, x_t: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        let (w_ih, w_hh, bias) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        let zx = g.tape.matmul(x_t, w_ih)?;
        let zh = g.tape.matmul(h_prev, w_hh)?;
        let z = g.tape.add(zx, zh)?;
        let z = g.tape.add(z, bias)?;
        let i = g.tape.slice(z, 1, 0, h)?;
        let f = g.tape.slice(z, 1, h, 2 * h)?;
        let c_hat = g.tape.slice(z, 1, 2 * h, 3 * h)?;
        let o = g.tape.slice(z, 1, 3 * h, 4 * h)?;
        let i = g.tape.sigmoid(i)?;
        let f = g.tape.sigmoid(f)?;
        let c_hat = g.tape.tanh(c_hat)?;
        let o = g.tape.sigmoid(o)?;
        let keep = g.tape.mul(f, c_prev)?;
        let write = g.tape.mul(i, c_hat)?;
        let c_t = g.tape.add(keep, write)?;
        let squashed = g.tape.tanh(c_t)?;
        let h_t = g.tape.mul(o, squashed)?;
        Ok((h_t, c_t))
    }

    /// Full scan over `x [B, S, H_in]` from zero state; padded steps are
    /// skipped and produce zero output.
    pub fn scan(&self, g: &mut Graph<'_>, x: Var, valid: &[bool], reverse: bool) -> Result<Var> {
        let (w_ih, w_hh, bias) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        Ok(g.tape.lstm_scan(x, w_ih, w_hh, bias, valid, reverse)?)
    }
}

/// Bidirectional LSTM with an optional `2·H_lstm → H_in` projection.
#[derive(Debug, Clone)]
pub struct Blstm {
    pub forward_dir: LstmDirection,
    pub backward_dir: LstmDirection,
    pub projection: Option<Linear>,
}

impl Blstm {
    /// Without a projection the concatenated output must already be `H_in`
    /// wide, i.e. `hidden == input / 2`.
    pub fn new(b: &mut ParamBuilder<'_>, input: usize, hidden: usize, project: bool) -> Result<Self> {
        if !project && 2 * hidden != input {
            return Err(Error::Config(format!(
                "BLSTM without projection needs 2·{hidden} == {input}"
            )));
        }
        Ok(Self {
            forward_dir: LstmDirection::new(&mut b.sub("fwd"), input, hidden)?,
            backward_dir: LstmDirection::new(&mut b.sub("bwd"), input, hidden)?,
            projection: if project {
                Some(Linear::new(&mut b.sub("proj"), 2 * hidden, input)?)
            } else {
                None
            },
        })
    }

    /// Per-position `[h_fwd; h_bwd]`, width `2·H_lstm`.
    pub fn forward_raw(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let fwd = self.forward_dir.scan(g, x, valid, false)?;
        let bwd = self.backward_dir.scan(g, x, valid, true)?;
        let axis = g.tape.shape(x).len() - 1;
        Ok(g.tape.concat(&[fwd, bwd], axis)?)
    }

    /// Output of width `H_in`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let raw = self.forward_raw(g, x, valid)?;
        match &self.projection {
            Some(p) => p.forward(g, raw),
            None => Ok(raw),
        }
    }

    pub fn num_params(&self) -> usize {
        self.forward_dir.num_params()
            + self.backward_dir.num_params()
            + self.projection.as_ref().map_or(0, Linear::num_params)
    }
}
