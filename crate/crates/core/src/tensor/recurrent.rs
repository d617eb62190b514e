// Fused single-direction LSTM scan with hand-written backpropagation through time.
//
// Gate layout inside the 4H pre-activation block: input, forget, candidate, output.
// Invalid (padded) steps are skipped: the carried state passes through unchanged
// and the output row is zero.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, sigmoid};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScanDims {
    pub batch: usize,
    pub seq: usize,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ScanCache {
    /// Post-activation gate values per step, [B, S, 4H].
    gates: Vec<f64>,
    /// Cell state after each step, [B, S, H].
    cell: Vec<f64>,
    /// Cell and hidden state entering each step, [B, S, H].
    cell_prev: Vec<f64>,
    hidden_prev: Vec<f64>,
}

fn order(seq: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..seq).map(move |t| if reverse { seq - 1 - t } else { t })
}

pub(crate) fn forward(
    dims: ScanDims,
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    valid: &[bool],
    reverse: bool,
) -> (Vec<f64>, ScanCache) {
    let ScanDims {
        batch,
        seq,
        input,
        hidden: h,
    } = dims;
    let g4 = 4 * h;
    let mut out = vec![0.0; batch * seq * h];
    let mut cache = ScanCache {
        gates: vec![0.0; batch * seq * g4],
        cell: vec![0.0; batch * seq * h],
        cell_prev: vec![0.0; batch * seq * h],
        hidden_prev: vec![0.0; batch * seq * h],
    };
    let mut z = vec![0.0; g4];
    for b in 0..batch {
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for t in order(seq, reverse) {
            let row = b * seq + t;
            if !valid[row] {
                continue;
            }
            z.copy_from_slice(bias);
            gemm_nn(1, input, g4, &x[row * input..(row + 1) * input], w_ih, &mut z);
            gemm_nn(1, h, g4, &hs, w_hh, &mut z);
            cache.cell_prev[row * h..(row + 1) * h].copy_from_slice(&cs);
            cache.hidden_prev[row * h..(row + 1) * h].copy_from_slice(&hs);
            let gates = &mut cache.gates[row * g4..(row + 1) * g4];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                gates[j] = i;
                gates[h + j] = f;
                gates[2 * h + j] = g;
                gates[3 * h + j] = o;
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
            cache.cell[row * h..(row + 1) * h].copy_from_slice(&cs);
            out[row * h..(row + 1) * h].copy_from_slice(&hs);
        }
    }
    (out, cache)
}

pub(crate) struct ScanGrads<'a> {
    pub x: Option<&'a mut [f64]>,
    pub w_ih: Option<&'a mut [f64]>,
    pub w_hh: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    dims: ScanDims,
    grad_out: &[f64],
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    valid: &[bool],
    reverse: bool,
    cache: &ScanCache,
    mut grads: ScanGrads<'_>,
) {
    let ScanDims {
        batch,
        seq,
        input,
        hidden: h,
    } = dims;
    let g4 = 4 * h;
    let mut dz = vec![0.0; g4];
    for b in 0..batch {
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        // Walk the processing order backwards.
        let steps: Vec<usize> = order(seq, reverse).collect();
        for &t in steps.iter().rev() {
            let row = b * seq + t;
            if !valid[row] {
                continue;
            }
            let gates = &cache.gates[row * g4..(row + 1) * g4];
            let cell = &cache.cell[row * h..(row + 1) * h];
            let cell_prev = &cache.cell_prev[row * h..(row + 1) * h];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = cell[j].tanh();
                let dh = grad_out[row * h + j] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * cell_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            if let Some(gx) = grads.x.as_deref_mut() {
                gemm_nt(1, g4, input, &dz, w_ih, &mut gx[row * input..(row + 1) * input]);
            }
            if let Some(gw) = grads.w_ih.as_deref_mut() {
                gemm_tn(1, input, g4, &x[row * input..(row + 1) * input], &dz, gw);
            }
            if let Some(gw) = grads.w_hh.as_deref_mut() {
                gemm_tn(1, h, g4, &cache.hidden_prev[row * h..(row + 1) * h], &dz, gw);
            }
            if let Some(gb) = grads.bias.as_deref_mut() {
                gb.iter_mut().zip(&dz).for_each(|(a, d)| *a += d);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemm_nt(1, g4, h, &dz, w_hh, &mut dh_next);
        }
    }
}
