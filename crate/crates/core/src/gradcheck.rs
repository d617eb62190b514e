//! Central finite-difference gradient verification.
//!
//! Only forward evaluations are used to build the numerical estimate, so the
//! check stays independent of every backward rule it exercises.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::EncoderLayer;
use crate::config::{BlstmMode, BlstmWidth, ModelConfig};
use crate::heads::BlstmDecoder;
use crate::params::{Graph, Initializer, Mode, ParamBuilder, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};
use crate::Error;

/// Default finite-difference step for 64-bit checks.
pub const STEP: Scalar = 1e-5;

/// Denominator floor for relative error. Central differences at `STEP` carry
/// roundoff near `1e-16 · |loss| / STEP ≈ 1e-10` for the losses used here,
/// so gradients smaller than the floor are effectively compared in absolute
/// terms (at `tol · REL_FLOOR`) rather than against pure noise.
pub const REL_FLOOR: Scalar = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: Scalar,
    pub max_abs_error: Scalar,
    /// (input index, element index) of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: Scalar) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: Scalar, numeric: Scalar) -> Scalar {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward-pass gradients of `f` against central differences for
/// every element of every input. `f` must build a scalar on the given tape
/// from the leaves it receives.
pub fn check_gradients<E, F>(inputs: &[Tensor], step: Scalar, f: F) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<Scalar>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map_or_else(|| vec![0.0; t.len()], <[Scalar]>::to_vec)
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<Scalar, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, (input, grads)) in inputs.iter().zip(&analytic).enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces `out` to a scalar through a fixed pseudo-random weighting, so that
/// symmetric outputs (like a layer norm's, which sum to zero) still produce
/// informative gradients.
pub fn probe_loss(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Random tensor with entries uniform in `[-scale, scale)`.
pub fn random_tensor(shape: &[usize], scale: Scalar, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Composite layers covered by [`check_block`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Trans,
    TransBlstm1,
    TransBlstm2,
    PureBlstm,
    Decoder,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::Trans,
        BlockKind::TransBlstm1,
        BlockKind::TransBlstm2,
        BlockKind::PureBlstm,
        BlockKind::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Trans => "trans",
            BlockKind::TransBlstm1 => "trans-blstm-1",
            BlockKind::TransBlstm2 => "trans-blstm-2",
            BlockKind::PureBlstm => "pure-blstm",
            BlockKind::Decoder => "decoder",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown block {s:?}")))
    }
}

/// Shapes used by [`check_block`]: two sequences of four positions (the
/// second with one padded position), width 8, two heads.
pub const CHECK_BATCH: usize = 2;
pub const CHECK_SEQ: usize = 4;
pub const CHECK_HIDDEN: usize = 8;

/// The config [`check_block`] instantiates for `kind`.
pub fn check_config(kind: BlockKind, width: BlstmWidth) -> ModelConfig {
    let mode = match kind {
        BlockKind::Trans | BlockKind::Decoder => BlstmMode::None,
        BlockKind::TransBlstm1 => BlstmMode::ReplaceFfn,
        BlockKind::TransBlstm2 => BlstmMode::ParallelSum,
        BlockKind::PureBlstm => BlstmMode::PureBlstm,
    };
    ModelConfig {
        num_layers: 1,
        hidden: CHECK_HIDDEN,
        num_heads: 2,
        ff_width: 2 * CHECK_HIDDEN,
        ..ModelConfig::toy()
    }
    .with_blstm(mode, width)
}

/// Gradient check of one layer of the given kind with every parameter and
/// the layer input drawn at random, in eval mode.
pub fn check_block(kind: BlockKind, width: BlstmWidth, seed: u64) -> Result<GradCheckReport, Error> {
    enum Layer {
        Encoder(Box<EncoderLayer>),
        Decoder(BlstmDecoder),
    }
    let c = check_config(kind, width);
    let mut store = ParamStore::new();
    let mut b = ParamBuilder::new(&mut store, Initializer::new(seed));
    let layer = match kind {
        BlockKind::Decoder => Layer::Decoder(BlstmDecoder::new(&mut b, c.hidden)?),
        _ => Layer::Encoder(Box::new(EncoderLayer::new(&mut b, &c)?)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![random_tensor(&[CHECK_BATCH, CHECK_SEQ, c.hidden], 1.0, &mut rng)];
    inputs.extend(
        store
            .iter()
            .map(|(_, _, t)| random_tensor(t.shape(), 0.5, &mut rng)),
    );
    let mut valid = vec![true; CHECK_BATCH * CHECK_SEQ];
    valid[CHECK_BATCH * CHECK_SEQ - 1] = false;
    check_gradients(&inputs, STEP, |tape, vars| {
        let mut g = Graph::with_vars(tape, vars[1..].to_vec(), Mode::Eval);
        let out = match &layer {
            Layer::Encoder(l) => l.forward(&mut g, vars[0], &valid)?,
            Layer::Decoder(d) => d.forward(&mut g, vars[0], &valid)?,
        };
        Ok(probe_loss(g.tape, out, seed)?)
    })
}
