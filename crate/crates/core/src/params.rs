//! Named parameter storage, initialization, and binding parameters onto a tape.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors. Insertion order is the
/// canonical order for optimizers and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total scalar count. Each stored tensor is counted once, so tied
    /// weights that share an entry are not double counted.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Sets every tensor whose name starts with `prefix` to zero. Returns how
    /// many tensors were touched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                n += 1;
            }
        }
        n
    }

    /// Copies every tensor of `src` whose name also exists here with the
    /// same shape. Returns the number of tensors copied.
    pub fn copy_matching(&mut self, src: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (_, name, t) in src.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            let Some(id) = self.id(name) else { continue };
            if self.get(id).shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, source has {:?}",
                    self.get(id).shape(),
                    t.shape()
                )));
            }
            *self.get_mut(id) = t.clone();
            n += 1;
        }
        Ok(n)
    }
}

/// 64-bit FNV-1a, used to give each parameter name its own init stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Truncated-normal initialization keyed by parameter name.
///
/// Every parameter draws from a generator stream derived from
/// `(seed, name)`, so two architectures that share a parameter name start
/// from identical values regardless of construction order.
#[derive(Debug, Clone, Copy)]
pub struct Initializer {
    pub seed: u64,
    pub std: f64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { seed, std: 0.02 }
    }

    pub fn normal(&self, name: &str, shape: &[usize]) -> Tensor {
        let mut rng = Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name));
        let dist = Normal::new(0.0, self.std).expect("positive std");
        let bound = 2.0 * self.std;
        Tensor::from_fn(shape, |_| loop {
            let v: f64 = dist.sample(&mut rng);
            if v.abs() <= bound {
                break v;
            }
        })
    }
}

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    init: Initializer,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, init: Initializer) -> Self {
        Self {
            store,
            init,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.full(name);
        ParamBuilder {
            store: self.store,
            init: self.init,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let full = self.full(name);
        let t = self.init.normal(&full, shape);
        self.store.insert(full, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let full = self.full(name);
        self.store.insert(full, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let full = self.full(name);
        self.store.insert(full, Tensor::ones(shape))
    }
}

/// Train mode draws dropout masks from the run's generator; eval mode
/// disables dropout.
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut Rng },
}

/// A parameter store bound onto a tape for one forward/backward pass.
pub struct Graph<'t> {
    pub tape: &'t mut Tape,
    vars: Vec<Var>,
    mode: Mode<'t>,
}

impl<'t> Graph<'t> {
    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(tape: &'t mut Tape, store: &ParamStore, mode: Mode<'t>) -> Self {
        let vars = store.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Self { tape, vars, mode }
    }

    /// Uses already-recorded vars as the parameters, indexed by [`ParamId`].
    pub fn with_vars(tape: &'t mut Tape, vars: Vec<Var>, mode: Mode<'t>) -> Self {
        Self { tape, vars, mode }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train { .. })
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        match &mut self.mode {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => Ok(self.tape.dropout(x, *dropout, *rng)?),
        }
    }

    /// Gradients per parameter after `tape.backward`, in store order.
    pub fn take_grads(&mut self) -> Vec<Option<Vec<f64>>> {
        self.vars.iter().map(|&v| self.tape.take_grad(v)).collect()
    }
}
