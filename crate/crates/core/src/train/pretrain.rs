use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Checkpoint, MetricsRecord};
use crate::config::ModelConfig;
use crate::data::{
    format_pair, make_batch, sample_sentence_pair, whole_word_mask, Batch, MaskConfig, PretrainExample,
    TokenizedCorpus,
};
use crate::model::PretrainModel;
use crate::params::{Graph, Mode, Rng};
use crate::tensor::{Tape, TensorError};
use crate::{Error, Result};

/// Stream of the run generator; parameter init uses per-name streams.
const RUN_STREAM: u64 = 1;
const MAX_SAMPLE_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainHyper {
    pub batch_size: usize,
    pub max_len: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    /// Draw the 80/10/10 treatment per piece instead of per word.
    pub per_piece: bool,
    /// Record wall-clock step times (otherwise the `ms` field is 0).
    pub timing: bool,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_len: 256,
            steps: 1_000,
            lr: 1e-4,
            seed: 0,
            per_piece: false,
            timing: true,
        }
    }
}

/// The generator every run-time random draw (pairs, masks, dropout) takes
/// from.
pub fn run_rng(seed: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(RUN_STREAM);
    rng
}

/// Samples `n` masked sentence-pair examples.
pub fn sample_examples(
    corpus: &TokenizedCorpus,
    n: usize,
    max_len: usize,
    mask: &MaskConfig,
    rng: &mut Rng,
) -> Result<Vec<PretrainExample>> {
    let docs = &corpus.documents;
    let mut out = Vec::with_capacity(n);
    let mut failures = 0;
    while out.len() < n {
        let p = sample_sentence_pair(docs, rng)?;
        let a = &docs[p.a.0][p.a.1];
        let b = &docs[p.b.0][p.b.1];
        let example = if a.is_empty() || b.is_empty() {
            None
        } else {
            let pair = format_pair(a, b, p.nsp_label, max_len)?;
            whole_word_mask(&pair, mask, rng)
        };
        match example {
            Some(e) => {
                out.push(e);
                failures = 0;
            }
            None => {
                failures += 1;
                if failures >= MAX_SAMPLE_ATTEMPTS {
                    return Err(Error::Data("corpus yields no maskable sentence pairs".into()));
                }
            }
        }
    }
    Ok(out)
}

fn non_finite_as_abort(e: Error, step: u64, batch: u64) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { step, batch },
        other => other,
    }
}

pub struct Pretrainer {
    pub model: PretrainModel,
    pub adam: Adam,
    pub rng: Rng,
    /// Optimizer steps completed.
    pub step: u64,
    pub hyper: PretrainHyper,
    corpus: TokenizedCorpus,
    mask: MaskConfig,
}

impl Pretrainer {
    pub fn new(config: &ModelConfig, corpus: TokenizedCorpus, hyper: PretrainHyper) -> Result<Self> {
        let model = PretrainModel::new(config, hyper.seed)?;
        let adam = Adam::new(AdamConfig::new(hyper.lr, hyper.steps), &model.store);
        Self::assemble(model, adam, run_rng(hyper.seed), 0, corpus, hyper)
    }

    /// Continues from a pretraining checkpoint. `hyper` supplies the data
    /// settings; the optimizer and generator come from the checkpoint.
    pub fn resume(ckpt: Checkpoint, corpus: TokenizedCorpus, hyper: PretrainHyper) -> Result<Self> {
        if ckpt.task.is_some() {
            return Err(Error::Checkpoint(
                "cannot resume pretraining from a task checkpoint".into(),
            ));
        }
        let model = PretrainModel::with_store(&ckpt.config, ckpt.store)?;
        Self::assemble(model, ckpt.adam, ckpt.rng, ckpt.step, corpus, hyper)
    }

    fn assemble(
        model: PretrainModel,
        adam: Adam,
        rng: Rng,
        step: u64,
        corpus: TokenizedCorpus,
        hyper: PretrainHyper,
    ) -> Result<Self> {
        if hyper.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if hyper.max_len > model.config.max_positions {
            return Err(Error::Config(format!(
                "max_len {} exceeds max_positions {}",
                hyper.max_len, model.config.max_positions
            )));
        }
        let mask = MaskConfig {
            per_piece: hyper.per_piece,
            ..MaskConfig::new(model.config.vocab_size)
        };
        if let Some(&bad) = corpus
            .documents
            .iter()
            .flatten()
            .flatten()
            .find(|p| p.id >= model.config.vocab_size)
        {
            return Err(Error::Vocab {
                id: bad.id,
                size: model.config.vocab_size,
            });
        }
        Ok(Self {
            model,
            adam,
            rng,
            step,
            hyper,
            corpus,
            mask,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            task: None,
            step: self.step,
            rng: self.rng.clone(),
            store: self.model.store.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let examples = sample_examples(
            &self.corpus,
            self.hyper.batch_size,
            self.hyper.max_len,
            &self.mask,
            &mut self.rng,
        )?;
        make_batch(&examples, self.hyper.max_len)
    }

    /// Draws a batch, runs forward and backward, and applies one update.
    pub fn train_step(&mut self) -> Result<MetricsRecord> {
        let started = Instant::now();
        let (step, batch_id) = (self.step + 1, self.step);
        let batch = self.next_batch()?;
        let mut tape = Tape::new();
        let mode = Mode::Train {
            dropout: self.model.config.dropout,
            rng: &mut self.rng,
        };
        let mut g = Graph::bind(&mut tape, &self.model.store, mode);
        let run = |g: &mut Graph<'_>| -> Result<_> {
            let l = self.model.losses(g, &batch)?;
            g.tape.backward(l.total)?;
            Ok(l)
        };
        let losses = run(&mut g).map_err(|e| non_finite_as_abort(e, step, batch_id))?;
        let grads = g.take_grads();
        let value = |v| tape.value(v).item();
        let (total, mlm, nsp) = (value(losses.total), value(losses.mlm), value(losses.nsp));
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch: batch_id,
            });
        }
        let lr = self
            .adam
            .step(&mut self.model.store, &grads)
            .map_err(|e| non_finite_as_abort(e, step, batch_id))?;
        if self.model.store.iter().any(|(_, _, t)| !t.all_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                batch: batch_id,
            });
        }
        self.step = step;
        let ms = if self.hyper.timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(MetricsRecord {
            step,
            total,
            mlm,
            nsp,
            lr,
            ms,
        })
    }
}
