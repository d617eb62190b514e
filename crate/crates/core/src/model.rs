//! Complete models: the pretraining model (encoder + MLM + NSP) and the
//! fine-tuning model (encoder + optional BLSTM decoder + task head).
//!
//! Parameter names are prefixed `encoder.`, `mlm.`, `nsp.` and `task.`, so a
//! pretrained encoder can be copied into a task model by name.

use serde::{Deserialize, Serialize};

use crate::blocks::{Encoder, EncoderInput};
use crate::config::{DecoderMode, ModelConfig};
use crate::data::{Batch, TaskBatch, TaskLabel};
use crate::heads::{self, BlstmDecoder, ClsHead, MlmHead, SpanHead};
use crate::params::{Graph, Initializer, Mode, ParamBuilder, ParamStore};
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

pub const ENCODER_PREFIX: &str = "encoder.";

/// NSP has two classes: is-next and not-next.
const NSP_CLASSES: usize = 2;

/// Checks that `loaded` has the same tensor names and shapes, in the same
/// order, as the freshly built `built`.
fn adopt(built: &ParamStore, loaded: ParamStore) -> Result<ParamStore> {
    if built.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            loaded.len(),
            built.len()
        )));
    }
    for ((_, bn, bt), (_, ln, lt)) in built.iter().zip(loaded.iter()) {
        if bn != ln || bt.shape() != lt.shape() {
            return Err(Error::Checkpoint(format!(
                "checkpoint tensor {ln} {:?} does not match model tensor {bn} {:?}",
                lt.shape(),
                bt.shape()
            )));
        }
    }
    Ok(loaded)
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainLosses {
    pub total: Var,
    pub mlm: Var,
    pub nsp: Var,
}

#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub mlm: MlmHead,
    pub nsp: ClsHead,
}

impl PretrainModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, Initializer::new(seed));
        let encoder = Encoder::new(&mut b.sub("encoder"), config)?;
        let mlm = MlmHead::new(
            &mut b.sub("mlm"),
            config.hidden,
            config.vocab_size,
            config.layer_norm_eps,
            encoder.embeddings.tokens,
        )?;
        let nsp = ClsHead::new(&mut b.sub("nsp"), config.hidden, NSP_CLASSES)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            mlm,
            nsp,
        })
    }

    /// Rebuilds the model around previously trained parameters.
    pub fn with_store(config: &ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.store = adopt(&model.store, store)?;
        Ok(model)
    }

    pub fn losses(&self, g: &mut Graph<'_>, batch: &Batch) -> Result<PretrainLosses> {
        let hidden = self.encoder.forward(
            g,
            EncoderInput {
                token_ids: &batch.token_ids,
                segment_ids: &batch.segment_ids,
                valid: &batch.valid,
                batch: batch.batch,
                seq: batch.seq,
            },
        )?;
        let mlm = heads::mlm_loss(g, hidden, &batch.mlm_positions, &batch.mlm_labels, &self.mlm)?;
        let nsp = heads::nsp_loss(g, hidden, &batch.nsp_labels, &self.nsp)?;
        let total = g.tape.add(mlm, nsp)?;
        Ok(PretrainLosses { total, mlm, nsp })
    }

    /// `(total, mlm, nsp)` in eval mode, without gradients.
    pub fn eval_losses(&self, batch: &Batch) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let mut g = Graph::bind(&mut tape, &self.store, Mode::Eval);
        let l = self.losses(&mut g, batch)?;
        let v = |x: Var| tape.value(x).item();
        Ok((v(l.total), v(l.mlm), v(l.nsp)))
    }
}

/// Fine-tuning head selection. Serialized into task checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum TaskSpec {
    Classify { num_classes: usize },
    Span,
}

#[derive(Debug, Clone)]
pub enum TaskHead {
    Classify(ClsHead),
    Span(SpanHead),
}

#[derive(Debug, Clone)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub spec: TaskSpec,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Option<BlstmDecoder>,
    pub head: TaskHead,
}

impl TaskModel {
    pub fn new(config: &ModelConfig, spec: TaskSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, Initializer::new(seed));
        let encoder = Encoder::new(&mut b.sub("encoder"), config)?;
        let mut task = b.sub("task");
        let decoder = match config.decoder_mode {
            DecoderMode::Linear => None,
            DecoderMode::Blstm2 => Some(BlstmDecoder::new(&mut task.sub("decoder"), config.hidden)?),
        };
        let head = match spec {
            TaskSpec::Classify { num_classes } => {
                TaskHead::Classify(ClsHead::new(&mut task.sub("head"), config.hidden, num_classes)?)
            }
            TaskSpec::Span => TaskHead::Span(SpanHead::new(&mut task.sub("head"), config.hidden)?),
        };
        Ok(Self {
            config: config.clone(),
            spec,
            store,
            encoder,
            decoder,
            head,
        })
    }

    /// Rebuilds the model around previously trained parameters.
    pub fn with_store(config: &ModelConfig, spec: TaskSpec, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, spec, 0)?;
        model.store = adopt(&model.store, store)?;
        Ok(model)
    }

    /// Copies the encoder of a pretrained store. The pretraining config must
    /// describe the same encoder body.
    pub fn load_encoder(&mut self, config: &ModelConfig, store: &ParamStore) -> Result<usize> {
        if !self.config.same_body(config) {
            return Err(Error::Checkpoint(format!(
                "checkpoint encoder {config:?} does not match task model {:?}",
                self.config
            )));
        }
        self.store.copy_matching(store, ENCODER_PREFIX)
    }

    fn features(&self, g: &mut Graph<'_>, batch: &TaskBatch) -> Result<Var> {
        let hidden = self.encoder.forward(
            g,
            EncoderInput {
                token_ids: &batch.token_ids,
                segment_ids: &batch.segment_ids,
                valid: &batch.valid,
                batch: batch.batch,
                seq: batch.seq,
            },
        )?;
        match &self.decoder {
            Some(d) => d.forward(g, hidden, &batch.valid),
            None => Ok(hidden),
        }
    }

    pub fn loss(&self, g: &mut Graph<'_>, batch: &TaskBatch) -> Result<Var> {
        let h = self.features(g, batch)?;
        match &self.head {
            TaskHead::Classify(head) => {
                let labels = batch
                    .labels
                    .iter()
                    .map(|l| match *l {
                        TaskLabel::Class(c) => Ok(c),
                        TaskLabel::Span { .. } => Err(Error::Contract("span label for a classifier".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                heads::classification_loss(g, h, &labels, head)
            }
            TaskHead::Span(head) => {
                let (mut starts, mut ends) = (Vec::new(), Vec::new());
                for l in &batch.labels {
                    let TaskLabel::Span { start, end } = *l else {
                        return Err(Error::Contract("class label for a span head".into()));
                    };
                    starts.push(start);
                    ends.push(end);
                }
                heads::span_loss(g, h, &starts, &ends, &batch.valid, head)
            }
        }
    }

    /// Eval-mode predictions, one per sequence.
    pub fn predict(&self, batch: &TaskBatch) -> Result<Vec<TaskLabel>> {
        let mut tape = Tape::new();
        let mut g = Graph::bind(&mut tape, &self.store, Mode::Eval);
        let h = self.features(&mut g, batch)?;
        match &self.head {
            TaskHead::Classify(head) => {
                let logits = head.logits(&mut g, h)?;
                let v = tape.value(logits);
                let c = head.num_classes;
                Ok(v.data()
                    .chunks(c)
                    .map(|row| {
                        let best = (0..c).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                        TaskLabel::Class(best)
                    })
                    .collect())
            }
            TaskHead::Span(head) => {
                let (start, end) = head.logits(&mut g, h)?;
                let (s, e) = (tape.value(start).data(), tape.value(end).data());
                let n = batch.seq;
                (0..batch.batch)
                    .map(|b| {
                        let r = b * n..(b + 1) * n;
                        let (start, end) = heads::decode_span(&s[r.clone()], &e[r.clone()], &batch.valid[r])
                            .ok_or_else(|| Error::Contract(format!("sequence {b} has no valid position")))?;
                        Ok(TaskLabel::Span { start, end })
                    })
                    .collect()
            }
        }
    }
}
