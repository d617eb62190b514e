use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{run_rng, Adam, AdamConfig, Checkpoint, FinetuneRecord};
use crate::data::{make_task_batch, TaskExample};
use crate::model::TaskModel;
use crate::params::{Graph, Mode, Rng};
use crate::tensor::Tape;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub timing: bool,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            batch_size: 12,
            epochs: 2,
            seed: 0,
            timing: true,
        }
    }
}

pub struct Finetuner {
    pub model: TaskModel,
    pub adam: Adam,
    pub rng: Rng,
    pub step: u64,
    pub hyper: FinetuneHyper,
    examples: Vec<TaskExample>,
}

impl Finetuner {
    pub fn new(model: TaskModel, examples: Vec<TaskExample>, hyper: FinetuneHyper) -> Result<Self> {
        if examples.is_empty() || hyper.batch_size == 0 {
            return Err(Error::Config(
                "fine-tuning needs examples and a positive batch size".into(),
            ));
        }
        let steps_per_epoch = examples.len().div_ceil(hyper.batch_size);
        let total = (steps_per_epoch * hyper.epochs) as u64;
        let adam = Adam::new(AdamConfig::new(hyper.lr, total), &model.store);
        Ok(Self {
            model,
            adam,
            rng: run_rng(hyper.seed),
            step: 0,
            hyper,
            examples,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            task: Some(self.model.spec),
            step: self.step,
            rng: self.rng.clone(),
            store: self.model.store.clone(),
            adam: self.adam.clone(),
        }
    }

    /// One pass over the shuffled examples.
    pub fn run_epoch(&mut self) -> Result<Vec<FinetuneRecord>> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut records = Vec::new();
        for chunk in order.chunks(self.hyper.batch_size) {
            let started = Instant::now();
            let batch: Vec<TaskExample> = chunk.iter().map(|&i| self.examples[i].clone()).collect();
            let batch = make_task_batch(&batch)?;
            let step = self.step + 1;
            let mut tape = Tape::new();
            let mode = Mode::Train {
                dropout: self.model.config.dropout,
                rng: &mut self.rng,
            };
            let mut g = Graph::bind(&mut tape, &self.model.store, mode);
            let loss = self.model.loss(&mut g, &batch)?;
            g.tape.backward(loss)?;
            let grads = g.take_grads();
            let loss = tape.value(loss).item();
            let lr = self.adam.step(&mut self.model.store, &grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch: step - 1,
                });
            }
            self.step = step;
            let ms = if self.hyper.timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            };
            records.push(FinetuneRecord { step, loss, lr, ms });
        }
        Ok(records)
    }

    pub fn train(&mut self) -> Result<Vec<FinetuneRecord>> {
        let mut records = Vec::new();
        for _ in 0..self.hyper.epochs {
            records.extend(self.run_epoch()?);
        }
        Ok(records)
    }
}

/// Fraction of examples predicted exactly (class, or both span endpoints).
pub fn accuracy(model: &TaskModel, examples: &[TaskExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("accuracy over zero examples".into()));
    }
    let mut hits = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = make_task_batch(chunk)?;
        let predicted = model.predict(&batch)?;
        hits += predicted
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(hits as f64 / examples.len() as f64)
}
