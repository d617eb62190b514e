//! Per-step training records as tab-separated lines.
//!
//! Pretraining fields, in order: `step total mlm nsp lr ms`.
//! Fine-tuning fields, in order: `step loss lr ms`.

use std::fmt;

pub const PRETRAIN_HEADER: &str = "step\ttotal\tmlm\tnsp\tlr\tms";
pub const FINETUNE_HEADER: &str = "step\tloss\tlr\tms";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub total: f64,
    pub mlm: f64,
    pub nsp: f64,
    pub lr: f64,
    /// Wall-clock milliseconds for the step; zero when timing is disabled.
    pub ms: u64,
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{}",
            self.step, self.total, self.mlm, self.nsp, self.lr, self.ms
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub ms: u64,
}

impl fmt::Display for FinetuneRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:e}\t{:e}\t{}", self.step, self.loss, self.lr, self.ms)
    }
}
