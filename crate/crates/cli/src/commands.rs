use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use trans_blstm::audit::count_params_analytic;
use trans_blstm::config::{BlstmWidth, ModelConfig};
use trans_blstm::data::{
    classification_task, gen_synthetic_corpus, make_batch, span_task, Corpus, MaskConfig, SyntheticSpec,
    TaskExample, Vocab,
};
use trans_blstm::gradcheck::{check_block, BlockKind};
use trans_blstm::model::{PretrainModel, TaskModel, TaskSpec};
use trans_blstm::train::{
    accuracy, run_rng, sample_examples, Checkpoint, FinetuneHyper, Finetuner, PretrainHyper, Pretrainer,
    FINETUNE_HEADER, PRETRAIN_HEADER,
};

use crate::settings::{
    preset_of, pretrain_defaults, record_model, resolve_model, RunFile, TaskArg, WidthArg,
};
use crate::{CountParamsArgs, EvalArgs, FinetuneArgs, GenCorpusArgs, GradcheckArgs, PretrainArgs};

const CORPUS_FILE: &str = "corpus.txt";
const VOCAB_FILE: &str = "vocab.txt";
const METRICS_FILE: &str = "metrics.tsv";
const CHECKPOINT_FILE: &str = "checkpoint.bin";

const DEFAULT_CLASSES: usize = 2;
const DEFAULT_TASK_EXAMPLES: usize = 600;
const TASK_BODY_LEN: usize = 14;

/// Architecture fields of `explicit` layered over those of `base`.
fn over_checkpoint(explicit: &RunFile, base: &ModelConfig) -> RunFile {
    let mut filled = RunFile::default();
    record_model(&mut filled, base);
    RunFile {
        layers: explicit.layers.or(filled.layers),
        hidden: explicit.hidden.or(filled.hidden),
        heads: explicit.heads.or(filled.heads),
        ff_width: explicit.ff_width.or(filled.ff_width),
        blstm: explicit.blstm.or(filled.blstm),
        blstm_hidden: explicit.blstm_hidden.or(filled.blstm_hidden),
        sum_point: explicit.sum_point.or(filled.sum_point),
        decoder: explicit.decoder.or(filled.decoder),
        vocab_size: explicit.vocab_size.or(filled.vocab_size),
        max_positions: explicit.max_positions.or(filled.max_positions),
        dropout: explicit.dropout.or(filled.dropout),
        ..explicit.clone()
    }
}

fn sibling_vocab(corpus: &Path) -> Option<PathBuf> {
    let candidate = corpus.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE);
    candidate.is_file().then_some(candidate)
}

/// Streams lines to `<name>.partial` and renames on success, so an aborted
/// run leaves no metrics file behind.
struct MetricsFile {
    tmp: PathBuf,
    path: PathBuf,
    out: Option<BufWriter<File>>,
}

impl MetricsFile {
    fn create(dir: &Path, header: &str) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let tmp = path.with_extension("tsv.partial");
        let mut out = BufWriter::new(File::create(&tmp)?);
        writeln!(out, "{header}")?;
        Ok(Self {
            tmp,
            path,
            out: Some(out),
        })
    }

    fn line(&mut self, record: impl std::fmt::Display) -> Result<()> {
        writeln!(self.out.as_mut().expect("open"), "{record}")?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.take().expect("open").flush()?;
        fs::rename(&self.tmp, &self.path)?;
        Ok(())
    }
}

impl Drop for MetricsFile {
    fn drop(&mut self) {
        if self.out.is_some() {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        num_docs: a.docs,
        successor_prob: a.successor_prob,
        ..SyntheticSpec::new(a.vocab_size)
    };
    let sc = gen_synthetic_corpus(&spec, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    sc.corpus.write(&a.out.join(CORPUS_FILE))?;
    sc.vocab.write(&a.out.join(VOCAB_FILE))?;
    let run = RunFile {
        command: Some("gen-corpus".into()),
        vocab_size: Some(a.vocab_size),
        seed: Some(a.seed),
        out: Some(a.out.clone()),
        ..RunFile::default()
    };
    run.write(&a.out)?;
    let sentences: usize = sc.corpus.documents.iter().map(Vec::len).sum();
    println!(
        "wrote {} documents, {sentences} sentences, {} tokens of vocabulary to {}",
        sc.corpus.documents.len(),
        sc.vocab.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn pretrain(a: PretrainArgs) -> Result<ExitCode> {
    let layered = a.model.layered()?;
    let corpus_path = a
        .corpus
        .or(layered.corpus.clone())
        .context("--corpus is required")?;
    let out = a.out.or(layered.out.clone()).context("--out is required")?;

    // Every input is loaded and validated before the output directory is
    // touched.
    let corpus = Corpus::read(&corpus_path)?;
    if corpus.documents.is_empty() {
        bail!("corpus {} has no documents", corpus_path.display());
    }
    let resume = a
        .checkpoint
        .or(layered.checkpoint.clone())
        .map(|p| Checkpoint::load(&p).map(|c| (p, c)))
        .transpose()?;
    let vocab_path = a
        .vocab
        .or(layered.vocab.clone())
        .or_else(|| sibling_vocab(&corpus_path));
    let vocab = match &vocab_path {
        Some(p) => Vocab::read(p)?,
        None => {
            let size = layered
                .vocab_size
                .unwrap_or_else(|| ModelConfig::preset(preset_of(&layered)).vocab_size);
            Vocab::induce(corpus.sentences(), size)?
        }
    };
    let config = match &resume {
        Some((_, ck)) => {
            let c = resolve_model(&over_checkpoint(&layered, &ck.config), None)?;
            if c != ck.config {
                bail!("settings differ from the checkpoint's architecture");
            }
            c
        }
        None => resolve_model(&layered, Some(vocab.len()))?,
    };
    if vocab.len() > config.vocab_size {
        bail!(
            "vocab has {} tokens, model vocabulary is {}",
            vocab.len(),
            config.vocab_size
        );
    }
    let defaults = pretrain_defaults(preset_of(&layered));
    let hyper = PretrainHyper {
        batch_size: a.batch.or(layered.batch).unwrap_or(defaults.batch),
        max_len: a
            .max_len
            .or(layered.max_len)
            .unwrap_or(defaults.max_len.min(config.max_positions)),
        steps: a.steps.or(layered.steps).unwrap_or(defaults.steps),
        lr: a.lr.or(layered.lr).unwrap_or(defaults.lr),
        seed: a.seed.or(layered.seed).unwrap_or(0),
        per_piece: a.per_piece,
        timing: !a.no_wall_time,
    };
    let tokenized = corpus.tokenize(&vocab);
    let mut trainer = match resume.clone() {
        Some((_, ck)) => Pretrainer::resume(ck, tokenized, hyper.clone())?,
        None => Pretrainer::new(&config, tokenized, hyper.clone())?,
    };

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut run = RunFile {
        command: Some("pretrain".into()),
        preset: layered.preset,
        max_len: Some(hyper.max_len),
        batch: Some(hyper.batch_size),
        lr: Some(hyper.lr),
        steps: Some(hyper.steps),
        seed: Some(hyper.seed),
        corpus: Some(corpus_path),
        vocab: Some(out.join(VOCAB_FILE)),
        checkpoint: resume.map(|(p, _)| p),
        out: Some(out.clone()),
        ..RunFile::default()
    };
    record_model(&mut run, &config);
    run.write(&out)?;
    vocab.write(&out.join(VOCAB_FILE))?;

    let mut metrics = MetricsFile::create(&out, PRETRAIN_HEADER)?;
    let mut last = None;
    while trainer.step < hyper.steps {
        let record = trainer.train_step()?;
        metrics.line(record)?;
        if a.checkpoint_every > 0 && record.step % a.checkpoint_every == 0 {
            trainer
                .checkpoint()
                .save(&out.join(format!("checkpoint-{}.bin", record.step)))?;
        }
        last = Some(record);
    }
    metrics.finish()?;
    trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    if let Some(r) = last {
        println!(
            "step {}: total {:.4} mlm {:.4} nsp {:.4}",
            r.step, r.total, r.mlm, r.nsp
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn task_examples(spec: TaskSpec, n: usize, config: &ModelConfig, seed: u64) -> Result<Vec<TaskExample>> {
    let body = TASK_BODY_LEN.min(config.max_positions.saturating_sub(2));
    Ok(match spec {
        TaskSpec::Classify { num_classes } => classification_task(
            n,
            num_classes,
            body,
            config.vocab_size,
            config.max_positions,
            seed,
        )?,
        TaskSpec::Span => span_task(n, body, config.vocab_size, config.max_positions, seed)?,
    })
}

pub fn finetune(a: FinetuneArgs) -> Result<ExitCode> {
    let layered = a.model.layered()?;
    let out = a.out.or(layered.out.clone()).context("--out is required")?;
    let ckpt_path = a.checkpoint.or(layered.checkpoint.clone());
    let pretrained = ckpt_path.as_deref().map(Checkpoint::load).transpose()?;
    if pretrained.as_ref().is_some_and(|c| c.task.is_some()) {
        bail!("--checkpoint must be a pretraining checkpoint");
    }
    let config = match &pretrained {
        Some(ck) => resolve_model(&over_checkpoint(&layered, &ck.config), None)?,
        None => resolve_model(&layered, None)?,
    };
    let defaults = FinetuneHyper::default();
    let hyper = FinetuneHyper {
        lr: a.lr.or(layered.lr).unwrap_or(defaults.lr),
        batch_size: a.batch.or(layered.batch).unwrap_or(defaults.batch_size),
        epochs: a.epochs.or(layered.epochs).unwrap_or(defaults.epochs),
        seed: a.seed.or(layered.seed).unwrap_or(defaults.seed),
        timing: !a.no_wall_time,
    };
    let task = a.task.or(layered.task).unwrap_or(TaskArg::Classify);
    let classes = a.classes.or(layered.classes).unwrap_or(DEFAULT_CLASSES);
    let spec = match task {
        TaskArg::Classify => TaskSpec::Classify { num_classes: classes },
        TaskArg::Span => TaskSpec::Span,
    };
    let n = a.examples.or(layered.examples).unwrap_or(DEFAULT_TASK_EXAMPLES);
    let examples = task_examples(spec, n, &config, hyper.seed)?;
    let mut model = TaskModel::new(&config, spec, hyper.seed)?;
    if let Some(ck) = &pretrained {
        model.load_encoder(&ck.config, &ck.store)?;
    }
    let mut tuner = Finetuner::new(model, examples.clone(), hyper.clone())?;

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut run = RunFile {
        command: Some("finetune".into()),
        preset: layered.preset,
        batch: Some(hyper.batch_size),
        lr: Some(hyper.lr),
        epochs: Some(hyper.epochs),
        seed: Some(hyper.seed),
        task: Some(task),
        classes: matches!(task, TaskArg::Classify).then_some(classes),
        examples: Some(n),
        checkpoint: ckpt_path,
        out: Some(out.clone()),
        ..RunFile::default()
    };
    record_model(&mut run, &config);
    run.write(&out)?;

    let mut metrics = MetricsFile::create(&out, FINETUNE_HEADER)?;
    for _ in 0..hyper.epochs {
        for record in tuner.run_epoch()? {
            metrics.line(record)?;
        }
    }
    metrics.finish()?;
    tuner.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    let acc = accuracy(&tuner.model, &examples, hyper.batch_size.max(32))?;
    println!("train accuracy {acc:.4} over {n} examples");
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    match ck.task {
        Some(spec) => {
            let model = TaskModel::with_store(&ck.config, spec, ck.store)?;
            let examples = task_examples(spec, a.examples, &model.config, a.seed)?;
            let acc = accuracy(&model, &examples, a.batch)?;
            println!("accuracy {acc:.4} over {} examples", examples.len());
        }
        None => {
            let corpus_path = a
                .corpus
                .context("--corpus is required for a pretraining checkpoint")?;
            let vocab_path = a
                .vocab
                .or_else(|| sibling_vocab(&corpus_path))
                .context("--vocab is required (no vocab.txt beside the corpus)")?;
            let corpus = Corpus::read(&corpus_path)?;
            let vocab = Vocab::read(&vocab_path)?;
            let model = PretrainModel::with_store(&ck.config, ck.store)?;
            let max_len = a.max_len.unwrap_or(model.config.max_positions);
            let tokenized = corpus.tokenize(&vocab);
            let mask = MaskConfig::new(model.config.vocab_size);
            let mut rng = run_rng(a.seed);
            let mut sums = (0.0, 0.0, 0.0);
            for _ in 0..a.batches {
                let examples = sample_examples(&tokenized, a.batch, max_len, &mask, &mut rng)?;
                let (t, m, n) = model.eval_losses(&make_batch(&examples, max_len)?)?;
                sums = (sums.0 + t, sums.1 + m, sums.2 + n);
            }
            let k = a.batches.max(1) as f64;
            println!(
                "total {:.6}\tmlm {:.6}\tnsp {:.6}",
                sums.0 / k,
                sums.1 / k,
                sums.2 / k
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn count_params(a: CountParamsArgs) -> Result<ExitCode> {
    let layered = a.model.layered()?;
    let config = resolve_model(&layered, None)?;
    let report = count_params_analytic(&config)?;
    if !a.json {
        println!("{report}");
    }
    println!("{}", report.to_json());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let kinds: Vec<BlockKind> = if a.block == "all" {
        BlockKind::ALL.to_vec()
    } else {
        vec![a.block.parse()?]
    };
    let width = match a.blstm_hidden {
        WidthArg::Full => BlstmWidth::Full,
        WidthArg::Half => BlstmWidth::Half,
    };
    let mut ok = true;
    println!("block\tmax_rel_error\tchecked\tresult");
    for kind in kinds {
        let r = check_block(kind, width, a.seed)?;
        let pass = r.passes(a.tol);
        ok &= pass;
        println!(
            "{kind}\t{:.3e}\t{}\t{}",
            r.max_rel_error,
            r.checked,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
