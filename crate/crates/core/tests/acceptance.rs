//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, whether or not output
//! capture is on. Exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trans_blstm::audit::count_params_analytic;
use trans_blstm::blocks::EncoderInput;
use trans_blstm::config::{BlstmMode, BlstmWidth, DecoderMode, ModelConfig, Preset};
use trans_blstm::data::{
    classification_task, gen_synthetic_corpus, is_special, make_batch, sample_sentence_pair, span_task,
    Batch, MaskConfig, SyntheticSpec, TokenizedCorpus, IS_NEXT, MASK,
};
use trans_blstm::gradcheck::{
    check_block, check_gradients, probe_loss, random_tensor, BlockKind, GradCheckReport, STEP,
};
use trans_blstm::model::{PretrainModel, TaskModel, TaskSpec};
use trans_blstm::nn::{Blstm, Embeddings, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use trans_blstm::params::{Graph, Initializer, Mode, ParamBuilder, ParamStore};
use trans_blstm::tensor::{Tape, Tensor, TensorError, Var};
use trans_blstm::train::{
    accuracy, run_rng, sample_examples, Checkpoint, FinetuneHyper, Finetuner, MetricsRecord, PretrainHyper,
    Pretrainer,
};

const GRAD_TOL: f64 = 1e-4;
const TOY_VOCAB: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, elapsed: Duration, outcome: Outcome) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} [{verdict}] {name} ({:.1}s): {}",
        elapsed.as_secs_f64(),
        outcome.detail
    );
    results.push(outcome.pass);
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed())
}

fn toy_corpus() -> TokenizedCorpus {
    let sc = gen_synthetic_corpus(&SyntheticSpec::new(TOY_VOCAB), 0).expect("synthetic corpus");
    sc.corpus.tokenize(&sc.vocab)
}

fn toy_config(mode: BlstmMode) -> ModelConfig {
    ModelConfig {
        vocab_size: TOY_VOCAB,
        ..ModelConfig::preset(Preset::Toy)
    }
    .with_blstm(mode, BlstmWidth::Full)
}

fn toy_hyper(steps: u64, batch_size: usize) -> PretrainHyper {
    PretrainHyper {
        batch_size,
        max_len: 32,
        steps,
        lr: 1e-2,
        seed: 0,
        per_piece: false,
        timing: false,
    }
}

fn fixed_batches(corpus: &TokenizedCorpus, count: usize, seed: u64) -> Vec<Batch> {
    let mask = MaskConfig::new(TOY_VOCAB);
    let mut rng = run_rng(seed);
    (0..count)
        .map(|_| {
            let examples = sample_examples(corpus, 32, 32, &mask, &mut rng).expect("examples");
            make_batch(&examples, 32).expect("batch")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1. Parameter audit

/// Published totals in millions: (preset, mode, width, value).
const TABLE: [(Preset, BlstmMode, BlstmWidth, f64); 6] = [
    (Preset::Base, BlstmMode::None, BlstmWidth::Full, 108.0),
    (Preset::Base, BlstmMode::ParallelSum, BlstmWidth::Half, 152.0),
    (Preset::Base, BlstmMode::ParallelSum, BlstmWidth::Full, 237.0),
    (Preset::Large, BlstmMode::None, BlstmWidth::Full, 334.0),
    (Preset::Large, BlstmMode::ParallelSum, BlstmWidth::Half, 487.0),
    (Preset::Large, BlstmMode::ParallelSum, BlstmWidth::Full, 789.0),
];

fn parameter_audit() -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (preset, mode, width, published) in TABLE {
        let c = ModelConfig::preset(preset).with_blstm(mode, width);
        assert_eq!((c.vocab_size, c.max_positions), (30_000, 256));
        let r = match count_params_analytic(&c) {
            Ok(r) => r,
            Err(e) => return Outcome::error(e),
        };
        let millions = r.total as f64 / 1e6;
        let dev = (millions - published) / published;
        pass &= dev.abs() <= 0.02;
        parts.push(format!("{millions:.1}M vs {published}M ({:+.2}%)", 100.0 * dev));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(1);
    Outcome::new(
        pass,
        format!("{} in {:.1} ms", parts.join(", "), elapsed.as_secs_f64() * 1e3),
    )
}

// ---------------------------------------------------------------------------
// 2. Gradient checks

type Check = Result<GradCheckReport, String>;

fn check_op<F>(inputs: &[Tensor], f: F) -> Check
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    check_gradients(inputs, STEP, f).map_err(|e| e.to_string())
}

/// Gradient check of a parameterized layer: every parameter and the input
/// are perturbed.
fn check_layer<L>(
    input: Tensor,
    build: impl FnOnce(&mut ParamBuilder<'_>) -> trans_blstm::Result<L>,
    forward: impl Fn(&L, &mut Graph<'_>, Var) -> trans_blstm::Result<Var>,
    seed: u64,
) -> Check {
    let mut store = ParamStore::new();
    let layer =
        build(&mut ParamBuilder::new(&mut store, Initializer::new(seed))).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![input];
    inputs.extend(
        store
            .iter()
            .map(|(_, _, t)| random_tensor(t.shape(), 0.5, &mut rng)),
    );
    check_gradients(&inputs, STEP, |tape, vars| {
        let mut g = Graph::with_vars(tape, vars[1..].to_vec(), Mode::Eval);
        let out = forward(&layer, &mut g, vars[0])?;
        Ok::<_, trans_blstm::Error>(probe_loss(g.tape, out, seed)?)
    })
    .map_err(|e| e.to_string())
}

fn primitive_checks() -> Vec<(&'static str, Check)> {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut t = |shape: &[usize], scale| random_tensor(shape, scale, &mut r);
    let (a, b, v4) = (t(&[2, 3, 4], 1.0), t(&[2, 4, 3], 1.0), t(&[4], 1.0));
    let (m, w, gamma, beta, scores) = (
        t(&[3, 4], 1.0),
        t(&[4, 5], 1.0),
        t(&[4], 1.0),
        t(&[4], 1.0),
        t(&[2, 3, 3], 2.0),
    );
    let (logits, table) = (t(&[4, 5], 2.0), t(&[6, 3], 1.0));
    let (x, w_ih, w_hh, bias) = (
        t(&[2, 3, 4], 1.0),
        t(&[4, 12], 0.5),
        t(&[3, 12], 0.5),
        t(&[12], 0.5),
    );
    let hidden = t(&[2, 3, 8], 1.0);
    let positive = Tensor::from_fn(&[2, 3], |i| 0.5 + 0.1 * i as f64);
    let valid6 = [true, true, true, true, true, false];
    let probe = |tape: &mut Tape, y: Var| probe_loss(tape, y, 1);

    let mut out: Vec<(&'static str, Check)> = vec![
        (
            "add",
            check_op(&[a.clone(), v4.clone()], |tp, v| {
                let y = tp.add(v[0], v[1])?;
                probe(tp, y)
            }),
        ),
        (
            "sub",
            check_op(&[a.clone(), v4.clone()], |tp, v| {
                let y = tp.sub(v[0], v[1])?;
                probe(tp, y)
            }),
        ),
        (
            "mul",
            check_op(&[a.clone(), v4.clone()], |tp, v| {
                let y = tp.mul(v[0], v[1])?;
                probe(tp, y)
            }),
        ),
        (
            "scale",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.scale(v[0], 0.7)?;
                probe(tp, y)
            }),
        ),
        (
            "tanh",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.tanh(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "sigmoid",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.sigmoid(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "gelu",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.gelu(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "exp",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.exp(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "log",
            check_op(&[positive], |tp, v| {
                let y = tp.log(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "matmul",
            check_op(&[a.clone(), b.clone()], |tp, v| {
                let y = tp.matmul(v[0], v[1])?;
                probe(tp, y)
            }),
        ),
        (
            "matmul-broadcast",
            check_op(&[a.clone(), w], |tp, v| {
                let y = tp.matmul(v[0], v[1])?;
                probe(tp, y)
            }),
        ),
        (
            "transpose",
            check_op(std::slice::from_ref(&m), |tp, v| {
                let y = tp.transpose(v[0])?;
                probe(tp, y)
            }),
        ),
        (
            "reshape",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.reshape(v[0], &[6, 4])?;
                probe(tp, y)
            }),
        ),
        (
            "softmax",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.softmax(v[0], 2)?;
                probe(tp, y)
            }),
        ),
        (
            "masked-softmax",
            check_op(&[scores], |tp, v| {
                let y = tp.masked_softmax(v[0], &valid6)?;
                probe(tp, y)
            }),
        ),
        (
            "layer-norm",
            check_op(&[a.clone(), gamma, beta], |tp, v| {
                let y = tp.layer_norm(v[0], v[1], v[2], 1e-12)?;
                probe(tp, y)
            }),
        ),
        (
            "concat",
            check_op(&[a.clone(), b.clone()], |tp, v| {
                let bt = tp.reshape(v[1], &[2, 3, 4])?;
                let y = tp.concat(&[v[0], bt], 2)?;
                probe(tp, y)
            }),
        ),
        (
            "slice",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.slice(v[0], 2, 1, 3)?;
                probe(tp, y)
            }),
        ),
        (
            "gather",
            check_op(&[table], |tp, v| {
                let y = tp.gather(v[0], &[0, 5, 5, 2])?;
                probe(tp, y)
            }),
        ),
        (
            "cross-entropy",
            check_op(&[logits], |tp, v| tp.cross_entropy(v[0], &[0, 3, 4, 1], None)),
        ),
        (
            "sum",
            check_op(std::slice::from_ref(&a), |tp, v| {
                let y = tp.exp(v[0])?;
                tp.sum(y)
            }),
        ),
        (
            "mean",
            check_op(&[a], |tp, v| {
                let y = tp.exp(v[0])?;
                tp.mean(y)
            }),
        ),
    ];
    for reverse in [false, true] {
        let name = if reverse { "lstm-scan-reverse" } else { "lstm-scan" };
        out.push((
            name,
            check_op(&[x.clone(), w_ih.clone(), w_hh.clone(), bias.clone()], |tp, v| {
                let y = tp.lstm_scan(v[0], v[1], v[2], v[3], &valid6, reverse)?;
                probe(tp, y)
            }),
        ));
    }

    out.push((
        "linear",
        check_layer(
            hidden.clone(),
            |b| Linear::new(b, 8, 5),
            |l, g, x| l.forward(g, x),
            2,
        ),
    ));
    out.push((
        "layer-norm-layer",
        check_layer(
            hidden.clone(),
            |b| LayerNorm::new(b, 8, 1e-12),
            |l, g, x| l.forward(g, x),
            3,
        ),
    ));
    out.push((
        "feed-forward",
        check_layer(
            hidden.clone(),
            |b| FeedForward::new(b, 8, 16),
            |l, g, x| l.forward(g, x),
            4,
        ),
    ));
    out.push((
        "attention",
        check_layer(
            hidden.clone(),
            |b| MultiHeadAttention::new(b, 8, 2),
            |l, g, x| l.forward(g, x, &valid6),
            5,
        ),
    ));
    for (name, project, units) in [("blstm-projected", true, 8), ("blstm-half", false, 4)] {
        out.push((
            name,
            check_layer(
                hidden.clone(),
                |b| Blstm::new(b, 8, units, project),
                |l, g, x| l.forward(g, x, &valid6),
                6,
            ),
        ));
    }
    // Embedding tables enter through a lookup, so the checked input is a
    // dummy that the layer ignores.
    out.push((
        "embeddings",
        check_layer(
            Tensor::zeros(&[1]),
            |b| Embeddings::new(b, 12, 4, 8, 1e-12),
            |l, g, _| l.forward(g, &[2, 7, 7, 3, 2, 11], &[0, 0, 1, 0, 0, 1], 2, 3),
            7,
        ),
    ));
    out
}

struct GradSummary {
    primitives: Vec<(&'static str, Check)>,
    blocks: Vec<(BlockKind, BlstmWidth, Check)>,
}

impl GradSummary {
    fn run() -> Self {
        let primitives = primitive_checks();
        let mut blocks = Vec::new();
        for kind in BlockKind::ALL {
            for width in [BlstmWidth::Full, BlstmWidth::Half] {
                blocks.push((
                    kind,
                    width,
                    check_block(kind, width, 0).map_err(|e| e.to_string()),
                ));
            }
        }
        Self { primitives, blocks }
    }

    fn ok(c: &Check) -> bool {
        c.as_ref().is_ok_and(|r| r.passes(GRAD_TOL))
    }

    fn kind_passes(&self, kind: BlockKind) -> bool {
        self.blocks
            .iter()
            .filter(|(k, _, _)| *k == kind)
            .all(|(_, _, c)| Self::ok(c))
    }

    fn outcome(&self) -> Outcome {
        let worst = |checks: &mut dyn Iterator<Item = &Check>| {
            checks
                .map(|c| c.as_ref().map_or(f64::INFINITY, |r| r.max_rel_error))
                .fold(0.0, f64::max)
        };
        let mut failures: Vec<String> = self
            .primitives
            .iter()
            .filter(|(_, c)| !Self::ok(c))
            .map(|(n, c)| format!("{n} {c:?}"))
            .collect();
        failures.extend(
            self.blocks
                .iter()
                .filter(|(_, _, c)| !Self::ok(c))
                .map(|(k, w, c)| format!("{k} {w:?} {c:?}")),
        );
        let prim = worst(&mut self.primitives.iter().map(|(_, c)| c));
        let blocks = worst(&mut self.blocks.iter().map(|(_, _, c)| c));
        let mut detail = format!(
            "{} primitives (max rel {prim:.2e}), {} block checks (max rel {blocks:.2e}), tol {GRAD_TOL:e}",
            self.primitives.len(),
            self.blocks.len()
        );
        if !failures.is_empty() {
            detail.push_str(&format!("; failing: {}", failures.join(", ")));
        }
        Outcome::new(failures.is_empty(), detail)
    }
}

// ---------------------------------------------------------------------------
// 3. Masking and pair statistics

fn masking_statistics() -> Result<Outcome, trans_blstm::Error> {
    let sc = gen_synthetic_corpus(&SyntheticSpec::new(2_000), 1)?;
    let corpus = sc.corpus.tokenize(&sc.vocab);
    let mask = MaskConfig::new(sc.vocab.len());
    let mut rng = run_rng(7);
    let (mut maskable, mut selected, mut masked, mut random, mut kept) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    while maskable < 120_000 {
        for ex in sample_examples(&corpus, 256, 128, &mask, &mut rng)? {
            maskable += ex.demasked().iter().filter(|&&t| !is_special(t)).count();
            selected += ex.mlm_positions.len();
            for (&p, &label) in ex.mlm_positions.iter().zip(&ex.mlm_labels) {
                match ex.token_ids[p] {
                    MASK => masked += 1,
                    t if t == label => kept += 1,
                    _ => random += 1,
                }
            }
        }
    }
    let frac = selected as f64 / maskable as f64;
    let share = |n: usize| n as f64 / selected as f64;
    let (pm, pr, pk) = (share(masked), share(random), share(kept));

    let mut pair_rng = run_rng(8);
    let pairs = 10_000;
    let mut next = 0;
    for _ in 0..pairs {
        if sample_sentence_pair(&corpus.documents, &mut pair_rng)?.nsp_label == IS_NEXT {
            next += 1;
        }
    }
    let nsp = next as f64 / pairs as f64;

    let pass = (frac - 0.15).abs() <= 0.01
        && (pm - 0.8).abs() <= 0.02
        && (pr - 0.1).abs() <= 0.02
        && (pk - 0.1).abs() <= 0.02
        && (nsp - 0.5).abs() <= 0.02;
    Ok(Outcome::new(
        pass,
        format!(
            "masked {frac:.4} of {maskable} positions; mask/random/kept {pm:.3}/{pr:.3}/{pk:.3}; is-next {nsp:.4} of {pairs} pairs"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. Ablation identity

fn encoder_output(model: &PretrainModel, batch: &Batch) -> trans_blstm::Result<Tensor> {
    let mut tape = Tape::new();
    let mut g = Graph::bind(&mut tape, &model.store, Mode::Eval);
    let input = EncoderInput {
        token_ids: &batch.token_ids,
        segment_ids: &batch.segment_ids,
        valid: &batch.valid,
        batch: batch.batch,
        seq: batch.seq,
    };
    let h = model.encoder.forward(&mut g, input)?;
    Ok(tape.value(h).clone())
}

fn ablation_identity() -> trans_blstm::Result<Outcome> {
    let corpus = toy_corpus();
    let batch = &fixed_batches(&corpus, 1, 21)[0];
    let trans_config = ModelConfig {
        dropout: 0.0,
        ..toy_config(BlstmMode::None)
    };
    let tb2_config = ModelConfig {
        dropout: 0.0,
        ..toy_config(BlstmMode::ParallelSum)
    };
    let trans = PretrainModel::new(&trans_config, 5)?;
    let mut tb2 = PretrainModel::new(&tb2_config, 5)?;
    let zeroed: usize = (0..tb2_config.num_layers)
        .map(|i| tb2.store.zero_prefix(&format!("encoder.layer{i}.blstm")))
        .sum();
    let same_output = encoder_output(&trans, batch)? == encoder_output(&tb2, batch)?;
    let (t_loss, t_mlm, t_nsp) = trans.eval_losses(batch)?;
    let (b_loss, b_mlm, b_nsp) = tb2.eval_losses(batch)?;
    let same_eval = (t_loss.to_bits(), t_mlm.to_bits(), t_nsp.to_bits())
        == (b_loss.to_bits(), b_mlm.to_bits(), b_nsp.to_bits());

    // The first training step sees the same batch and the same forward pass.
    let hyper = toy_hyper(10, 8);
    let mut t_run = Pretrainer::new(&trans_config, corpus.clone(), hyper.clone())?;
    let mut b_run = Pretrainer::new(&tb2_config, corpus, hyper)?;
    for i in 0..tb2_config.num_layers {
        b_run.model.store.zero_prefix(&format!("encoder.layer{i}.blstm"));
    }
    let same_step = t_run.train_step()?.total.to_bits() == b_run.train_step()?.total.to_bits();

    Ok(Outcome::new(
        same_output && same_eval && same_step && zeroed > 0,
        format!(
            "{zeroed} tensors zeroed; encoder output identical {same_output}, eval loss identical {same_eval} ({t_loss}), step-1 training loss identical {same_step}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 5. Learnability

#[derive(Debug, Clone)]
struct Learning {
    mode: BlstmMode,
    initial: f64,
    initial_mlm: f64,
    final_loss: f64,
    elapsed: Duration,
}

impl Learning {
    fn ratio(&self) -> f64 {
        self.final_loss / self.initial
    }

    fn mlm_near_chance(&self) -> bool {
        let chance = (TOY_VOCAB as f64).ln();
        ((self.initial_mlm - chance) / chance).abs() <= 0.1
    }

    fn passes(&self) -> bool {
        self.ratio() < 0.5 && self.mlm_near_chance() && self.elapsed <= Duration::from_secs(30 * 60)
    }
}

fn mode_name(mode: BlstmMode) -> &'static str {
    match mode {
        BlstmMode::None => "trans",
        BlstmMode::ReplaceFfn => "trans-blstm-1",
        BlstmMode::ParallelSum => "trans-blstm-2",
        BlstmMode::PureBlstm => "pure-blstm",
    }
}

fn mean_eval(model: &PretrainModel, batches: &[Batch]) -> trans_blstm::Result<(f64, f64)> {
    let mut sums = (0.0, 0.0);
    for b in batches {
        let (total, mlm, _) = model.eval_losses(b)?;
        sums = (sums.0 + total, sums.1 + mlm);
    }
    let n = batches.len() as f64;
    Ok((sums.0 / n, sums.1 / n))
}

fn learn(mode: BlstmMode) -> trans_blstm::Result<Learning> {
    let started = Instant::now();
    let corpus = toy_corpus();
    let eval = fixed_batches(&corpus, 8, 1_000);
    let mut trainer = Pretrainer::new(&toy_config(mode), corpus, toy_hyper(2_000, 32))?;
    let (initial, initial_mlm) = mean_eval(&trainer.model, &eval)?;
    while trainer.step < trainer.hyper.steps {
        trainer.train_step()?;
    }
    let (final_loss, _) = mean_eval(&trainer.model, &eval)?;
    Ok(Learning {
        mode,
        initial,
        initial_mlm,
        final_loss,
        elapsed: started.elapsed(),
    })
}

type LearningResults = Vec<Result<Learning, String>>;

fn learnability_outcome(results: &LearningResults) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut ok: Vec<&Learning> = Vec::new();
    for r in results {
        match r {
            Ok(l) => {
                pass &= l.passes();
                parts.push(format!(
                    "{} {:.3} -> {:.3} ({:.1}% of initial, initial mlm {:.3} vs ln V {:.3}, {:.0}s)",
                    mode_name(l.mode),
                    l.initial,
                    l.final_loss,
                    100.0 * l.ratio(),
                    l.initial_mlm,
                    (TOY_VOCAB as f64).ln(),
                    l.elapsed.as_secs_f64()
                ));
                ok.push(l);
            }
            Err(e) => {
                pass = false;
                parts.push(format!("error: {e}"));
            }
        }
    }
    ok.sort_by(|a, b| a.final_loss.total_cmp(&b.final_loss));
    let order: Vec<&str> = ok.iter().map(|l| mode_name(l.mode)).collect();
    Outcome::new(
        pass,
        format!(
            "{}; final-loss ordering (lowest first): {}",
            parts.join("; "),
            order.join(" < ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Fine-tuning heads

/// Two epochs over this many examples is about 3,300 updates.
const TASK_EXAMPLES: usize = 20_000;

fn finetune_run(spec: TaskSpec, decoder: DecoderMode) -> trans_blstm::Result<(f64, Duration)> {
    let started = Instant::now();
    let config = ModelConfig {
        decoder_mode: decoder,
        ..ModelConfig::preset(Preset::Toy)
    };
    let examples = match spec {
        TaskSpec::Classify { num_classes } => classification_task(
            TASK_EXAMPLES,
            num_classes,
            14,
            config.vocab_size,
            config.max_positions,
            0,
        )?,
        TaskSpec::Span => span_task(TASK_EXAMPLES, 14, config.vocab_size, config.max_positions, 0)?,
    };
    let model = TaskModel::new(&config, spec, 0)?;
    let hyper = FinetuneHyper {
        lr: 2e-3,
        batch_size: 12,
        epochs: 2,
        seed: 0,
        timing: false,
    };
    let mut tuner = Finetuner::new(model, examples.clone(), hyper)?;
    tuner.train()?;
    Ok((accuracy(&tuner.model, &examples, 64)?, started.elapsed()))
}

fn finetuning_heads() -> Outcome {
    let runs = [
        (TaskSpec::Classify { num_classes: 2 }, 0.95),
        (TaskSpec::Span, 0.90),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (spec, bar) in runs {
        for decoder in [DecoderMode::Linear, DecoderMode::Blstm2] {
            let name = match spec {
                TaskSpec::Classify { .. } => "classify",
                TaskSpec::Span => "span",
            };
            match finetune_run(spec, decoder) {
                Ok((acc, elapsed)) => {
                    pass &= acc > bar && elapsed <= Duration::from_secs(600);
                    parts.push(format!("{name}/{decoder:?} {acc:.3} (> {bar})"));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("{name}/{decoder:?} error: {e}"));
                }
            }
        }
    }
    Outcome::new(pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// 7. Variant parity

fn variant_parity(grads: &GradSummary, learning: &LearningResults) -> trans_blstm::Result<Outcome> {
    let corpus = toy_corpus();
    let batch = &fixed_batches(&corpus, 1, 31)[0];
    let mut configs = 0;
    let mut same_shapes = true;
    for preset in [Preset::Toy, Preset::Small] {
        for width in [BlstmWidth::Full, BlstmWidth::Half] {
            let base = ModelConfig {
                vocab_size: TOY_VOCAB.max(ModelConfig::preset(preset).vocab_size),
                ..ModelConfig::preset(preset)
            };
            let tb1 = base.clone().with_blstm(BlstmMode::ReplaceFfn, width);
            let tb2 = base.with_blstm(BlstmMode::ParallelSum, width);
            tb1.validate()?;
            tb2.validate()?;
            let a = encoder_output(&PretrainModel::new(&tb1, 0)?, batch)?;
            let b = encoder_output(&PretrainModel::new(&tb2, 0)?, batch)?;
            same_shapes &= a.shape() == b.shape();
            configs += 1;
        }
    }
    let grad_ok = grads.kind_passes(BlockKind::TransBlstm1) && grads.kind_passes(BlockKind::TransBlstm2);
    let learn_ok = |mode| {
        learning
            .iter()
            .any(|r| r.as_ref().is_ok_and(|l| l.mode == mode && l.passes()))
    };
    let learn1 = learn_ok(BlstmMode::ReplaceFfn);
    let learn2 = learn_ok(BlstmMode::ParallelSum);
    Ok(Outcome::new(
        same_shapes && grad_ok && learn1 && learn2,
        format!(
            "{configs} shared configs, equal output shapes {same_shapes}; gradient checks pass {grad_ok}; learnability trans-blstm-1 {learn1}, trans-blstm-2 {learn2}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. Determinism and resume

fn run_steps(trainer: &mut Pretrainer, until: u64) -> trans_blstm::Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    while trainer.step < until {
        out.push(trainer.train_step()?);
    }
    Ok(out)
}

fn determinism() -> trans_blstm::Result<Outcome> {
    let corpus = toy_corpus();
    let config = toy_config(BlstmMode::ParallelSum);
    let hyper = toy_hyper(100, 8);
    let mut first = Pretrainer::new(&config, corpus.clone(), hyper.clone())?;
    let mut second = Pretrainer::new(&config, corpus.clone(), hyper.clone())?;
    let a = run_steps(&mut first, 100)?;
    let b = run_steps(&mut second, 100)?;
    let bits = |r: &[MetricsRecord]| -> Vec<u64> { r.iter().map(|m| m.total.to_bits()).collect() };
    let repeatable = bits(&a) == bits(&b) && first.checkpoint().to_bytes() == second.checkpoint().to_bytes();

    let mut interrupted = Pretrainer::new(&config, corpus.clone(), hyper.clone())?;
    run_steps(&mut interrupted, 50)?;
    let bytes = interrupted.checkpoint().to_bytes();
    let mut resumed = Pretrainer::resume(Checkpoint::from_bytes(&bytes)?, corpus, hyper)?;
    let tail = run_steps(&mut resumed, 100)?;
    let resumes =
        bits(&tail) == bits(&a[50..]) && resumed.checkpoint().to_bytes() == first.checkpoint().to_bytes();
    Ok(Outcome::new(
        repeatable && resumes,
        format!(
            "100-step loss sequences identical {repeatable}; resume at step 50 matches {} steps bitwise {resumes}",
            tail.len()
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    println!("running acceptance criteria");
    let (learning, mut results) = thread::scope(|s| {
        let handles: Vec<_> = [BlstmMode::None, BlstmMode::ReplaceFfn, BlstmMode::ParallelSum]
            .into_iter()
            .map(|mode| s.spawn(move || learn(mode).map_err(|e| e.to_string())))
            .collect();

        let mut results = Vec::new();
        let (o, t) = timed(parameter_audit);
        report(&mut results, 1, "parameter audit", t, o);

        let (grads, t) = timed(GradSummary::run);
        let mut o = grads.outcome();
        o.pass &= t <= Duration::from_secs(120);
        report(&mut results, 2, "gradient checks", t, o);

        let (o, t) = timed(masking_statistics);
        let mut o = o.unwrap_or_else(Outcome::error);
        o.pass &= t <= Duration::from_secs(60);
        report(&mut results, 3, "masking statistics", t, o);

        let (o, t) = timed(ablation_identity);
        report(
            &mut results,
            4,
            "ablation identity",
            t,
            o.unwrap_or_else(Outcome::error),
        );

        let learning: LearningResults = handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err("training thread panicked".into()))
            })
            .collect();
        let wall = learning
            .iter()
            .flatten()
            .map(|l| l.elapsed)
            .max()
            .unwrap_or_default();
        report(
            &mut results,
            5,
            "learnability",
            wall,
            learnability_outcome(&learning),
        );

        let (o, t) = timed(finetuning_heads);
        report(&mut results, 6, "fine-tuning heads", t, o);

        let (o, t) = timed(|| variant_parity(&grads, &learning));
        report(
            &mut results,
            7,
            "variant parity",
            t,
            o.unwrap_or_else(Outcome::error),
        );

        let (o, t) = timed(determinism);
        report(
            &mut results,
            8,
            "determinism and resume",
            t,
            o.unwrap_or_else(Outcome::error),
        );
        (learning, results)
    });
    drop(learning);
    let passed = results.iter().filter(|&&p| p).count();
    results.retain(|&p| !p);
    println!("{passed}/{} criteria passed", passed + results.len());
    if results.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
