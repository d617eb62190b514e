use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use trans_blstm::data::{
    format_pair, gen_synthetic_corpus, is_special, make_batch, sample_sentence_pair, validate_structure,
    whole_word_mask, BigramOracle, MaskConfig, Piece, PretrainExample, SyntheticSpec, Vocab, CLS, IS_NEXT,
    MASK, NOT_NEXT, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK,
};
use trans_blstm::params::Rng;
use trans_blstm::train::sample_examples;

fn vocab(extra: &[&str]) -> Vocab {
    Vocab::from_tokens(SPECIAL_TOKENS.iter().copied().chain(extra.iter().copied())).unwrap()
}

/// Reference segmentation: at each offset, scan the whole vocabulary for the
/// longest token matching there.
fn naive_segment(v: &Vocab, word: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut rest = word;
    let mut first = true;
    while !rest.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for (id, tok) in v.tokens().iter().enumerate().skip(NUM_SPECIAL) {
            let body = if first {
                if tok.starts_with("##") {
                    continue;
                }
                tok.as_str()
            } else {
                match tok.strip_prefix("##") {
                    Some(b) => b,
                    None => continue,
                }
            };
            if !body.is_empty() && rest.starts_with(body) && best.is_none_or(|(_, n)| body.len() > n) {
                best = Some((id, body.len()));
            }
        }
        let Some((id, n)) = best else {
            return vec![Piece {
                id: UNK,
                word_start: true,
            }];
        };
        out.push(Piece {
            id,
            word_start: first,
        });
        rest = &rest[n..];
        first = false;
    }
    out
}

#[test]
fn tokenizer_matches_naive_longest_match() {
    let v = vocab(&[
        "un", "unaff", "##aff", "##able", "##a", "##b", "##le", "a", "b", "ab", "##ffable",
    ]);
    let words = [
        "unaffable",
        "unable",
        "ab",
        "aab",
        "abab",
        "un",
        "xyz",
        "unx",
        "b",
        "ba",
    ];
    for w in words {
        assert_eq!(v.tokenize(w), naive_segment(&v, w), "word {w}");
    }
    let text = words.join(" ");
    let want: Vec<Piece> = words.iter().flat_map(|w| naive_segment(&v, w)).collect();
    assert_eq!(v.tokenize(&text), want);
}

#[test]
fn tokenizer_handles_crafted_vocabulary() {
    let v = vocab(&["hello", "world", "##s", "!"]);
    let ids = |t: &str| v.tokenize(t).iter().map(|p| p.id).collect::<Vec<_>>();
    assert_eq!(ids("Hello worlds!"), vec![5, 6, 7, 8]);
    assert_eq!(ids("hellos"), vec![5, 7]);
    assert_eq!(ids("helloworld"), vec![UNK]);
    assert!(v.tokenize("").is_empty());
    let starts: Vec<bool> = v.tokenize("hellos world").iter().map(|p| p.word_start).collect();
    assert_eq!(starts, vec![true, false, true]);
}

proptest! {
    #[test]
    fn tokenizer_agrees_with_reference_on_random_words(word in "[abn]{1,8}") {
        let v = vocab(&["a", "b", "ab", "ban", "##a", "##b", "##n", "##an", "##ban"]);
        prop_assert_eq!(v.tokenize(&word), naive_segment(&v, &word));
    }
}

fn toy_docs(n_docs: usize, per_doc: usize) -> Vec<Vec<usize>> {
    (0..n_docs)
        .map(|d| (0..per_doc).map(|s| d * 100 + s).collect())
        .collect()
}

#[test]
fn sentence_pairs_are_balanced_and_well_formed() {
    let docs = toy_docs(20, 5);
    let mut rng = Rng::seed_from_u64(0);
    let n = 10_000;
    let mut next = 0;
    for _ in 0..n {
        let p = sample_sentence_pair(&docs, &mut rng).unwrap();
        if p.nsp_label == IS_NEXT {
            next += 1;
            assert_eq!(p.a.0, p.b.0);
            assert_eq!(p.a.1 + 1, p.b.1);
        } else {
            assert_eq!(p.nsp_label, NOT_NEXT);
            assert_ne!(p.a.0, p.b.0);
        }
    }
    let frac = next as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 0.02, "is-next fraction {frac}");
    assert!(sample_sentence_pair(&toy_docs(1, 5), &mut rng).is_err());
    assert!(sample_sentence_pair(&toy_docs(3, 1), &mut rng).is_err());
}

fn pieces(ids: &[(usize, bool)]) -> Vec<Piece> {
    ids.iter()
        .map(|&(id, word_start)| Piece { id, word_start })
        .collect()
}

#[test]
fn formatting_lays_out_segments_and_trims_b_first() {
    let a = pieces(&[(10, true), (11, false), (12, true)]);
    let b = pieces(&[(20, true), (21, true), (22, false), (23, true)]);
    let full = format_pair(&a, &b, IS_NEXT, 64).unwrap();
    assert_eq!(full.token_ids, vec![CLS, 10, 11, 12, SEP, 20, 21, 22, 23, SEP]);
    assert_eq!(full.segment_ids, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    let trimmed = format_pair(&a, &b, IS_NEXT, 7).unwrap();
    assert_eq!(trimmed.token_ids, vec![CLS, 10, 11, 12, SEP, 20, SEP]);
    let tight = format_pair(&a, &b, IS_NEXT, 5).unwrap();
    assert_eq!(tight.token_ids, vec![CLS, 10, SEP, 20, SEP]);
    assert!(format_pair(&a, &b, IS_NEXT, 4).is_err());
    assert!(format_pair(&[], &b, IS_NEXT, 10).is_err());
}

#[test]
fn whole_words_are_masked_together_and_specials_never() {
    // One three-piece word between single-piece words.
    let a = pieces(&[(10, true), (11, true), (12, false), (13, false), (14, true)]);
    let b = pieces(&[(15, true), (16, true)]);
    let pair = format_pair(&a, &b, NOT_NEXT, 32).unwrap();
    let mut rng = Rng::seed_from_u64(1);
    let mut saw_whole = false;
    for per_piece in [false, true] {
        let cfg = MaskConfig {
            per_piece,
            ..MaskConfig::new(50)
        };
        for _ in 0..500 {
            let ex = whole_word_mask(&pair, &cfg, &mut rng).unwrap();
            validate_structure(&ex).unwrap();
            let sel: HashSet<usize> = ex.mlm_positions.iter().copied().collect();
            let word = [2, 3, 4];
            let hits = word.iter().filter(|p| sel.contains(p)).count();
            assert!(hits == 0 || hits == 3, "partial word {:?}", ex.mlm_positions);
            saw_whole |= hits == 3;
            for &p in &ex.mlm_positions {
                assert!(!is_special(pair.token_ids[p]));
            }
            assert_eq!(ex.demasked(), pair.token_ids);
            assert!(!ex.mlm_positions.is_empty());
            if !per_piece && hits == 3 {
                // The word receives a single treatment.
                // Random replacements never draw [MASK], so a split treatment would show here.
                let masked = word.iter().filter(|&&p| ex.token_ids[p] == MASK).count();
                assert!(masked == 0 || masked == 3);
            }
        }
    }
    assert!(saw_whole);
}

#[test]
fn pairs_without_maskable_tokens_yield_nothing() {
    let a = pieces(&[(SEP, true)]);
    let b = pieces(&[(CLS, true)]);
    let pair = format_pair(&a, &b, IS_NEXT, 10).unwrap();
    assert!(whole_word_mask(&pair, &MaskConfig::new(20), &mut Rng::seed_from_u64(0)).is_none());
}

#[test]
fn batches_pad_and_flatten_positions() {
    let short = PretrainExample {
        token_ids: vec![CLS, 10, SEP, 11, SEP],
        segment_ids: vec![0, 0, 0, 1, 1],
        mlm_positions: vec![1],
        mlm_labels: vec![12],
        nsp_label: IS_NEXT,
    };
    let long = PretrainExample {
        token_ids: vec![CLS, 10, MASK, SEP, 11, 13, SEP],
        segment_ids: vec![0, 0, 0, 0, 1, 1, 1],
        mlm_positions: vec![2, 5],
        mlm_labels: vec![14, 13],
        nsp_label: NOT_NEXT,
    };
    let b = make_batch(&[short, long], 16).unwrap();
    assert_eq!((b.batch, b.seq), (2, 7));
    assert_eq!(&b.token_ids[..7], &[CLS, 10, SEP, 11, SEP, PAD, PAD]);
    assert_eq!(&b.valid[..7], &[true, true, true, true, true, false, false]);
    assert_eq!(b.mlm_positions, vec![1, 9, 12]);
    assert_eq!(b.mlm_labels, vec![12, 14, 13]);
    assert_eq!(b.nsp_labels, vec![IS_NEXT, NOT_NEXT]);
    assert_eq!(b.lengths(), vec![5, 7]);
    assert!(make_batch(&[], 16).is_err());
}

fn synthetic_examples(
    n: usize,
    max_len: usize,
    seed: u64,
) -> (Vec<PretrainExample>, trans_blstm::data::SyntheticCorpus) {
    let syn = gen_synthetic_corpus(&SyntheticSpec::new(100), 0).unwrap();
    let corpus = syn.corpus.tokenize(&syn.vocab);
    let mut rng = Rng::seed_from_u64(seed);
    let ex = sample_examples(&corpus, n, max_len, &MaskConfig::new(syn.vocab.len()), &mut rng).unwrap();
    (ex, syn)
}

#[test]
fn truncated_samples_keep_their_structure() {
    let (examples, _) = synthetic_examples(1_000, 64, 3);
    let mut rng = Rng::seed_from_u64(4);
    for ex in &examples {
        validate_structure(ex).unwrap();
        let max_len = rng.random_range(5..=ex.len().max(5));
        let t = ex.truncated(max_len).unwrap();
        assert!(t.len() <= max_len);
        validate_structure(&t).unwrap();
        assert_eq!(t.nsp_label, ex.nsp_label);
    }
}

#[test]
fn validator_rejects_broken_layouts() {
    let good = PretrainExample {
        token_ids: vec![CLS, MASK, SEP, 11, SEP],
        segment_ids: vec![0, 0, 0, 1, 1],
        mlm_positions: vec![1],
        mlm_labels: vec![10],
        nsp_label: IS_NEXT,
    };
    validate_structure(&good).unwrap();
    let broken = [
        PretrainExample {
            segment_ids: vec![0, 0, 1, 1, 1],
            ..good.clone()
        },
        PretrainExample {
            token_ids: vec![SEP, MASK, SEP, 11, SEP],
            ..good.clone()
        },
        PretrainExample {
            mlm_positions: vec![0],
            ..good.clone()
        },
        PretrainExample {
            mlm_positions: vec![1, 1],
            mlm_labels: vec![10, 10],
            ..good.clone()
        },
        PretrainExample {
            token_ids: vec![CLS, MASK, 9, 11, SEP],
            ..good.clone()
        },
    ];
    for b in &broken {
        assert!(validate_structure(b).is_err(), "{b:?}");
    }
}

#[test]
fn synthetic_corpus_is_deterministic_and_covers_its_vocabulary() {
    let spec = SyntheticSpec::new(100);
    let a = gen_synthetic_corpus(&spec, 7).unwrap();
    let b = gen_synthetic_corpus(&spec, 7).unwrap();
    assert_eq!(a.corpus.to_text(), b.corpus.to_text());
    assert_eq!(a.vocab.tokens(), b.vocab.tokens());
    assert_ne!(
        a.corpus.to_text(),
        gen_synthetic_corpus(&spec, 8).unwrap().corpus.to_text()
    );
    assert_eq!(a.vocab.len(), 100);
    let tokenized = a.corpus.tokenize(&a.vocab);
    let used: HashSet<usize> = tokenized
        .documents
        .iter()
        .flatten()
        .flatten()
        .map(|p| p.id)
        .collect();
    assert!(!used.contains(&UNK));
    for id in NUM_SPECIAL..a.vocab.len() {
        assert!(used.contains(&id), "token {:?} never used", a.vocab.token(id));
    }
}

#[test]
fn bigram_oracle_beats_ninety_percent() {
    let (examples, syn) = synthetic_examples(2_000, 64, 5);
    let acc = BigramOracle::new(&syn.successor).accuracy(&examples);
    assert!(acc > 0.9, "oracle accuracy {acc}");
}

proptest! {
    #[test]
    fn records_round_trip(seed in 0u64..500) {
        let (examples, _) = synthetic_examples(4, 48, seed);
        for ex in examples {
            let line = ex.to_record();
            prop_assert_eq!(line.split('\t').count(), 6);
            prop_assert_eq!(PretrainExample::from_record(&line).unwrap(), ex);
        }
    }

    #[test]
    fn masking_is_a_relabelling_of_the_pair(seed in 0u64..10_000, n_a in 1usize..20, n_b in 1usize..20) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut make = |n: usize| -> Vec<Piece> {
            (0..n).map(|i| Piece { id: rng.random_range(NUM_SPECIAL..60), word_start: i == 0 || rng.random_bool(0.7) }).collect()
        };
        let (a, b) = (make(n_a), make(n_b));
        let pair = format_pair(&a, &b, IS_NEXT, 64).unwrap();
        let ex = whole_word_mask(&pair, &MaskConfig::new(60), &mut rng).unwrap();
        prop_assert_eq!(ex.demasked(), pair.token_ids.clone());
        prop_assert!(validate_structure(&ex).is_ok());
        let maskable = n_a + n_b;
        prop_assert!(!ex.mlm_positions.is_empty() && ex.mlm_positions.len() <= maskable);
    }
}
