//! Template corpus with a learnable token-level regularity.
//!
//! Content tokens form one fixed cycle. Text walks that cycle: each token is
//! followed by its cycle successor with probability `successor_prob`, and
//! otherwise jumps to the next not-yet-emitted token (or a random one once
//! all have appeared). Document starts are chosen the same way, so every
//! content token appears once the corpus is longer than the vocabulary.
//!
//! About `continuation_fraction` of the content tokens are `##` pieces. Each
//! belongs to exactly one multi-piece word, so the cycle visits a word's
//! pieces consecutively and the rendered text tokenizes back to the same
//! ids.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::vocab::CONTINUATION;
use super::{is_special, Corpus, PretrainExample, Vocab, NUM_SPECIAL, SEP, SPECIAL_TOKENS};
use crate::params::Rng as ChaCha;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub num_docs: usize,
    pub sentences_per_doc: (usize, usize),
    pub words_per_sentence: (usize, usize),
    pub successor_prob: f64,
    pub continuation_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            num_docs: 400,
            sentences_per_doc: (2, 6),
            words_per_sentence: (4, 12),
            successor_prob: 0.97,
            continuation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub vocab: Vocab,
    /// Piece ids of each word.
    pub words: Vec<Vec<usize>>,
    /// Cycle successor of every content token (`successor[id]`; specials map
    /// to themselves).
    pub successor: Vec<usize>,
}

/// Fixed-width lowercase name for `i`, so no name is a prefix of another.
fn letters(mut i: usize, width: usize) -> String {
    let mut s = vec![b'a'; width];
    for slot in s.iter_mut().rev() {
        *slot = b'a' + (i % 26) as u8;
        i /= 26;
    }
    String::from_utf8(s).expect("ascii")
}

pub fn gen_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    let content = spec.vocab_size.saturating_sub(NUM_SPECIAL);
    if content < 4 {
        return Err(Error::Config(format!(
            "synthetic vocab {} is too small",
            spec.vocab_size
        )));
    }
    let (smin, smax) = spec.sentences_per_doc;
    let (wmin, wmax) = spec.words_per_sentence;
    if spec.num_docs < 2 || smin < 1 || smin > smax || wmin < 1 || wmin > wmax {
        return Err(Error::Config("synthetic corpus ranges are inconsistent".into()));
    }
    let mut rng = ChaCha::seed_from_u64(seed);
    let num_cont = ((content as f64 * spec.continuation_fraction).round() as usize).min(content / 2);
    let num_heads = content - num_cont;

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend((0..num_heads).map(|i| format!("w{i}")));
    let mut width = 2;
    while 26usize.pow(width as u32) < num_cont {
        width += 1;
    }
    tokens.extend((0..num_cont).map(|i| format!("{CONTINUATION}{}", letters(i, width))));
    let vocab = Vocab::from_tokens(tokens)?;

    // Attach continuation pieces to randomly chosen heads, alternating one
    // and two pieces per word so both shapes occur.
    let mut heads: Vec<usize> = (NUM_SPECIAL..NUM_SPECIAL + num_heads).collect();
    heads.shuffle(&mut rng);
    let mut words: Vec<Vec<usize>> = Vec::with_capacity(num_heads);
    let mut next_cont = NUM_SPECIAL + num_heads;
    let end_cont = NUM_SPECIAL + content;
    for (k, &h) in heads.iter().enumerate() {
        let mut w = vec![h];
        let extra = if k % 2 == 0 { 1 } else { 2 };
        for _ in 0..extra {
            if next_cont < end_cont {
                w.push(next_cont);
                next_cont += 1;
            }
        }
        words.push(w);
    }
    // Shuffled word order defines the cycle.
    words.shuffle(&mut rng);
    let mut successor: Vec<usize> = (0..spec.vocab_size).collect();
    let flat: Vec<usize> = words.iter().flatten().copied().collect();
    for (i, &t) in flat.iter().enumerate() {
        successor[t] = flat[(i + 1) % flat.len()];
    }
    let next_word: Vec<usize> = (0..words.len()).map(|i| (i + 1) % words.len()).collect();

    let mut visited = vec![false; words.len()];
    let mut cursor = 0;
    let mut fresh = |rng: &mut ChaCha, visited: &[bool]| -> usize {
        while cursor < visited.len() && visited[cursor] {
            cursor += 1;
        }
        if cursor < visited.len() {
            cursor
        } else {
            rng.random_range(0..visited.len())
        }
    };

    let mut documents = Vec::with_capacity(spec.num_docs);
    for _ in 0..spec.num_docs {
        let mut w = fresh(&mut rng, &visited);
        let num_sent = rng.random_range(smin..=smax);
        let mut doc = Vec::with_capacity(num_sent);
        for s in 0..num_sent {
            let len = rng.random_range(wmin..=wmax);
            let mut sent = Vec::with_capacity(len);
            for i in 0..len {
                if s + i > 0 {
                    w = if rng.random_bool(spec.successor_prob) {
                        next_word[w]
                    } else {
                        fresh(&mut rng, &visited)
                    };
                }
                visited[w] = true;
                let text: String = words[w]
                    .iter()
                    .map(|&id| {
                        let t = vocab.token(id).expect("id in vocab");
                        t.strip_prefix(CONTINUATION).unwrap_or(t)
                    })
                    .collect();
                sent.push(text);
            }
            doc.push(sent.join(" "));
        }
        documents.push(doc);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus { documents },
        vocab,
        words,
        successor,
    })
}

/// Predicts each MLM target from the nearest visible token in the same
/// segment, walking the successor cycle forward (or backward when only
/// right context exists).
#[derive(Debug, Clone)]
pub struct BigramOracle {
    successor: Vec<usize>,
    predecessor: Vec<usize>,
}

impl BigramOracle {
    pub fn new(successor: &[usize]) -> Self {
        let mut predecessor: Vec<usize> = (0..successor.len()).collect();
        for (t, &s) in successor.iter().enumerate() {
            if !is_special(t) {
                predecessor[s] = t;
            }
        }
        Self {
            successor: successor.to_vec(),
            predecessor,
        }
    }

    pub fn predict(&self, ex: &PretrainExample, pos: usize) -> Option<usize> {
        let hidden: std::collections::HashSet<usize> = ex.mlm_positions.iter().copied().collect();
        let visible = |i: usize| !hidden.contains(&i) && !is_special(ex.token_ids[i]);
        let seg_start = ex.token_ids[..pos]
            .iter()
            .rposition(|&t| t == SEP)
            .map_or(1, |i| i + 1);
        let seg_end = pos
            + ex.token_ids[pos..]
                .iter()
                .position(|&t| t == SEP)
                .unwrap_or(ex.len() - pos);
        if let Some(q) = (seg_start..pos).rev().find(|&i| visible(i)) {
            let mut t = ex.token_ids[q];
            for _ in q..pos {
                t = self.successor[t];
            }
            return Some(t);
        }
        let q = (pos + 1..seg_end).find(|&i| visible(i))?;
        let mut t = ex.token_ids[q];
        for _ in pos..q {
            t = self.predecessor[t];
        }
        Some(t)
    }

    /// Fraction of MLM targets predicted exactly.
    pub fn accuracy(&self, examples: &[PretrainExample]) -> f64 {
        let (mut hits, mut total) = (0usize, 0usize);
        for ex in examples {
            for (&p, &label) in ex.mlm_positions.iter().zip(&ex.mlm_labels) {
                total += 1;
                hits += usize::from(self.predict(ex, p) == Some(label));
            }
        }
        hits as f64 / total.max(1) as f64
    }
}
