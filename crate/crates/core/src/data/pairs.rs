use rand::Rng;

use crate::{Error, Result};

/// NSP label: segment B is the sentence that follows A.
pub const IS_NEXT: usize = 0;
/// NSP label: segment B comes from a different document.
pub const NOT_NEXT: usize = 1;

/// `(document, sentence)` coordinates of a sampled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub nsp_label: usize,
}

/// With probability 1/2 returns a consecutive pair from one document;
/// otherwise B is drawn from a different document than A.
pub fn sample_sentence_pair<T>(documents: &[Vec<T>], rng: &mut impl Rng) -> Result<PairIndex> {
    let non_empty: Vec<usize> = (0..documents.len())
        .filter(|&d| !documents[d].is_empty())
        .collect();
    if non_empty.len() < 2 {
        return Err(Error::Config(
            "next-sentence sampling needs at least two non-empty documents".into(),
        ));
    }
    let multi: Vec<usize> = non_empty
        .iter()
        .copied()
        .filter(|&d| documents[d].len() >= 2)
        .collect();
    if multi.is_empty() {
        return Err(Error::Config(
            "next-sentence sampling needs a document with two or more sentences".into(),
        ));
    }
    if rng.random_bool(0.5) {
        let d = multi[rng.random_range(0..multi.len())];
        let i = rng.random_range(0..documents[d].len() - 1);
        Ok(PairIndex {
            a: (d, i),
            b: (d, i + 1),
            nsp_label: IS_NEXT,
        })
    } else {
        let da = non_empty[rng.random_range(0..non_empty.len())];
        // Uniform over the other non-empty documents.
        let mut k = rng.random_range(0..non_empty.len() - 1);
        if non_empty[k] == da {
            k = non_empty.len() - 1;
        }
        let db = non_empty[k];
        Ok(PairIndex {
            a: (da, rng.random_range(0..documents[da].len())),
            b: (db, rng.random_range(0..documents[db].len())),
            nsp_label: NOT_NEXT,
        })
    }
}
