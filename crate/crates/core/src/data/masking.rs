//! Input formatting and whole-word masking.
//!
//! Serialized [`PretrainExample`] records are one line each, six
//! tab-separated fields in this order:
//!
//! ```text
//! token_ids  segment_ids  mlm_positions  mlm_labels  nsp_label  len
//! ```
//!
//! List fields are space-separated decimal integers.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{is_special, Piece, CLS, MASK, NUM_SPECIAL, SEP};
use crate::{Error, Result};

/// `[CLS] x1 [SEP] x2 [SEP]` before masking, with word-boundary flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormattedPair {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub word_start: Vec<bool>,
    pub nsp_label: usize,
}

/// Smallest length that holds the three specials plus one token per segment.
const MIN_PAIR_LEN: usize = 5;

/// Formats a pair, trimming the tail of `b` and then of `a` (each keeps at
/// least one piece) until it fits in `max_len`.
pub fn format_pair(a: &[Piece], b: &[Piece], nsp_label: usize, max_len: usize) -> Result<FormattedPair> {
    if max_len < MIN_PAIR_LEN {
        return Err(Error::Config(format!(
            "max_len {max_len} below minimum {MIN_PAIR_LEN}"
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("cannot format a pair with an empty segment".into()));
    }
    let budget = max_len - 3;
    let mut la = a.len();
    let mut lb = b.len();
    while la + lb > budget {
        if lb > 1 {
            lb -= 1;
        } else {
            la -= 1;
        }
    }
    let n = la + lb + 3;
    let mut token_ids = Vec::with_capacity(n);
    let mut segment_ids = Vec::with_capacity(n);
    let mut word_start = Vec::with_capacity(n);
    let mut push = |id: usize, seg: usize, ws: bool| {
        token_ids.push(id);
        segment_ids.push(seg);
        word_start.push(ws);
    };
    push(CLS, 0, true);
    a[..la].iter().for_each(|p| push(p.id, 0, p.word_start));
    push(SEP, 0, true);
    b[..lb].iter().for_each(|p| push(p.id, 1, p.word_start));
    push(SEP, 1, true);
    Ok(FormattedPair {
        token_ids,
        segment_ids,
        word_start,
        nsp_label,
    })
}

/// What happened to a selected word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Treatment {
    Mask,
    Random,
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    /// Target fraction of maskable positions to select.
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    /// Draw the replacement treatment per piece instead of once per word.
    pub per_piece: bool,
    /// Replacement tokens are drawn from `[NUM_SPECIAL, vocab_size)`.
    pub vocab_size: usize,
}

impl MaskConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            per_piece: false,
            vocab_size,
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> Treatment {
        let r: f64 = rng.random();
        if r < self.mask_prob {
            Treatment::Mask
        } else if r < self.mask_prob + self.random_prob {
            Treatment::Random
        } else {
            Treatment::Unchanged
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainExample {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// Ascending positions that carry an MLM target.
    pub mlm_positions: Vec<usize>,
    /// Original ids at `mlm_positions`.
    pub mlm_labels: Vec<usize>,
    pub nsp_label: usize,
}

impl PretrainExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// The token sequence before masking.
    pub fn demasked(&self) -> Vec<usize> {
        let mut ids = self.token_ids.clone();
        for (&p, &l) in self.mlm_positions.iter().zip(&self.mlm_labels) {
            ids[p] = l;
        }
        ids
    }

    /// Shortens to `max_len` by trimming the tail of the second segment, then
    /// of the first, keeping both `[SEP]`s. MLM targets on removed positions
    /// are dropped and the remaining positions are renumbered.
    pub fn truncated(&self, max_len: usize) -> Result<Self> {
        if self.len() <= max_len {
            return Ok(self.clone());
        }
        if max_len < MIN_PAIR_LEN {
            return Err(Error::Config(format!(
                "max_len {max_len} below minimum {MIN_PAIR_LEN}"
            )));
        }
        let seps: Vec<usize> = (0..self.len()).filter(|&i| self.token_ids[i] == SEP).collect();
        let first_sep = *seps
            .first()
            .ok_or_else(|| Error::Data("example has no [SEP]".into()))?;
        let last = self.len() - 1;
        let (mut la, mut lb) = (first_sep - 1, last - first_sep - 1);
        while la + lb + 3 > max_len {
            if lb > 1 {
                lb -= 1;
            } else if la > 1 {
                la -= 1;
            } else {
                break;
            }
        }
        let keep: Vec<usize> = std::iter::once(0)
            .chain(1..=la)
            .chain(std::iter::once(first_sep))
            .chain(first_sep + 1..=first_sep + lb)
            .chain(std::iter::once(last))
            .collect();
        let mut new_pos = vec![usize::MAX; self.len()];
        for (n, &o) in keep.iter().enumerate() {
            new_pos[o] = n;
        }
        let (mlm_positions, mlm_labels) = self
            .mlm_positions
            .iter()
            .zip(&self.mlm_labels)
            .filter(|(&p, _)| new_pos[p] != usize::MAX)
            .map(|(&p, &l)| (new_pos[p], l))
            .unzip();
        Ok(Self {
            token_ids: keep.iter().map(|&i| self.token_ids[i]).collect(),
            segment_ids: keep.iter().map(|&i| self.segment_ids[i]).collect(),
            mlm_positions,
            mlm_labels,
            nsp_label: self.nsp_label,
        })
    }

    pub fn to_record(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            list(&self.token_ids),
            list(&self.segment_ids),
            list(&self.mlm_positions),
            list(&self.mlm_labels),
            self.nsp_label,
            self.len()
        )
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches(['\n', '\r']).split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Data(format!("expected 6 fields, got {}", fields.len())));
        }
        let list = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|e| Error::Data(format!("bad integer {t:?}: {e}")))
                })
                .collect()
        };
        let num = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|e| Error::Data(format!("bad integer {s:?}: {e}")))
        };
        let ex = Self {
            token_ids: list(fields[0])?,
            segment_ids: list(fields[1])?,
            mlm_positions: list(fields[2])?,
            mlm_labels: list(fields[3])?,
            nsp_label: num(fields[4])?,
        };
        if num(fields[5])? != ex.len() {
            return Err(Error::Data("length field disagrees with token count".into()));
        }
        validate_structure(&ex)?;
        Ok(ex)
    }
}

/// Checks the `[CLS] x1 [SEP] x2 [SEP]` layout, segment ids, and that every
/// MLM target sits on a non-special original token.
pub fn validate_structure(ex: &PretrainExample) -> Result<()> {
    let bad = |msg: String| Err(Error::Data(msg));
    let n = ex.len();
    if n < MIN_PAIR_LEN || ex.segment_ids.len() != n {
        return bad(format!(
            "malformed lengths: {n} tokens, {} segments",
            ex.segment_ids.len()
        ));
    }
    let original = ex.demasked();
    let seps: Vec<usize> = (0..n).filter(|&i| original[i] == SEP).collect();
    if original[0] != CLS || seps.len() != 2 || seps[1] != n - 1 || seps[0] < 2 || seps[0] + 2 > seps[1] {
        return bad("layout is not [CLS] x1 [SEP] x2 [SEP]".into());
    }
    if (1..n).any(|i| original[i] == CLS) {
        return bad("[CLS] inside sequence".into());
    }
    for i in 0..n {
        let want = usize::from(i > seps[0]);
        if ex.segment_ids[i] != want {
            return bad(format!(
                "segment id {} at {i}, expected {want}",
                ex.segment_ids[i]
            ));
        }
    }
    if ex.mlm_positions.len() != ex.mlm_labels.len() {
        return bad("MLM positions and labels differ in length".into());
    }
    if ex.mlm_positions.windows(2).any(|w| w[0] >= w[1]) {
        return bad("MLM positions not strictly ascending".into());
    }
    for &p in &ex.mlm_positions {
        if p >= n || is_special(original[p]) {
            return bad(format!("MLM target at {p} is not a maskable token"));
        }
    }
    Ok(())
}

/// Selects whole words until about `rate` of the maskable positions are
/// covered, then replaces them (80% `[MASK]`, 10% random token, 10% kept).
///
/// The selection target is `rate·n` stochastically rounded to an integer
/// (at least one), and words are taken from a shuffled order until the
/// target is reached, so the last word may overshoot. Returns `None` when
/// the pair has no maskable token.
pub fn whole_word_mask(
    pair: &FormattedPair,
    cfg: &MaskConfig,
    rng: &mut impl Rng,
) -> Option<PretrainExample> {
    let ids = &pair.token_ids;
    let mut words: Vec<Vec<usize>> = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if is_special(id) {
            continue;
        }
        let continues = !pair.word_start[i] && i > 0 && !is_special(ids[i - 1]);
        match words.last_mut() {
            Some(w) if continues => w.push(i),
            _ => words.push(vec![i]),
        }
    }
    let maskable: usize = words.iter().map(Vec::len).sum();
    if maskable == 0 {
        return None;
    }
    let exact = cfg.rate * maskable as f64;
    let mut target = exact.floor() as usize;
    if rng.random::<f64>() < exact - exact.floor() {
        target += 1;
    }
    let target = target.max(1);

    words.shuffle(rng);
    let mut selected: Vec<&Vec<usize>> = Vec::new();
    let mut covered = 0;
    for w in &words {
        if covered >= target {
            break;
        }
        covered += w.len();
        selected.push(w);
    }
    selected.sort_by_key(|w| w[0]);

    let mut token_ids = ids.clone();
    let mut mlm_positions = Vec::with_capacity(covered);
    let mut mlm_labels = Vec::with_capacity(covered);
    for w in selected {
        let word_draw = cfg.draw(rng);
        for &p in w {
            let t = if cfg.per_piece { cfg.draw(rng) } else { word_draw };
            mlm_positions.push(p);
            mlm_labels.push(ids[p]);
            token_ids[p] = match t {
                Treatment::Mask => MASK,
                Treatment::Random => rng.random_range(NUM_SPECIAL..cfg.vocab_size),
                Treatment::Unchanged => ids[p],
            };
        }
    }
    Some(PretrainExample {
        token_ids,
        segment_ids: pair.segment_ids.clone(),
        mlm_positions,
        mlm_labels,
        nsp_label: pair.nsp_label,
    })
}
