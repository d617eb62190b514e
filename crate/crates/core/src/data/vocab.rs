use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{NUM_SPECIAL, SPECIAL_TOKENS, UNK};
use crate::{Error, Result};

/// Prefix marking a piece that continues a word.
pub const CONTINUATION: &str = "##";

const MAX_WORD_CHARS: usize = 100;

/// One wordpiece: its id and whether it begins a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub id: usize,
    pub word_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// The first tokens must be the reserved specials in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(Error::Data(format!("vocab must start with {SPECIAL_TOKENS:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "invalid vocab token {t:?} at line {}",
                    i + 1
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// False for `##` continuation pieces.
    pub fn is_word_start(&self, id: usize) -> bool {
        !self.tokens[id].starts_with(CONTINUATION)
    }

    /// Frequency-based induction: specials, then every character seen (as a
    /// word-initial and a continuation piece), then whole words by descending
    /// frequency until `max_size` tokens.
    pub fn induce<'a>(sentences: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        let mut words: HashMap<String, usize> = HashMap::new();
        let mut chars: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for w in basic_split(s) {
                for (i, c) in w.chars().enumerate() {
                    let piece = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    *chars.entry(piece).or_default() += 1;
                }
                *words.entry(w).or_default() += 1;
            }
        }
        let by_freq = |m: HashMap<String, usize>| {
            let mut v: Vec<(String, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.into_iter().map(|(t, _)| t)
        };
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for t in by_freq(chars).chain(by_freq(words)) {
            if tokens.len() >= max_size {
                break;
            }
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
        Self::from_tokens(tokens)
    }

    /// Greedy longest-match-first wordpiece segmentation of each word. A word
    /// that cannot be fully segmented becomes a single `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<Piece> {
        let mut out = Vec::new();
        for word in basic_split(text) {
            self.tokenize_word(&word, &mut out);
        }
        out
    }

    fn tokenize_word(&self, word: &str, out: &mut Vec<Piece>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(Piece {
                id: UNK,
                word_start: true,
            });
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            let Some((id, end)) = found else {
                out.push(Piece {
                    id: UNK,
                    word_start: true,
                });
                return;
            };
            pieces.push(Piece {
                id,
                word_start: start == 0,
            });
            start = end;
        }
        out.extend(pieces);
    }
}

/// Lowercases, splits on whitespace, and splits ASCII punctuation into its
/// own words.
fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for raw in text.split_whitespace() {
        let mut cur = String::new();
        for c in raw.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}
