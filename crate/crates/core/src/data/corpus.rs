use std::fs;
use std::path::Path;

use super::{Piece, Vocab};
use crate::{Error, Result};

/// Documents of sentences, in source order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
}

impl Corpus {
    /// Parses blank-line-separated documents with one sentence per line.
    pub fn parse(text: &str) -> Self {
        let mut documents = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                if !current.is_empty() {
                    documents.push(std::mem::take(&mut current));
                }
            } else {
                current.push(line.to_string());
            }
        }
        if !current.is_empty() {
            documents.push(current);
        }
        Self { documents }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read corpus {}: {e}", path.display())))?;
        Ok(Self::parse(&text))
    }

    pub fn to_text(&self) -> String {
        let docs: Vec<String> = self.documents.iter().map(|d| d.join("\n")).collect();
        let mut text = docs.join("\n\n");
        text.push('\n');
        text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    pub fn tokenize(&self, vocab: &Vocab) -> TokenizedCorpus {
        TokenizedCorpus {
            documents: self
                .documents
                .iter()
                .map(|d| d.iter().map(|s| vocab.tokenize(s)).collect())
                .collect(),
        }
    }
}

/// Corpus with every sentence segmented into wordpieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    pub documents: Vec<Vec<Vec<Piece>>>,
}
