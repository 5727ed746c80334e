use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::util::fnv1a64;

#[derive(Debug, Error)]
pub enum VocabularyError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate atom symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("atom `{symbol}` has invalid valence {valence}")]
    InvalidValence { symbol: String, valence: u32 },
    #[error("reading vocabulary: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomType {
    pub symbol: String,
    pub valence: u8,
}

/// Ordered atom types; the position of a type is its one-hot index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomVocabulary {
    types: Vec<AtomType>,
    max_valence: u8,
}

impl AtomVocabulary {
    pub fn new(types: Vec<AtomType>) -> Result<Self, VocabularyError> {
        if types.is_empty() {
            return Err(VocabularyError::Empty);
        }
        for (i, t) in types.iter().enumerate() {
            if t.valence == 0 || t.valence > 8 {
                return Err(VocabularyError::InvalidValence {
                    symbol: t.symbol.clone(),
                    valence: t.valence as u32,
                });
            }
            if types[..i].iter().any(|o| o.symbol == t.symbol) {
                return Err(VocabularyError::DuplicateSymbol(t.symbol.clone()));
            }
        }
        let max_valence = types.iter().map(|t| t.valence).max().unwrap();
        Ok(Self { types, max_valence })
    }

    fn from_pairs(pairs: &[(&str, u8)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(symbol, valence)| AtomType {
                    symbol: symbol.to_string(),
                    valence,
                })
                .collect(),
        )
        .expect("built-in vocabulary is valid")
    }

    /// C, N, O, F.
    pub fn qm9() -> Self {
        Self::from_pairs(&[("C", 4), ("N", 3), ("O", 2), ("F", 1)])
    }

    /// Nine neutral drug-like element types.
    pub fn zinc() -> Self {
        Self::from_pairs(&[
            ("C", 4),
            ("N", 3),
            ("O", 2),
            ("F", 1),
            ("S", 2),
            ("Cl", 1),
            ("Br", 1),
            ("I", 1),
            ("P", 3),
        ])
    }

    /// Parses `symbol valence` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, VocabularyError> {
        let mut types = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let symbol = fields.next().unwrap();
            let valence = fields
                .next()
                .ok_or_else(|| VocabularyError::Parse {
                    line: n + 1,
                    message: "missing valence".into(),
                })?
                .parse::<u32>()
                .map_err(|e| VocabularyError::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            if fields.next().is_some() {
                return Err(VocabularyError::Parse {
                    line: n + 1,
                    message: "trailing fields".into(),
                });
            }
            if valence == 0 || valence > 8 {
                return Err(VocabularyError::InvalidValence {
                    symbol: symbol.to_string(),
                    valence,
                });
            }
            types.push(AtomType {
                symbol: symbol.to_string(),
                valence: valence as u8,
            });
        }
        Self::new(types)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabularyError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn types(&self) -> &[AtomType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Largest valence in the vocabulary (ν).
    pub fn max_valence(&self) -> usize {
        self.max_valence as usize
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.types.iter().position(|t| t.symbol == symbol)
    }

    pub fn valence(&self, kind: usize) -> u8 {
        self.types[kind].valence
    }

    pub fn symbol(&self, kind: usize) -> &str {
        &self.types[kind].symbol
    }

    /// Stable content hash used to match checkpoints against vocabularies.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_string().as_bytes()))
    }
}

impl fmt::Display for AtomVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.types {
            writeln!(f, "{} {}", t.symbol, t.valence)?;
        }
        Ok(())
    }
}
