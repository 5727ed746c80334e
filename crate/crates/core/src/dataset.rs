//! Line-oriented molecule datasets: `SMILES<TAB>property`, property optional,
//! `#` comment lines and blank lines ignored.

use std::fs;
use std::io;
use std::path::Path;

use crate::chemgraph::{AtomVocabulary, MolecularGraph};
use crate::smiles::parse_smiles;

#[derive(Debug, Clone)]
pub struct Record {
    /// 1-based line number in the source.
    pub line: usize,
    pub smiles: String,
    pub graph: MolecularGraph,
    pub property: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub failures: Vec<ParseFailure>,
}

impl Dataset {
    pub fn parse(text: &str, vocab: &AtomVocabulary) -> Self {
        let mut out = Dataset::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let smiles = fields.next().unwrap_or("").trim();
            let property = match fields.next().map(str::trim).filter(|s| !s.is_empty()) {
                None => None,
                Some(p) => match p.parse::<f64>() {
                    Ok(v) if v.is_finite() => Some(v),
                    _ => {
                        out.failures.push(ParseFailure {
                            line: i + 1,
                            text: line.to_string(),
                            reason: format!("property `{p}` is not a finite number"),
                        });
                        continue;
                    }
                },
            };
            match parse_smiles(smiles, vocab) {
                Ok(graph) => out.records.push(Record {
                    line: i + 1,
                    smiles: smiles.to_string(),
                    graph,
                    property,
                }),
                Err(e) => out.failures.push(ParseFailure {
                    line: i + 1,
                    text: line.to_string(),
                    reason: e.to_string(),
                }),
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>, vocab: &AtomVocabulary) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?, vocab))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn graphs(&self) -> impl Iterator<Item = &MolecularGraph> {
        self.records.iter().map(|r| &r.graph)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            failures: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_failures_and_reads_properties() {
        let text = "# header\nC\t0.5\nCCO\n\nC=O)\nCC\tabc\n";
        let d = Dataset::parse(text, &AtomVocabulary::qm9());
        assert_eq!(d.len(), 2);
        assert_eq!(d.records[0].property, Some(0.5));
        assert_eq!(d.records[1].property, None);
        assert_eq!(d.records[1].line, 3);
        assert_eq!(d.failures.len(), 2);
        assert_eq!(d.failures[0].line, 5);
    }
}
