//! Valence histograms, their compatibility order, and the empirical
//! distribution of training-set histograms used to condition atom typing.
//!
//! A histogram `a` is *compatible* with `b` when `b` dominates it in every
//! valence bucket. During generation the histogram of already-typed atoms is
//! kept compatible with a target drawn from the training distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::chemgraph::MolecularGraph;
use crate::util::sample_weighted;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistogramError {
    #[error("histogram lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("subtraction would make bucket {valence} negative")]
    Incompatible { valence: usize },
    #[error("valence {valence} outside 1..={nu}")]
    ValenceOutOfRange { valence: usize, nu: usize },
    #[error("histogram distribution is empty")]
    EmptyDistribution,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Atom counts per valence value `1..=nu`, stored at index `valence - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValenceHistogram {
    counts: Vec<u32>,
}

impl ValenceHistogram {
    pub fn zeros(nu: usize) -> Self {
        Self {
            counts: vec![0; nu],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn nu(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Count of atoms with the given valence (1-based); 0 when out of range.
    pub fn get(&self, valence: usize) -> u32 {
        if valence == 0 {
            return 0;
        }
        self.counts.get(valence - 1).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    fn same_nu(&self, other: &Self) -> Result<(), HistogramError> {
        if self.nu() == other.nu() {
            Ok(())
        } else {
            Err(HistogramError::LengthMismatch(self.nu(), other.nu()))
        }
    }

    /// Whether `self` is compatible with `other`, i.e. `other[i] >= self[i]` for all i.
    pub fn is_compatible_with(&self, other: &Self) -> Result<bool, HistogramError> {
        self.same_nu(other)?;
        Ok(self.counts.iter().zip(&other.counts).all(|(a, b)| b >= a))
    }

    /// Bucket-wise `self - used`; fails if any bucket would go negative.
    pub fn subtract(&self, used: &Self) -> Result<Self, HistogramError> {
        self.same_nu(used)?;
        let counts = self
            .counts
            .iter()
            .zip(&used.counts)
            .enumerate()
            .map(|(i, (&t, &u))| {
                t.checked_sub(u)
                    .ok_or(HistogramError::Incompatible { valence: i + 1 })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { counts })
    }

    /// Bucket-wise difference clamped at zero.
    pub fn saturating_subtract(&self, used: &Self) -> Result<Self, HistogramError> {
        self.same_nu(used)?;
        Ok(Self {
            counts: self
                .counts
                .iter()
                .zip(&used.counts)
                .map(|(&t, &u)| t.saturating_sub(u))
                .collect(),
        })
    }

    /// Copy with one more atom in bucket `valence`.
    pub fn with_valence(&self, valence: usize) -> Result<Self, HistogramError> {
        if valence == 0 || valence > self.nu() {
            return Err(HistogramError::ValenceOutOfRange {
                valence,
                nu: self.nu(),
            });
        }
        let mut out = self.clone();
        out.counts[valence - 1] += 1;
        Ok(out)
    }
}

impl fmt::Display for ValenceHistogram {
    /// Sparse `{valence:count,...}` form, e.g. `{1:6,2:1,4:2}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                if !first {
                    write!(f, ",")?;
                }
                write!(f, "{}:{}", i + 1, c)?;
                first = false;
            }
        }
        write!(f, "}}")
    }
}

/// Result of a constrained draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramDraw {
    pub histogram: ValenceHistogram,
    /// Set when no entry satisfied the constraints and the draw was unrestricted.
    pub fallback: bool,
}

/// Empirical distribution over distinct training-set histograms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramDistribution {
    nu: usize,
    entries: Vec<(ValenceHistogram, u64)>,
    total: u64,
}

impl HistogramDistribution {
    /// Builds from explicit `(histogram, weight)` pairs, merging duplicates and
    /// sorting entries lexicographically by counts.
    pub fn from_entries(
        nu: usize,
        entries: impl IntoIterator<Item = (ValenceHistogram, u64)>,
    ) -> Result<Self, HistogramError> {
        let mut merged: BTreeMap<ValenceHistogram, u64> = BTreeMap::new();
        for (h, w) in entries {
            if h.nu() != nu {
                return Err(HistogramError::LengthMismatch(nu, h.nu()));
            }
            if w > 0 {
                *merged.entry(h).or_default() += w;
            }
        }
        if merged.is_empty() {
            return Err(HistogramError::EmptyDistribution);
        }
        let entries: Vec<_> = merged.into_iter().collect();
        let total = entries.iter().map(|(_, w)| w).sum();
        Ok(Self { nu, entries, total })
    }

    /// Heavy-atom histograms of every molecule, weighted by occurrence.
    pub fn from_corpus<'a>(
        corpus: impl IntoIterator<Item = &'a MolecularGraph>,
        nu: usize,
    ) -> Result<Self, HistogramError> {
        let hists: Vec<_> = corpus
            .into_iter()
            .map(|g| (g.valence_histogram(nu, false), 1))
            .collect();
        if hists.is_empty() {
            return Err(HistogramError::EmptyCorpus);
        }
        Self::from_entries(nu, hists)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn entries(&self) -> &[(ValenceHistogram, u64)] {
        &self.entries
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Draws a reference histogram and its atom count `m = Σ α₀`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (ValenceHistogram, usize) {
        let weights: Vec<f64> = self.entries.iter().map(|(_, w)| *w as f64).collect();
        let i = sample_weighted(&weights, rng).expect("distribution has positive weight");
        let h = self.entries[i].0.clone();
        let m = h.total() as usize;
        (h, m)
    }

    /// Draws from entries `e` with `used` compatible with `e` and `Σe >= min_atoms`,
    /// proportionally to weight. Falls back to the unrestricted distribution
    /// when no entry qualifies.
    pub fn sample_compatible<R: Rng + ?Sized>(
        &self,
        used: &ValenceHistogram,
        min_atoms: usize,
        rng: &mut R,
    ) -> Result<HistogramDraw, HistogramError> {
        if used.nu() != self.nu {
            return Err(HistogramError::LengthMismatch(self.nu, used.nu()));
        }
        let restricted: Vec<f64> = self
            .entries
            .iter()
            .map(|(h, w)| {
                let ok = h.total() as usize >= min_atoms
                    && used.is_compatible_with(h).unwrap_or(false);
                if ok {
                    *w as f64
                } else {
                    0.0
                }
            })
            .collect();
        if let Some(i) = sample_weighted(&restricted, rng) {
            return Ok(HistogramDraw {
                histogram: self.entries[i].0.clone(),
                fallback: false,
            });
        }
        let (histogram, _) = self.sample_initial(rng);
        Ok(HistogramDraw {
            histogram,
            fallback: true,
        })
    }

    /// Text form: `nu=<ν>` header, then `c_1 ... c_ν<TAB>weight` per entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("nu={}\n", self.nu);
        for (h, w) in &self.entries {
            let counts: Vec<String> = h.counts().iter().map(u32::to_string).collect();
            out.push_str(&counts.join(" "));
            out.push('\t');
            out.push_str(&w.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, HistogramError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(HistogramError::EmptyDistribution)?;
        let nu: usize = header
            .trim()
            .strip_prefix("nu=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| HistogramError::Parse {
                line: 1,
                message: format!("expected `nu=<int>` header, got `{header}`"),
            })?;
        let mut entries = Vec::new();
        for (n, line) in lines {
            let bad = |message: String| HistogramError::Parse {
                line: n + 1,
                message,
            };
            let (counts, weight) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab before weight".into()))?;
            let counts: Vec<u32> = counts
                .split_whitespace()
                .map(|c| c.parse().map_err(|e| bad(format!("count: {e}"))))
                .collect::<Result<_, _>>()?;
            if counts.len() != nu {
                return Err(bad(format!("expected {nu} counts, found {}", counts.len())));
            }
            let weight: u64 = weight
                .trim()
                .parse()
                .map_err(|e| bad(format!("weight: {e}")))?;
            if weight == 0 {
                return Err(bad("weight must be positive".into()));
            }
            entries.push((ValenceHistogram::from_counts(counts), weight));
        }
        Self::from_entries(nu, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HistogramError> {
        fs::write(path, self.to_text()).map_err(|e| HistogramError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HistogramError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| HistogramError::Io(e.to_string()))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use proptest::prelude::*;

    fn h(counts: &[u32]) -> ValenceHistogram {
        ValenceHistogram::from_counts(counts.to_vec())
    }

    #[test]
    fn compatibility_examples() {
        let methane = h(&[4, 0, 0, 1]);
        let ethanol = h(&[6, 1, 0, 2]);
        assert!(methane.is_compatible_with(&ethanol).unwrap());
        assert!(!ethanol.is_compatible_with(&methane).unwrap());
        assert!(h(&[0, 0, 0, 0]).is_compatible_with(&methane).unwrap());
        assert!(!h(&[0, 1, 0, 0]).is_compatible_with(&h(&[5, 0, 0, 0])).unwrap());
        assert_eq!(
            methane.is_compatible_with(&h(&[1, 2])),
            Err(HistogramError::LengthMismatch(4, 2))
        );
    }

    #[test]
    fn subtraction_and_update() {
        let e = h(&[6, 1, 0, 2]);
        assert_eq!(e.subtract(&h(&[0, 0, 0, 1])).unwrap(), h(&[6, 1, 0, 1]));
        assert_eq!(e.subtract(&e).unwrap(), h(&[0, 0, 0, 0]));
        assert_eq!(
            h(&[0, 0, 0, 1]).subtract(&h(&[0, 1, 0, 0])),
            Err(HistogramError::Incompatible { valence: 2 })
        );
        let z = ValenceHistogram::zeros(4);
        assert_eq!(z.with_valence(4).unwrap(), h(&[0, 0, 0, 1]));
        assert_eq!(z.with_valence(4).unwrap().with_valence(4).unwrap(), h(&[0, 0, 0, 2]));
        assert!(matches!(
            z.with_valence(0),
            Err(HistogramError::ValenceOutOfRange { .. })
        ));
        assert_eq!(e.to_string(), "{1:6,2:1,4:2}");
    }

    #[test]
    fn distribution_counts_duplicates() {
        let methane = h(&[0, 0, 0, 1]);
        let ethanol = h(&[0, 1, 0, 2]);
        let d = HistogramDistribution::from_entries(
            4,
            vec![(methane.clone(), 1), (ethanol.clone(), 1), (methane.clone(), 1)],
        )
        .unwrap();
        assert_eq!(d.entries(), &[(methane, 2), (ethanol, 1)]);
        assert_eq!(d.total_weight(), 3);
        assert_eq!(
            HistogramDistribution::from_corpus(std::iter::empty(), 4),
            Err(HistogramError::EmptyCorpus)
        );
    }

    #[test]
    fn text_format_round_trip() {
        let d = HistogramDistribution::from_entries(
            4,
            vec![(h(&[0, 0, 0, 1]), 2), (h(&[0, 1, 0, 2]), 7)],
        )
        .unwrap();
        let text = d.to_text();
        assert_eq!(text, "nu=4\n0 0 0 1\t2\n0 1 0 2\t7\n");
        assert_eq!(HistogramDistribution::parse(&text).unwrap(), d);
        assert!(HistogramDistribution::parse("nu=4\n0 0 1\t2\n").is_err());
        assert!(HistogramDistribution::parse("n=4\n").is_err());
    }

    #[test]
    fn singleton_and_fallback_draws() {
        let mut rng = stream_rng(9, 0);
        let methane = h(&[0, 0, 0, 1]);
        let d = HistogramDistribution::from_entries(4, vec![(methane.clone(), 1)]).unwrap();
        let draw = d.sample_compatible(&methane, 1, &mut rng).unwrap();
        assert_eq!(draw, HistogramDraw { histogram: methane.clone(), fallback: false });
        let draw = d.sample_compatible(&h(&[0, 0, 0, 3]), 1, &mut rng).unwrap();
        assert!(draw.fallback);
        assert_eq!(draw.histogram, methane);
        assert_eq!(d.sample_initial(&mut rng), (methane, 1));
    }

    fn arb_hist() -> impl Strategy<Value = ValenceHistogram> {
        proptest::collection::vec(0u32..4, 4).prop_map(ValenceHistogram::from_counts)
    }

    proptest! {
        #[test]
        fn compatibility_is_a_partial_order(a in arb_hist(), b in arb_hist(), c in arb_hist()) {
            prop_assert!(a.is_compatible_with(&a).unwrap());
            if a.is_compatible_with(&b).unwrap() && b.is_compatible_with(&c).unwrap() {
                prop_assert!(a.is_compatible_with(&c).unwrap());
            }
            if a.is_compatible_with(&b).unwrap() && b.is_compatible_with(&a).unwrap() {
                prop_assert_eq!(&a, &b);
            }
        }

        #[test]
        fn update_then_subtract_unit_is_identity(a in arb_hist(), v in 1usize..=4) {
            let unit = ValenceHistogram::zeros(4).with_valence(v).unwrap();
            prop_assert_eq!(a.with_valence(v).unwrap().subtract(&unit).unwrap(), a);
        }

        #[test]
        fn constrained_draw_is_compatible_or_flagged(
            entries in proptest::collection::vec((arb_hist(), 1u64..5), 1..6),
            used in arb_hist(),
            min_atoms in 1usize..8,
            seed in any::<u64>(),
        ) {
            let d = HistogramDistribution::from_entries(4, entries).unwrap();
            let mut rng = stream_rng(seed, 0);
            let draw = d.sample_compatible(&used, min_atoms, &mut rng).unwrap();
            let ok = used.is_compatible_with(&draw.histogram).unwrap()
                && draw.histogram.total() as usize >= min_atoms;
            prop_assert!(ok != draw.fallback);
        }
    }
}
