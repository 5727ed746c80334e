//! Evaluation protocols: reconstruction rate and generation statistics
//! (validity, novelty, uniqueness, diversity).
//!
//! Standard deviations are per-sample Bernoulli deviations `√(p(1−p))`,
//! expressed in percent like the rates themselves.

mod fingerprint;

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chemgraph::MolecularGraph;
use crate::model::{Model, ModelError};
use crate::util::stream_rng;

pub use fingerprint::{fingerprint, tanimoto, Fingerprint, DEFAULT_RADIUS, DEFAULT_WIDTH};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that maps a molecule to a decoded molecule.
pub trait Reconstructor: Sync {
    fn reconstruct(&self, g: &MolecularGraph, rng: &mut ChaCha8Rng) -> Result<MolecularGraph, ModelError>;
}

impl Reconstructor for Model {
    fn reconstruct(&self, g: &MolecularGraph, rng: &mut ChaCha8Rng) -> Result<MolecularGraph, ModelError> {
        Ok(Model::reconstruct(self, g, rng)?.output.graph)
    }
}

/// Returns its input unchanged.
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn reconstruct(&self, g: &MolecularGraph, _: &mut ChaCha8Rng) -> Result<MolecularGraph, ModelError> {
        Ok(g.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub graph: MolecularGraph,
    pub fallback: bool,
}

/// Anything that produces molecules from nothing but randomness.
pub trait Generator: Sync {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<GeneratedSample, ModelError>;
}

impl Generator for Model {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<GeneratedSample, ModelError> {
        let d = Model::generate(self, rng, false)?;
        Ok(GeneratedSample {
            fallback: d.fallback_count() > 0,
            graph: d.output.graph,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessCriterion {
    /// Canonical forms agree.
    Canonical,
    /// Heavy-atom counts agree (a looser sanity check).
    AtomCount,
}

impl SuccessCriterion {
    pub fn matches(self, decoded: &MolecularGraph, original: &MolecularGraph) -> bool {
        match self {
            SuccessCriterion::Canonical => decoded.canonical_form() == original.canonical_form(),
            SuccessCriterion::AtomCount => decoded.heavy_atom_count() == original.heavy_atom_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionProtocol {
    pub encodings: usize,
    pub molecule_cap: usize,
    pub seed: u64,
}

impl Default for ReconstructionProtocol {
    fn default() -> Self {
        Self {
            encodings: 20,
            molecule_cap: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    pub molecules: usize,
    pub attempts: usize,
    pub successes: usize,
    /// Molecules whose decoding failed with an error.
    pub errors: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn bernoulli_std_pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let p = num as f64 / den as f64;
    100.0 * (p * (1.0 - p)).sqrt()
}

impl ReconstructionReport {
    pub fn rate(&self) -> f64 {
        pct(self.successes, self.attempts)
    }

    pub fn std(&self) -> f64 {
        bernoulli_std_pct(self.successes, self.attempts)
    }
}

/// Each of the first `molecule_cap` molecules is encoded `encodings` times
/// and each sample decoded once.
pub fn reconstruction_rate<M: Reconstructor + ?Sized>(
    model: &M,
    molecules: &[MolecularGraph],
    protocol: ReconstructionProtocol,
    criterion: SuccessCriterion,
) -> ReconstructionReport {
    let take = molecules.len().min(protocol.molecule_cap);
    let per: Vec<(usize, usize)> = molecules[..take]
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = stream_rng(protocol.seed, i as u64);
            let mut ok = 0;
            let mut errors = 0;
            for _ in 0..protocol.encodings {
                match model.reconstruct(g, &mut rng) {
                    Ok(d) if criterion.matches(&d, g) => ok += 1,
                    Ok(_) => {}
                    Err(e) => {
                        log::warn!("reconstruction of molecule {i} failed: {e}");
                        errors += 1;
                    }
                }
            }
            (ok, errors)
        })
        .collect();
    ReconstructionReport {
        molecules: take,
        attempts: take * protocol.encodings,
        successes: per.iter().map(|p| p.0).sum(),
        errors: per.iter().map(|p| p.1).sum(),
    }
}

/// Non-empty, connected, and every atom's valence exactly filled.
pub fn is_valid_molecule(g: &MolecularGraph) -> bool {
    !g.is_empty() && g.is_connected() && g.is_valence_valid()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub samples: usize,
    pub valid: usize,
    pub novel: usize,
    pub unique: usize,
    pub fallbacks: usize,
    /// Mean of `1 − max Tanimoto` to the training set over valid samples.
    pub diversity_mean: f64,
    pub diversity_std: f64,
    pub fingerprint_width: usize,
}

impl GenerationReport {
    pub fn validity(&self) -> f64 {
        pct(self.valid, self.samples)
    }

    pub fn novelty(&self) -> f64 {
        pct(self.novel, self.valid)
    }

    pub fn uniqueness(&self) -> f64 {
        pct(self.unique, self.valid)
    }

    pub fn diversity(&self) -> f64 {
        100.0 * self.diversity_mean
    }

    pub fn fallback_rate(&self) -> f64 {
        pct(self.fallbacks, self.samples)
    }
}

/// Indexed training set for novelty and diversity.
pub struct TrainingIndex {
    canonical: HashSet<String>,
    fingerprints: Vec<Fingerprint>,
    width: usize,
}

impl TrainingIndex {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>, width: usize) -> Self {
        let mut canonical = HashSet::new();
        let mut fingerprints = Vec::new();
        for g in graphs {
            canonical.insert(g.canonical_form());
            fingerprints.push(fingerprint(g, width, DEFAULT_RADIUS));
        }
        Self {
            canonical,
            fingerprints,
            width,
        }
    }

    pub fn contains(&self, g: &MolecularGraph) -> bool {
        self.canonical.contains(&g.canonical_form())
    }

    /// `1 − max_t tanimoto(g, t)`; 1 for an empty training set.
    pub fn distance(&self, g: &MolecularGraph) -> f64 {
        let fp = fingerprint(g, self.width, DEFAULT_RADIUS);
        let best = self
            .fingerprints
            .iter()
            .map(|t| tanimoto(&fp, t).expect("same width"))
            .fold(0.0, f64::max);
        1.0 - best
    }
}

pub fn generation_report<G: Generator + ?Sized>(
    generator: &G,
    index: &TrainingIndex,
    samples: usize,
    seed: u64,
) -> GenerationReport {
    let draws: Vec<Option<GeneratedSample>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            match generator.generate(&mut rng) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("generation {i} failed: {e}");
                    None
                }
            }
        })
        .collect();
    summarize(draws.iter().map(Option::as_ref), index)
}

/// Aggregates already generated samples; `None` entries count as invalid.
pub fn summarize<'a>(
    draws: impl IntoIterator<Item = Option<&'a GeneratedSample>>,
    index: &TrainingIndex,
) -> GenerationReport {
    let mut samples = 0;
    let mut fallbacks = 0;
    let mut valid = Vec::new();
    for d in draws {
        samples += 1;
        if let Some(s) = d {
            fallbacks += s.fallback as usize;
            if is_valid_molecule(&s.graph) {
                valid.push(&s.graph);
            }
        }
    }
    let forms: Vec<String> = valid.par_iter().map(|g| g.canonical_form()).collect();
    let novel = forms.iter().filter(|f| !index.canonical.contains(*f)).count();
    let unique = forms.iter().collect::<HashSet<_>>().len();
    let distances: Vec<f64> = valid.par_iter().map(|g| index.distance(g)).collect();
    let n = distances.len().max(1) as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    GenerationReport {
        samples,
        valid: valid.len(),
        novel,
        unique,
        fallbacks,
        diversity_mean: if valid.is_empty() { 0.0 } else { mean },
        diversity_std: if valid.is_empty() { 0.0 } else { var.sqrt() },
        fingerprint_width: index.width,
    }
}

/// Reconstruction and generation figures together.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub reconstruction: Option<ReconstructionReport>,
    pub generation: GenerationReport,
}

impl EvaluationReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.reconstruction {
            let _ = writeln!(s, "reconstruction_pct={:.2}", r.rate());
            let _ = writeln!(s, "reconstruction_std={:.2}", r.std());
            let _ = writeln!(s, "reconstruction_molecules={}", r.molecules);
            let _ = writeln!(s, "reconstruction_attempts={}", r.attempts);
            let _ = writeln!(s, "reconstruction_errors={}", r.errors);
        }
        let g = &self.generation;
        let _ = writeln!(s, "validity_pct={:.2}", g.validity());
        let _ = writeln!(s, "validity_std={:.2}", bernoulli_std_pct(g.valid, g.samples));
        let _ = writeln!(s, "novelty_pct={:.2}", g.novelty());
        let _ = writeln!(s, "novelty_std={:.2}", bernoulli_std_pct(g.novel, g.valid));
        let _ = writeln!(s, "uniqueness_pct={:.2}", g.uniqueness());
        let _ = writeln!(s, "diversity_pct={:.2}", g.diversity());
        let _ = writeln!(s, "diversity_std={:.2}", 100.0 * g.diversity_std);
        let _ = writeln!(s, "fingerprint_bits={}", g.fingerprint_width);
        let _ = writeln!(s, "samples={}", g.samples);
        let _ = writeln!(s, "valid={}", g.valid);
        let _ = writeln!(s, "unique={}", g.unique);
        let _ = writeln!(s, "fallback_pct={:.2}", g.fallback_rate());
        s
    }

    /// Tab-separated header and row: `%Rec. %Val. %Nov. %Uniq. %Div.`
    pub fn table(&self) -> String {
        let rec = self
            .reconstruction
            .map(|r| format!("{:.2} ± {:.2}", r.rate(), r.std()))
            .unwrap_or_else(|| "-".into());
        let g = &self.generation;
        format!(
            "%Rec.\t%Val.\t%Nov.\t%Uniq.\t%Div.\n{rec}\t{:.2} ± {:.2}\t{:.2}\t{:.2}\t{:.2}\n",
            g.validity(),
            bernoulli_std_pct(g.valid, g.samples),
            g.novelty(),
            g.uniqueness(),
            g.diversity()
        )
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_key_values())
    }
}
