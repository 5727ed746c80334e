//! Python bindings: molecules, valence histograms and the model.

use std::collections::HashMap;

use ccgvae::autodiff::AdamConfig;
use ccgvae::dataset::Dataset;
use ccgvae::metrics::{
    fingerprint, generation_report, reconstruction_rate, tanimoto, ReconstructionProtocol, SuccessCriterion,
    TrainingIndex, DEFAULT_RADIUS, DEFAULT_WIDTH,
};
use ccgvae::model::{Model as CoreModel, ModelConfig};
use ccgvae::training::{examples_from_dataset, optimize_latent, train, Direction, LossWeights, TrainConfig};
use ccgvae::util::stream_rng;
use ccgvae::{
    parse_smiles, write_smiles, AtomVocabulary, HistogramDistribution as CoreDistribution, MolecularGraph,
    ValenceHistogram,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Vocabulary", frozen, from_py_object)]
#[derive(Clone)]
pub struct Vocabulary {
    inner: AtomVocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    fn qm9() -> Self {
        Self {
            inner: AtomVocabulary::qm9(),
        }
    }

    #[staticmethod]
    fn zinc() -> Self {
        Self {
            inner: AtomVocabulary::zinc(),
        }
    }

    /// Lines of `SYMBOL VALENCE`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: AtomVocabulary::parse(text).map_err(err)?,
        })
    }

    #[getter]
    fn symbols(&self) -> Vec<String> {
        (0..self.inner.len()).map(|k| self.inner.symbol(k).to_string()).collect()
    }

    #[getter]
    fn max_valence(&self) -> usize {
        self.inner.max_valence()
    }

    fn valence(&self, symbol: &str) -> PyResult<u8> {
        let k = self
            .inner
            .index_of(symbol)
            .ok_or_else(|| err(format!("unknown atom `{symbol}`")))?;
        Ok(self.inner.valence(k))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary({})", self.symbols().join(", "))
    }
}

fn vocab_or_qm9(v: Option<&Vocabulary>) -> AtomVocabulary {
    v.map(|v| v.inner.clone()).unwrap_or_else(AtomVocabulary::qm9)
}

#[pyclass(name = "Molecule", frozen)]
pub struct Molecule {
    graph: MolecularGraph,
    vocab: AtomVocabulary,
}

#[pymethods]
impl Molecule {
    #[new]
    #[pyo3(signature = (smiles, vocab=None))]
    fn new(smiles: &str, vocab: Option<&Vocabulary>) -> PyResult<Self> {
        let vocab = vocab_or_qm9(vocab);
        let graph = parse_smiles(smiles, &vocab).map_err(err)?;
        Ok(Self { graph, vocab })
    }

    /// Canonical SMILES.
    fn smiles(&self) -> PyResult<String> {
        write_smiles(&self.graph, &self.vocab).map_err(err)
    }

    fn canonical_form(&self) -> String {
        self.graph.canonical_form()
    }

    #[getter]
    fn num_atoms(&self) -> usize {
        self.graph.len()
    }

    #[getter]
    fn atoms(&self) -> Vec<String> {
        self.graph.atoms().iter().map(|a| self.vocab.symbol(a.kind).to_string()).collect()
    }

    #[getter]
    fn implicit_hydrogens(&self) -> Vec<u8> {
        self.graph.atoms().iter().map(|a| a.implicit_h).collect()
    }

    /// `(i, j, order)` triples with `i < j`.
    #[getter]
    fn bonds(&self) -> Vec<(usize, usize, u8)> {
        self.graph.bond_set()
    }

    #[pyo3(signature = (include_hydrogens=false))]
    fn valence_histogram(&self, include_hydrogens: bool) -> Vec<u32> {
        self.graph
            .valence_histogram(self.vocab.max_valence(), include_hydrogens)
            .counts()
            .to_vec()
    }

    fn is_valid(&self) -> bool {
        ccgvae::metrics::is_valid_molecule(&self.graph)
    }

    fn __repr__(&self) -> String {
        format!("Molecule({})", self.smiles().unwrap_or_else(|_| self.canonical_form()))
    }
}

/// Whether histogram `a` fits inside `b` entry by entry.
#[pyfunction]
fn is_compatible(a: Vec<u32>, b: Vec<u32>) -> PyResult<bool> {
    ValenceHistogram::from_counts(a)
        .is_compatible_with(&ValenceHistogram::from_counts(b))
        .map_err(err)
}

/// Tanimoto similarity of circular fingerprints.
#[pyfunction]
#[pyo3(signature = (a, b, vocab=None))]
fn similarity(a: &str, b: &str, vocab: Option<&Vocabulary>) -> PyResult<f64> {
    let v = vocab_or_qm9(vocab);
    let fa = fingerprint(&parse_smiles(a, &v).map_err(err)?, DEFAULT_WIDTH, DEFAULT_RADIUS);
    let fb = fingerprint(&parse_smiles(b, &v).map_err(err)?, DEFAULT_WIDTH, DEFAULT_RADIUS);
    tanimoto(&fa, &fb).map_err(err)
}

fn graphs(smiles: &[String], vocab: &AtomVocabulary) -> PyResult<Vec<MolecularGraph>> {
    smiles
        .iter()
        .map(|s| parse_smiles(s, vocab).map_err(|e| err(format!("`{s}`: {e}"))))
        .collect()
}

#[pyclass(name = "HistogramDistribution", frozen)]
pub struct HistogramDistribution {
    inner: CoreDistribution,
}

#[pymethods]
impl HistogramDistribution {
    #[staticmethod]
    #[pyo3(signature = (smiles, vocab=None))]
    fn from_smiles(smiles: Vec<String>, vocab: Option<&Vocabulary>) -> PyResult<Self> {
        let v = vocab_or_qm9(vocab);
        let gs = graphs(&smiles, &v)?;
        Ok(Self {
            inner: CoreDistribution::from_corpus(gs.iter(), v.max_valence()).map_err(err)?,
        })
    }

    /// `(counts, weight)` pairs.
    #[getter]
    fn entries(&self) -> Vec<(Vec<u32>, u64)> {
        self.inner.entries().iter().map(|(h, w)| (h.counts().to_vec(), *w)).collect()
    }

    fn sample_initial(&self, seed: u64) -> Vec<u32> {
        self.inner.sample_initial(&mut stream_rng(seed, 0)).0.counts().to_vec()
    }

    /// Returns `(counts, fallback)`.
    fn sample_compatible(&self, used: Vec<u32>, min_atoms: usize, seed: u64) -> PyResult<(Vec<u32>, bool)> {
        let d = self
            .inner
            .sample_compatible(&ValenceHistogram::from_counts(used), min_atoms, &mut stream_rng(seed, 0))
            .map_err(err)?;
        Ok((d.histogram.counts().to_vec(), d.fallback))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Model")]
pub struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// Fresh model whose histogram distribution comes from `smiles`.
    #[new]
    #[pyo3(signature = (smiles, latent_dim=100, hidden_dim=100, steps=12, edge_hidden=250, property_hidden=250, seed=0, vocab=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        smiles: Vec<String>,
        latent_dim: usize,
        hidden_dim: usize,
        steps: usize,
        edge_hidden: usize,
        property_hidden: usize,
        seed: u64,
        vocab: Option<&Vocabulary>,
    ) -> PyResult<Self> {
        let v = vocab_or_qm9(vocab);
        let gs = graphs(&smiles, &v)?;
        let hist = CoreDistribution::from_corpus(gs.iter(), v.max_valence()).map_err(err)?;
        let cfg = ModelConfig {
            latent_dim,
            hidden_dim,
            encoder_steps: steps,
            decoder_steps: steps,
            edge_hidden,
            property_hidden,
        };
        Ok(Self {
            inner: CoreModel::new(cfg, v, hist, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn config(&self) -> HashMap<String, usize> {
        self.inner.config.entries().iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[getter]
    fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            inner: self.inner.vocab.clone(),
        }
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }

    /// Minibatch training; returns per-epoch loss terms.
    #[pyo3(signature = (smiles, epochs=10, batch_size=32, lr=1e-3, seed=0, properties=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        smiles: Vec<String>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
        properties: Option<Vec<f64>>,
    ) -> PyResult<Vec<HashMap<String, f64>>> {
        let mut text = String::new();
        for (i, s) in smiles.iter().enumerate() {
            match properties.as_ref().and_then(|p| p.get(i)) {
                Some(p) => text.push_str(&format!("{s}\t{p}\n")),
                None => text.push_str(&format!("{s}\n")),
            }
        }
        let data = Dataset::parse(&text, &self.inner.vocab);
        if let Some(f) = data.failures.first() {
            return Err(err(format!("line {}: {}", f.line, f.reason)));
        }
        let tc = TrainConfig {
            epochs,
            batch_size,
            weights: LossWeights::default(),
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            seed,
            max_grad_norm: None,
        };
        let (examples, _) = examples_from_dataset(&data, tc.weights);
        let model = &mut self.inner;
        let stats = py
            .detach(|| train(model, &examples, &tc, |_, _| Ok(())))
            .map_err(err)?;
        Ok(stats
            .iter()
            .map(|s| {
                HashMap::from([
                    ("epoch".to_string(), s.epoch as f64),
                    ("recon".to_string(), s.loss.recon),
                    ("latent".to_string(), s.loss.latent),
                    ("opt".to_string(), s.loss.opt),
                    ("total".to_string(), s.loss.total),
                ])
            })
            .collect())
    }

    /// `(smiles, fallback)` per sample.
    fn generate(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<(String, bool)>> {
        let model = &self.inner;
        py.detach(|| {
            (0..n)
                .map(|i| {
                    let d = model.generate(&mut stream_rng(seed, i as u64), false).map_err(|e| e.to_string())?;
                    let s = write_smiles(d.graph(), &model.vocab).map_err(|e| e.to_string())?;
                    Ok((s, d.fallback_count() > 0))
                })
                .collect::<Result<Vec<_>, String>>()
        })
        .map_err(err)
    }

    /// Decision trace of one generation, one line per bond decision.
    fn trace(&self, seed: u64) -> PyResult<(String, Vec<String>)> {
        let d = self.inner.generate(&mut stream_rng(seed, 0), true).map_err(err)?;
        let s = write_smiles(d.graph(), &self.inner.vocab).map_err(err)?;
        Ok((s, d.output.trace))
    }

    fn reconstruct(&self, smiles: &str, seed: u64) -> PyResult<String> {
        let g = parse_smiles(smiles, &self.inner.vocab).map_err(err)?;
        let d = self.inner.reconstruct(&g, &mut stream_rng(seed, 0)).map_err(err)?;
        write_smiles(d.graph(), &self.inner.vocab).map_err(err)
    }

    /// Posterior means, one row per heavy atom.
    fn encode(&self, smiles: &str) -> PyResult<Vec<Vec<f64>>> {
        let g = parse_smiles(smiles, &self.inner.vocab).map_err(err)?;
        let z = self.inner.encode_mean(&g).map_err(err)?;
        Ok((0..z.rows()).map(|r| z.row_slice(r).to_vec()).collect())
    }

    fn predict_property(&self, smiles: &str) -> PyResult<f64> {
        let g = parse_smiles(smiles, &self.inner.vocab).map_err(err)?;
        let z = self.inner.encode_mean(&g).map_err(err)?;
        self.inner.predict_property(&z).map_err(err)
    }

    /// Gradient steps on the property predictor from the molecule's mean code.
    #[pyo3(signature = (smiles, steps=50, ascend=true, step_size=0.05, seed=0))]
    fn optimize(
        &self,
        smiles: &str,
        steps: usize,
        ascend: bool,
        step_size: f64,
        seed: u64,
    ) -> PyResult<HashMap<String, Py<PyAny>>> {
        let m = &self.inner;
        let g = parse_smiles(smiles, &m.vocab).map_err(err)?;
        let z = m.encode_mean(&g).map_err(err)?;
        let dir = if ascend { Direction::Ascend } else { Direction::Descend };
        let path = optimize_latent(m, &z, dir, steps, step_size).map_err(err)?;
        let alpha0 = g.valence_histogram(m.nu(), false);
        let d = m.decode(&path.z, &alpha0, false, &mut stream_rng(seed, 0), false).map_err(err)?;
        let out = write_smiles(d.graph(), &m.vocab).map_err(err)?;
        Python::attach(|py| {
            Ok(HashMap::from([
                ("smiles".to_string(), out.into_pyobject(py)?.into_any().unbind()),
                ("predictions".to_string(), path.predictions.clone().into_pyobject(py)?.into_any().unbind()),
                ("rejected_steps".to_string(), path.rejected_steps.into_pyobject(py)?.into_any().unbind()),
            ]))
        })
    }

    /// Reconstruction (when `test` is given) and generation statistics.
    #[pyo3(signature = (train, samples=1000, test=None, encodings=20, seed=0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        train: Vec<String>,
        samples: usize,
        test: Option<Vec<String>>,
        encodings: usize,
        seed: u64,
    ) -> PyResult<HashMap<String, f64>> {
        let m = &self.inner;
        let train_graphs = graphs(&train, &m.vocab)?;
        let test_graphs = test.map(|t| graphs(&t, &m.vocab)).transpose()?;
        let mut out = py.detach(|| {
            let index = TrainingIndex::new(&train_graphs, DEFAULT_WIDTH);
            let r = generation_report(m, &index, samples, seed);
            HashMap::from([
                ("validity".to_string(), r.validity()),
                ("novelty".to_string(), r.novelty()),
                ("uniqueness".to_string(), r.uniqueness()),
                ("diversity".to_string(), r.diversity()),
                ("fallback_rate".to_string(), r.fallback_rate()),
            ])
        });
        if let Some(tg) = test_graphs {
            let protocol = ReconstructionProtocol {
                encodings,
                molecule_cap: 5000,
                seed,
            };
            let r = py.detach(|| reconstruction_rate(m, &tg, protocol, SuccessCriterion::Canonical));
            out.insert("reconstruction".into(), r.rate());
            out.insert("reconstruction_std".into(), r.std());
        }
        Ok(out)
    }
}

#[pymodule]
fn pyccgvae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Molecule>()?;
    m.add_class::<HistogramDistribution>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(is_compatible, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    Ok(())
}
