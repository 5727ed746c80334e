//! The complete model: encoder, decoder, property regressor, vocabulary
//! and histogram distribution, with checkpoint persistence.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, Mlp, ParamStore, Tape, Tensor, Var};
use crate::chemgraph::{AtomVocabulary, GraphError, MolecularGraph, VocabularyError};
use crate::decoder::{DecodeMode, DecodeOutput, Decoder, DecoderConfig};
use crate::encoder::{reparameterize, sample_prior, Encoder, EncoderConfig, LatentEncoding};
use crate::histogram::{HistogramDistribution, HistogramError, ValenceHistogram};
use crate::util::stream_rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph has no atoms")]
    EmptyGraph,
    #[error("atom type {0} is not in the vocabulary")]
    UnknownAtomType(usize),
    #[error("shape: {0}")]
    Shape(String),
    #[error("teacher trajectory inconsistent with the masks: {0}")]
    Teacher(String),
    #[error("bond decoding exceeded {0} decisions")]
    DecisionLimit(usize),
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub encoder_steps: usize,
    pub decoder_steps: usize,
    pub edge_hidden: usize,
    pub property_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            hidden_dim: 100,
            encoder_steps: 12,
            decoder_steps: 12,
            edge_hidden: 250,
            property_hidden: 250,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            steps: self.encoder_steps,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            steps: self.decoder_steps,
            edge_hidden: self.edge_hidden,
        }
    }

    pub fn entries(&self) -> [(&'static str, usize); 6] {
        [
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_steps", self.encoder_steps),
            ("decoder_steps", self.decoder_steps),
            ("edge_hidden", self.edge_hidden),
            ("property_hidden", self.property_hidden),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: AtomVocabulary,
    pub histograms: HistogramDistribution,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// `O`: mean latent row to a scalar property.
    pub property: Mlp,
}

/// A decoded molecule together with its bookkeeping.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub output: DecodeOutput,
    pub z: Tensor,
}

impl Decoded {
    pub fn graph(&self) -> &MolecularGraph {
        &self.output.graph
    }

    pub fn fallback_count(&self) -> usize {
        self.output.typing.fallback_count
    }
}

impl Model {
    pub fn new(
        config: ModelConfig,
        vocab: AtomVocabulary,
        histograms: HistogramDistribution,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if histograms.nu() != vocab.max_valence() {
            return Err(ModelError::Incompatible(format!(
                "histograms have nu={} but the vocabulary's largest valence is {}",
                histograms.nu(),
                vocab.max_valence()
            )));
        }
        if config.entries().iter().any(|&(_, v)| v == 0) {
            return Err(ModelError::Shape("model dimensions must be positive".into()));
        }
        let mut rng = stream_rng(seed, 0x1417);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, config.encoder(), vocab.len(), &mut rng);
        let decoder = Decoder::new(&mut params, config.decoder(), vocab.len(), vocab.max_valence(), &mut rng);
        let property = Mlp::new(&mut params, "property", config.latent_dim, config.property_hidden, 1, &mut rng);
        Ok(Self {
            config,
            vocab,
            histograms,
            params,
            encoder,
            decoder,
            property,
        })
    }

    pub fn nu(&self) -> usize {
        self.vocab.max_valence()
    }

    pub fn encode(&self, tape: &mut Tape, g: &MolecularGraph) -> Result<LatentEncoding, ModelError> {
        self.encoder.encode(tape, &self.params, g)
    }

    /// `O(mean_v z_v)` as a `[1 × 1]` node.
    pub fn property_node(&self, tape: &mut Tape, z: Var) -> Result<Var, ModelError> {
        let mean = tape.mean_rows(z)?;
        Ok(self.property.forward(tape, &self.params, mean)?)
    }

    pub fn predict_property(&self, z: &Tensor) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let z = tape.constant(z.clone());
        let p = self.property_node(&mut tape, z)?;
        Ok(tape.value(p).item())
    }

    /// Decodes `z` with a reference histogram (reconstruction) or a fresh
    /// draw sequence from the training distribution (generation).
    pub fn decode<R: Rng + ?Sized>(
        &self,
        z: &Tensor,
        alpha0: &ValenceHistogram,
        generate: bool,
        rng: &mut R,
        want_trace: bool,
    ) -> Result<Decoded, ModelError> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let mode = if generate {
            DecodeMode::Generate(&self.histograms)
        } else {
            DecodeMode::Reconstruct
        };
        let output = self
            .decoder
            .decode(&mut tape, &self.params, &self.vocab, zv, alpha0, mode, rng, want_trace)?;
        Ok(Decoded { output, z: z.clone() })
    }

    /// Prior sample: `α₀` from the distribution, `m = Σα₀` latent rows.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, want_trace: bool) -> Result<Decoded, ModelError> {
        let (alpha0, m) = self.histograms.sample_initial(rng);
        let z = sample_prior(m, self.config.latent_dim, rng);
        self.decode(&z, &alpha0, true, rng, want_trace)
    }

    /// Posterior mean rows for `g`.
    pub fn encode_mean(&self, g: &MolecularGraph) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, g)?;
        Ok(tape.value(enc.mu).clone())
    }

    /// One reparameterized sample of `g`'s posterior.
    pub fn encode_sample<R: Rng + ?Sized>(&self, g: &MolecularGraph, rng: &mut R) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, g)?;
        let z = reparameterize(&mut tape, &enc, rng)?;
        Ok(tape.value(z).clone())
    }

    /// Encodes once, samples `z`, and decodes with `g`'s own histogram.
    pub fn reconstruct<R: Rng + ?Sized>(&self, g: &MolecularGraph, rng: &mut R) -> Result<Decoded, ModelError> {
        let z = self.encode_sample(g, rng)?;
        let alpha0 = g.valence_histogram(self.nu(), false);
        self.decode(&z, &alpha0, false, rng, false)
    }

    /// Refuses a vocabulary that differs from the model's.
    pub fn check_vocabulary(&self, vocab: &AtomVocabulary) -> Result<(), ModelError> {
        if vocab.fingerprint() != self.vocab.fingerprint() {
            return Err(ModelError::Incompatible(format!(
                "vocabulary hash {} does not match checkpoint vocabulary hash {}",
                vocab.fingerprint(),
                self.vocab.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.set_meta("format", "ccgvae-model");
        ck.set_meta("vocab", self.vocab.to_string().trim_end().replace('\n', ";"));
        ck.set_meta("vocab_hash", self.vocab.fingerprint());
        for (k, v) in self.config.entries() {
            ck.set_meta(k, v.to_string());
        }
        ck.set_meta("histograms", self.histograms.to_text().trim_end().replace('\n', ";"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let meta = |key: &str| {
            ck.meta(key)
                .ok_or_else(|| ModelError::Incompatible(format!("checkpoint lacks `{key}` metadata")))
        };
        if meta("format")? != "ccgvae-model" {
            return Err(ModelError::Incompatible("not a model checkpoint".into()));
        }
        let vocab = AtomVocabulary::parse(&meta("vocab")?.replace(';', "\n"))?;
        if vocab.fingerprint() != meta("vocab_hash")? {
            return Err(ModelError::Incompatible("stored vocabulary does not match its hash".into()));
        }
        let dim = |key: &str| -> Result<usize, ModelError> {
            meta(key)?
                .parse()
                .map_err(|_| ModelError::Incompatible(format!("`{key}` is not an integer")))
        };
        let config = ModelConfig {
            latent_dim: dim("latent_dim")?,
            hidden_dim: dim("hidden_dim")?,
            encoder_steps: dim("encoder_steps")?,
            decoder_steps: dim("decoder_steps")?,
            edge_hidden: dim("edge_hidden")?,
            property_hidden: dim("property_hidden")?,
        };
        let histograms = HistogramDistribution::parse(&meta("histograms")?.replace(';', "\n"))?;
        let mut model = Self::new(config, vocab, histograms, 0)?;
        ck.load_into(&mut model.params)
            .map_err(|e| ModelError::Incompatible(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
