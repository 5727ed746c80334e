//! Two-phase decoder: histogram-conditioned typing, then masked bond
//! generation, then post-processing into a hydrogen-complete molecule.

mod bonds;
mod typing;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::chemgraph::{AtomVocabulary, MolecularGraph};
use crate::histogram::{HistogramDistribution, ValenceHistogram};
use crate::model::ModelError;

pub use bonds::{
    distance_bucket, edge_mask, BondNet, BondOutcome, BondPlan, DecoderState, EdgeChoice, EdgeDecision,
    EdgeMask, EdgeScores, DISTANCE_BUCKETS,
};
pub use typing::{type_mask, TypingMode, TypingNet, TypingOutcome, TypingStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub steps: usize,
    pub edge_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            hidden_dim: 100,
            steps: 12,
            edge_hidden: 250,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DecodeMode<'a> {
    /// Ground-truth types and bond decisions.
    Teacher { types: &'a [usize], plan: &'a BondPlan },
    /// Sampled, with the reference histogram held fixed.
    Reconstruct,
    /// Sampled, with reference histograms redrawn from the distribution.
    Generate(&'a HistogramDistribution),
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Post-processed molecule.
    pub graph: MolecularGraph,
    /// Graph as built, before isolated-atom removal and hydrogen completion.
    pub raw: MolecularGraph,
    pub typing: TypingOutcome,
    pub bonds: BondOutcome,
    /// Type plus bond cross-entropy (teacher mode only).
    pub loss: Option<Var>,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub typing: TypingNet,
    pub bonds: BondNet,
}

/// Removes isolated atoms (a single-atom molecule is kept) and fills
/// remaining valence with hydrogens.
pub fn post_process(raw: &MolecularGraph) -> MolecularGraph {
    if raw.len() == 1 {
        raw.complete_with_hydrogens()
    } else {
        raw.remove_isolated_atoms().complete_with_hydrogens()
    }
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: DecoderConfig,
        vocab_size: usize,
        nu: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            typing: TypingNet::new(store, config.latent_dim, config.hidden_dim, vocab_size, nu, rng),
            bonds: BondNet::new(
                store,
                config.latent_dim,
                config.hidden_dim,
                config.steps,
                config.edge_hidden,
                vocab_size,
                rng,
            ),
            config,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.typing.params();
        p.extend(self.bonds.params());
        p
    }

    /// Decodes latent rows `z` with reference histogram `alpha0`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &AtomVocabulary,
        z: Var,
        alpha0: &ValenceHistogram,
        mode: DecodeMode<'_>,
        rng: &mut R,
        want_trace: bool,
    ) -> Result<DecodeOutput, ModelError> {
        let m = tape.value(z).rows();
        if m == 0 {
            return Err(ModelError::EmptyGraph);
        }
        let typing_mode = match mode {
            DecodeMode::Teacher { types, .. } => TypingMode::Teacher(types),
            DecodeMode::Reconstruct => TypingMode::Reconstruct,
            DecodeMode::Generate(dist) => TypingMode::Generate(dist),
        };
        let typing = self.typing.assign(tape, store, vocab, z, alpha0, typing_mode, rng)?;
        let mut trace = Vec::new();
        if want_trace {
            for s in &typing.steps {
                trace.push(format!(
                    "type t={} diff={} used={} target={} -> {} fallbacks={}",
                    s.t,
                    s.diff,
                    s.used,
                    s.target,
                    vocab.symbol(s.kind),
                    s.fallbacks
                ));
            }
        }
        let (start, plan) = match mode {
            DecodeMode::Teacher { plan, .. } => (plan.start, Some(plan)),
            _ => (rng.random_range(0..m), None),
        };
        let mut state = self.bonds.initialize(tape, store, vocab, z, &typing.types, start)?;
        let bonds = self.bonds.decode(
            tape,
            store,
            &mut state,
            plan,
            rng,
            want_trace.then_some(&mut trace),
        )?;
        let loss = match (typing.loss, bonds.loss) {
            (Some(a), Some(b)) => Some(tape.add(a, b)?),
            (a, b) => a.or(b),
        };
        let raw = state.graph;
        Ok(DecodeOutput {
            graph: post_process(&raw),
            raw,
            typing,
            bonds,
            loss,
            trace,
        })
    }
}
