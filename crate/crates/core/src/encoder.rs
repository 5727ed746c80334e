//! Graph encoder: per-atom posterior parameters from a gated graph network.
//!
//! Atom states start from a learned type embedding and go through `S` rounds
//! of message passing. Messages are bond-type specific bias-free linear maps
//! of neighbour states, summed per atom, and fed with the state through a
//! GRU cell; each round's input state is added back to its output. Two
//! linear heads then give `μ` and `log σ²` for every atom.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{GruCell, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::chemgraph::{BondOrder, MolecularGraph};
use crate::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub steps: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            hidden_dim: 100,
            steps: 12,
        }
    }
}

/// Per-atom posterior parameters, one row per heavy atom.
#[derive(Debug, Clone, Copy)]
pub struct LatentEncoding {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub embedding: Linear,
    pub edge_transforms: [Linear; 3],
    pub gru: GruCell,
    pub mu_head: Linear,
    pub log_var_head: Linear,
}

/// One-hot rows for atom kinds.
pub(crate) fn one_hot_rows(kinds: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; kinds.len() * width];
    for (r, &k) in kinds.iter().enumerate() {
        data[r * width + k] = 1.0;
    }
    Tensor::matrix(kinds.len(), width, data).expect("shape matches data")
}

/// Neighbour lists per bond type.
pub(crate) fn typed_neighbors(g: &MolecularGraph) -> [Vec<Vec<usize>>; 3] {
    let mut lists: [Vec<Vec<usize>>; 3] = std::array::from_fn(|_| vec![Vec::new(); g.len()]);
    for b in g.bonds() {
        let l = b.order.index();
        lists[l][b.a].push(b.b);
        lists[l][b.b].push(b.a);
    }
    lists
}

/// `Σ_l Σ_{u ~_l v} E_l(state_u)` for every atom `v`.
pub(crate) fn aggregate_messages(
    tape: &mut Tape,
    store: &ParamStore,
    transforms: &[Linear; 3],
    state: Var,
    neighbors: &[Vec<Vec<usize>>; 3],
) -> Result<Var, ModelError> {
    let shape = tape.value(state).shape().to_vec();
    let mut total: Option<Var> = None;
    for l in BondOrder::ALL.map(BondOrder::index) {
        if neighbors[l].iter().all(Vec::is_empty) {
            continue;
        }
        let projected = transforms[l].forward(tape, store, state)?;
        let summed = tape.neighbor_sum(projected, &neighbors[l])?;
        total = Some(match total {
            Some(t) => tape.add(t, summed)?,
            None => summed,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.constant(Tensor::zeros(&shape)),
    })
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden_dim;
        Self {
            embedding: Linear::new(store, "encoder.embedding", vocab_size, h, false, rng),
            edge_transforms: std::array::from_fn(|l| {
                Linear::new(store, &format!("encoder.edge{}", l + 1), h, h, false, rng)
            }),
            gru: GruCell::new(store, "encoder.gru", h, h, rng),
            mu_head: Linear::new(store, "encoder.mu", h, config.latent_dim, true, rng),
            log_var_head: Linear::new(store, "encoder.log_var", h, config.latent_dim, true, rng),
            config,
            vocab_size,
        }
    }

    /// Final message-passing states, one row per atom.
    pub fn node_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &MolecularGraph,
    ) -> Result<Var, ModelError> {
        if g.is_empty() {
            return Err(ModelError::EmptyGraph);
        }
        let kinds: Vec<usize> = g.atoms().iter().map(|a| a.kind).collect();
        if let Some(&bad) = kinds.iter().find(|&&k| k >= self.vocab_size) {
            return Err(ModelError::UnknownAtomType(bad));
        }
        let one_hot = tape.constant(one_hot_rows(&kinds, self.vocab_size));
        let mut state = self.embedding.forward(tape, store, one_hot)?;
        let neighbors = typed_neighbors(g);
        for _ in 0..self.config.steps {
            let messages = aggregate_messages(tape, store, &self.edge_transforms, state, &neighbors)?;
            let updated = self.gru.forward(tape, store, state, messages)?;
            state = tape.add(updated, state)?;
        }
        Ok(state)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &MolecularGraph,
    ) -> Result<LatentEncoding, ModelError> {
        let state = self.node_states(tape, store, g)?;
        Ok(LatentEncoding {
            mu: self.mu_head.forward(tape, store, state)?,
            log_var: self.log_var_head.forward(tape, store, state)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.embedding.params();
        for e in &self.edge_transforms {
            p.extend(e.params());
        }
        p.extend(self.gru.params());
        p.extend(self.mu_head.params());
        p.extend(self.log_var_head.params());
        p
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε` with `ε ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(
    tape: &mut Tape,
    enc: &LatentEncoding,
    rng: &mut R,
) -> Result<Var, ModelError> {
    let shape = tape.value(enc.mu).shape().to_vec();
    let noise = standard_normal(&shape, rng);
    let eps = tape.constant(noise);
    let half = tape.scale(enc.log_var, 0.5);
    let std = tape.exp(half);
    let spread = tape.mul(std, eps)?;
    Ok(tape.add(enc.mu, spread)?)
}

/// `m × latent_dim` draws from the standard normal prior.
pub fn sample_prior<R: Rng + ?Sized>(m: usize, latent_dim: usize, rng: &mut R) -> Tensor {
    standard_normal(&[m, latent_dim], rng)
}

fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
