//! Masked bond generation around a breadth-first focus queue.
//!
//! The focus atom repeatedly chooses a partner (or the stop node) and, for a
//! partner, a bond order. Newly connected atoms join a FIFO queue; a stop
//! decision hands the focus to the next queued atom. Node states are
//! recomputed by the decoder's gated graph network after every bond.

use std::collections::VecDeque;

use rand::Rng;

use crate::autodiff::{GruCell, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::chemgraph::{AtomVocabulary, BondOrder, MolecularGraph};
use crate::encoder::{aggregate_messages, one_hot_rows, typed_neighbors};
use crate::model::ModelError;
use crate::util::sample_weighted;

/// Distance buckets: hop counts 1..=9, then `>= 10`, then unreachable.
pub const DISTANCE_BUCKETS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeChoice {
    Bond { target: usize, order: BondOrder },
    Stop,
}

/// A scripted sequence of decisions for teacher forcing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BondPlan {
    pub start: usize,
    pub decisions: Vec<EdgeChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDecision {
    pub step: usize,
    pub focus: usize,
    pub choice: EdgeChoice,
    /// Probability of the chosen partner (or stop).
    pub existence_prob: f64,
    /// Probability of the chosen order given the partner; 1 for stop.
    pub type_prob: f64,
}

/// Admissible decisions for a focus atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    pub candidates: Vec<bool>,
    /// Per atom, whether single/double/triple are admissible.
    pub types: Vec<[bool; 3]>,
    pub stop: bool,
}

impl EdgeMask {
    pub fn allows(&self, target: usize, order: BondOrder) -> bool {
        self.candidates.get(target).copied().unwrap_or(false) && self.types[target][order.index()]
    }

    pub fn allowed_candidates(&self) -> Vec<usize> {
        (0..self.candidates.len()).filter(|&u| self.candidates[u]).collect()
    }
}

/// Candidate `u` is admissible when it differs from the focus, is not yet
/// bonded to it, and both atoms have a free valence unit; order `k` needs
/// `k` free units on both sides. The stop node is withheld only while the
/// whole graph is still bond-free and some candidate exists, so that every
/// decode yields at least one bond.
pub fn edge_mask(graph: &MolecularGraph, focus: usize) -> EdgeMask {
    let n = graph.len();
    let focus_free = graph.remaining_valence(focus).unwrap_or(0);
    let mut candidates = vec![false; n];
    let mut types = vec![[false; 3]; n];
    for u in 0..n {
        if u == focus || graph.bond_between(focus, u).is_some() {
            continue;
        }
        let free = focus_free.min(graph.remaining_valence(u).unwrap_or(0));
        if free >= 1 {
            candidates[u] = true;
            for order in BondOrder::ALL {
                types[u][order.index()] = free >= order.order();
            }
        }
    }
    let any = candidates.iter().any(|&c| c);
    EdgeMask {
        stop: !(any && graph.bonds().is_empty()),
        candidates,
        types,
    }
}

pub fn distance_bucket(distance: Option<usize>) -> usize {
    match distance {
        Some(d) if (1..=9).contains(&d) => d - 1,
        Some(0) => 0,
        Some(_) => 9,
        None => 10,
    }
}

/// The in-flight construction state.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub graph: MolecularGraph,
    /// `[z_v, embed(τ_v)]`, one row per atom.
    pub h0: Var,
    pub states: Var,
    pub h_init: Var,
    pub h_t: Var,
    pub focus: usize,
    pub queue: VecDeque<usize>,
    pub visited: Vec<bool>,
    pub queued: Vec<bool>,
    pub step: usize,
}

impl DecoderState {
    /// Atoms with at least one bond.
    pub fn connected(&self) -> Vec<usize> {
        (0..self.graph.len()).filter(|&v| self.graph.degree(v) > 0).collect()
    }
}

/// Existence distribution over the admissible partners plus the stop node.
#[derive(Debug, Clone)]
pub struct EdgeScores {
    /// Atom index per row; the stop node is the extra final entry.
    pub candidates: Vec<usize>,
    /// Pair features, one row per candidate then one for the stop node.
    pub features: Var,
    /// `[1 × (candidates + 1)]` probabilities, stop last.
    pub existence: Var,
}

#[derive(Debug, Clone)]
pub struct BondNet {
    pub type_embedding: Linear,
    pub edge_transforms: [Linear; 3],
    pub gru: GruCell,
    /// Learned pseudo-state for the stop node.
    pub stop_state: ParamId,
    /// `C`: pair features to an existence logit.
    pub existence: Mlp,
    /// `L`: pair features to three bond-order logits.
    pub bond_type: Mlp,
    pub state_dim: usize,
    pub steps: usize,
    pub vocab_size: usize,
}

impl BondNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden_dim: usize,
        steps: usize,
        edge_hidden: usize,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let d = latent_dim + hidden_dim;
        let features = 4 * d + DISTANCE_BUCKETS;
        let stop_init = Tensor::new(
            vec![1, d],
            (0..d).map(|_| rng.random_range(-0.1..0.1)).collect(),
        )
        .expect("shape matches data");
        Self {
            type_embedding: Linear::new(store, "bonds.type_embedding", vocab_size, hidden_dim, false, rng),
            edge_transforms: std::array::from_fn(|l| {
                Linear::new(store, &format!("bonds.edge{}", l + 1), d, d, false, rng)
            }),
            gru: GruCell::new(store, "bonds.gru", d, d, rng),
            stop_state: store.add("bonds.stop_state", stop_init),
            existence: Mlp::new(store, "bonds.existence", features, edge_hidden, 1, rng),
            bond_type: Mlp::new(store, "bonds.bond_type", features, edge_hidden, 3, rng),
            state_dim: d,
            steps,
            vocab_size,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.type_embedding.params();
        for e in &self.edge_transforms {
            p.extend(e.params());
        }
        p.extend(self.gru.params());
        p.push(self.stop_state);
        p.extend(self.existence.params());
        p.extend(self.bond_type.params());
        p
    }

    /// Typed, bond-free atoms with `h_v⁰ = [z_v, embed(τ_v)]`.
    pub fn initialize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &AtomVocabulary,
        z: Var,
        types: &[usize],
        start: usize,
    ) -> Result<DecoderState, ModelError> {
        let m = types.len();
        if tape.value(z).rows() != m {
            return Err(ModelError::Shape(format!(
                "{} latent rows for {m} atom types",
                tape.value(z).rows()
            )));
        }
        if m == 0 {
            return Err(ModelError::EmptyGraph);
        }
        if start >= m {
            return Err(ModelError::Teacher(format!("start atom {start} out of range for {m} atoms")));
        }
        let mut graph = MolecularGraph::new();
        for &k in types {
            if k >= vocab.len() || k >= self.vocab_size {
                return Err(ModelError::UnknownAtomType(k));
            }
            graph.add_atom(vocab, k);
        }
        let one_hot = tape.constant(one_hot_rows(types, self.vocab_size));
        let emb = self.type_embedding.forward(tape, store, one_hot)?;
        let h0 = tape.concat_cols(&[z, emb])?;
        let h_init = tape.mean_rows(h0)?;
        let h_t = tape.constant(Tensor::zeros(&[1, self.state_dim]));
        let mut visited = vec![false; m];
        visited[start] = true;
        Ok(DecoderState {
            graph,
            h0,
            states: h0,
            h_init,
            h_t,
            focus: start,
            queue: VecDeque::new(),
            visited,
            queued: vec![false; m],
            step: 0,
        })
    }

    /// Runs the gated graph network from `h0` over the current bonds.
    pub fn propagate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h0: Var,
        graph: &MolecularGraph,
    ) -> Result<Var, ModelError> {
        let neighbors = typed_neighbors(graph);
        let mut h = h0;
        for _ in 0..self.steps {
            let msg = aggregate_messages(tape, store, &self.edge_transforms, h, &neighbors)?;
            h = self.gru.forward(tape, store, h, msg)?;
        }
        Ok(h)
    }

    fn refresh(&self, tape: &mut Tape, store: &ParamStore, state: &mut DecoderState) -> Result<(), ModelError> {
        state.states = self.propagate(tape, store, state.h0, &state.graph)?;
        let connected = state.connected();
        state.h_t = if connected.is_empty() {
            tape.constant(Tensor::zeros(&[1, self.state_dim]))
        } else {
            let rows = tape.select_rows(state.states, &connected)?;
            tape.mean_rows(rows)?
        };
        Ok(())
    }

    /// `φ = [h_v, h_u, d(v,u), H_init, H^t]` rows for the given partners, with
    /// the stop node appended.
    pub fn pair_features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &DecoderState,
        candidates: &[usize],
    ) -> Result<Var, ModelError> {
        let rows = candidates.len() + 1;
        let focus_rows = tape.select_rows(state.states, &vec![state.focus; rows])?;
        let stop = tape.param(store, self.stop_state);
        let partner = if candidates.is_empty() {
            stop
        } else {
            let picked = tape.select_rows(state.states, candidates)?;
            tape.concat_rows(&[picked, stop])?
        };
        let dist = state.graph.bfs_distances(state.focus);
        let mut onehot = vec![0.0; rows * DISTANCE_BUCKETS];
        for (r, &u) in candidates.iter().enumerate() {
            onehot[r * DISTANCE_BUCKETS + distance_bucket(dist[u])] = 1.0;
        }
        onehot[candidates.len() * DISTANCE_BUCKETS + distance_bucket(None)] = 1.0;
        let dist = tape.constant(Tensor::matrix(rows, DISTANCE_BUCKETS, onehot)?);
        let h_init = tape.repeat_rows(state.h_init, rows)?;
        let h_t = tape.repeat_rows(state.h_t, rows)?;
        Ok(tape.concat_cols(&[focus_rows, partner, dist, h_init, h_t])?)
    }

    pub fn score_edges(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &DecoderState,
        mask: &EdgeMask,
    ) -> Result<EdgeScores, ModelError> {
        let candidates = mask.allowed_candidates();
        let features = self.pair_features(tape, store, state, &candidates)?;
        let logits = self.existence.forward(tape, store, features)?;
        let logits = tape.reshape(logits, &[1, candidates.len() + 1])?;
        let mut allowed = vec![true; candidates.len() + 1];
        allowed[candidates.len()] = mask.stop;
        let existence = tape.masked_softmax(logits, &allowed)?;
        Ok(EdgeScores {
            candidates,
            features,
            existence,
        })
    }

    /// Bond-order distribution for the partner in row `row` of `scores`.
    pub fn type_probabilities(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scores: &EdgeScores,
        row: usize,
        mask: &EdgeMask,
    ) -> Result<Var, ModelError> {
        let u = scores.candidates[row];
        let phi = tape.select_rows(scores.features, &[row])?;
        let logits = self.bond_type.forward(tape, store, phi)?;
        Ok(tape.masked_softmax(logits, &mask.types[u])?)
    }

    /// Every admissible decision with its joint probability
    /// `p(u) · p(order | u)`, stop last.
    pub fn joint_probabilities(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &DecoderState,
    ) -> Result<Vec<(EdgeChoice, f64)>, ModelError> {
        let mask = edge_mask(&state.graph, state.focus);
        let scores = self.score_edges(tape, store, state, &mask)?;
        let p = tape.value(scores.existence).data().to_vec();
        let mut out = Vec::new();
        for (row, &u) in scores.candidates.iter().enumerate() {
            let types = self.type_probabilities(tape, store, &scores, row, &mask)?;
            let tp = tape.value(types).data().to_vec();
            for order in BondOrder::ALL {
                if mask.types[u][order.index()] {
                    out.push((EdgeChoice::Bond { target: u, order }, p[row] * tp[order.index()]));
                }
            }
        }
        if mask.stop {
            out.push((EdgeChoice::Stop, p[scores.candidates.len()]));
        }
        Ok(out)
    }

    /// Runs the focus loop to completion. With a plan, decisions are forced
    /// and their cross-entropy is accumulated; otherwise they are sampled.
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &mut DecoderState,
        plan: Option<&BondPlan>,
        rng: &mut R,
        trace: Option<&mut Vec<String>>,
    ) -> Result<BondOutcome, ModelError> {
        let m = state.graph.len();
        let limit = m * (m - 1) / 2 + m;
        let mut decisions = Vec::new();
        let mut loss: Option<Var> = None;
        let mut trace = trace;
        let accumulate = |tape: &mut Tape, loss: &mut Option<Var>, term: Var| -> Result<(), ModelError> {
            *loss = Some(match *loss {
                Some(l) => tape.add(l, term)?,
                None => term,
            });
            Ok(())
        };
        loop {
            if decisions.len() >= limit {
                return Err(ModelError::DecisionLimit(limit));
            }
            state.step += 1;
            let mask = edge_mask(&state.graph, state.focus);
            let scores = self.score_edges(tape, store, state, &mask)?;
            let stop_row = scores.candidates.len();
            let (row, order, existence_prob, type_prob) = match plan {
                Some(plan) => {
                    let forced = *plan.decisions.get(decisions.len()).ok_or_else(|| {
                        ModelError::Teacher("plan ended before the focus queue emptied".into())
                    })?;
                    let row = match forced {
                        EdgeChoice::Stop => stop_row,
                        EdgeChoice::Bond { target, .. } => scores
                            .candidates
                            .iter()
                            .position(|&u| u == target)
                            .ok_or_else(|| {
                                ModelError::Teacher(format!(
                                    "bond {}-{target} is masked at step {}",
                                    state.focus, state.step
                                ))
                            })?,
                    };
                    let p = tape.value(scores.existence).data()[row];
                    if p == 0.0 {
                        return Err(ModelError::Teacher(format!("stop is masked at step {}", state.step)));
                    }
                    let ce = tape.cross_entropy(scores.existence, row)?;
                    accumulate(tape, &mut loss, ce)?;
                    match forced {
                        EdgeChoice::Stop => (row, None, p, 1.0),
                        EdgeChoice::Bond { order, target } => {
                            if !mask.allows(target, order) {
                                return Err(ModelError::Teacher(format!(
                                    "order {} for bond {}-{target} is masked",
                                    order.order(),
                                    state.focus
                                )));
                            }
                            let tp = self.type_probabilities(tape, store, &scores, row, &mask)?;
                            let q = tape.value(tp).data()[order.index()];
                            let ce = tape.cross_entropy(tp, order.index())?;
                            accumulate(tape, &mut loss, ce)?;
                            (row, Some(order), p, q)
                        }
                    }
                }
                None => {
                    let probs = tape.value(scores.existence).data().to_vec();
                    let row = sample_weighted(&probs, rng)
                        .ok_or_else(|| ModelError::Shape("edge distribution has no mass".into()))?;
                    if row == stop_row {
                        (row, None, probs[row], 1.0)
                    } else {
                        let tp = self.type_probabilities(tape, store, &scores, row, &mask)?;
                        let tp = tape.value(tp).data().to_vec();
                        let k = sample_weighted(&tp, rng)
                            .ok_or_else(|| ModelError::Shape("bond-order distribution has no mass".into()))?;
                        (row, Some(BondOrder::from_index(k)), probs[row], tp[k])
                    }
                }
            };
            let choice = match order {
                None => EdgeChoice::Stop,
                Some(order) => EdgeChoice::Bond {
                    target: scores.candidates[row],
                    order,
                },
            };
            if let Some(lines) = trace.as_deref_mut() {
                lines.push(match choice {
                    EdgeChoice::Stop => format!("t={} focus={} -> STOP", state.step, state.focus),
                    EdgeChoice::Bond { target, order } => format!(
                        "t={} focus={} -> (u={target}, l={})",
                        state.step,
                        state.focus,
                        order.order()
                    ),
                });
            }
            decisions.push(EdgeDecision {
                step: state.step,
                focus: state.focus,
                choice,
                existence_prob,
                type_prob,
            });
            match choice {
                EdgeChoice::Bond { target, order } => {
                    state.graph.add_bond(state.focus, target, order)?;
                    if !state.visited[target] && !state.queued[target] {
                        state.queued[target] = true;
                        state.queue.push_back(target);
                    }
                    self.refresh(tape, store, state)?;
                }
                EdgeChoice::Stop => match state.queue.pop_front() {
                    Some(next) => {
                        state.queued[next] = false;
                        state.visited[next] = true;
                        state.focus = next;
                    }
                    None => break,
                },
            }
        }
        if let Some(plan) = plan {
            if plan.decisions.len() != decisions.len() {
                return Err(ModelError::Teacher(format!(
                    "plan has {} decisions but decoding finished after {}",
                    plan.decisions.len(),
                    decisions.len()
                )));
            }
        }
        Ok(BondOutcome { decisions, loss })
    }
}

#[derive(Debug, Clone)]
pub struct BondOutcome {
    pub decisions: Vec<EdgeDecision>,
    /// Summed existence and order cross-entropy (teacher mode only).
    pub loss: Option<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(kinds: &[usize]) -> MolecularGraph {
        let vocab = AtomVocabulary::qm9();
        let mut g = MolecularGraph::new();
        for &k in kinds {
            g.add_atom(&vocab, k);
        }
        g
    }

    #[test]
    fn exhausted_focus_only_allows_stop() {
        let mut g = graph(&[3, 0]); // F, C
        g.add_bond(0, 1, BondOrder::Single).unwrap();
        let m = edge_mask(&g, 0);
        assert!(m.stop);
        assert!(m.allowed_candidates().is_empty());
    }

    #[test]
    fn two_carbons_allow_every_order() {
        let g = graph(&[0, 0]);
        let m = edge_mask(&g, 0);
        assert_eq!(m.allowed_candidates(), vec![1]);
        assert_eq!(m.types[1], [true, true, true]);
        // nothing bonded yet, so the stop node is withheld
        assert!(!m.stop);
    }

    #[test]
    fn oxygen_caps_order_at_two() {
        let g = graph(&[0, 2]);
        let m = edge_mask(&g, 0);
        assert_eq!(m.types[1], [true, true, false]);
    }

    #[test]
    fn lone_atom_can_stop() {
        let g = graph(&[0]);
        let m = edge_mask(&g, 0);
        assert!(m.stop);
    }

    #[test]
    fn buckets() {
        assert_eq!(distance_bucket(Some(1)), 0);
        assert_eq!(distance_bucket(Some(9)), 8);
        assert_eq!(distance_bucket(Some(10)), 9);
        assert_eq!(distance_bucket(Some(40)), 9);
        assert_eq!(distance_bucket(None), 10);
    }
}
