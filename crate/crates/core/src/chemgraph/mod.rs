//! Molecular graphs over a fixed atom vocabulary.
//!
//! Hydrogens are never graph nodes. Each heavy atom carries an implicit
//! hydrogen count, and valence accounting treats those hydrogens as single
//! bonds. Bond orders are restricted to single, double and triple.

mod canon;
mod vocab;

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::histogram::ValenceHistogram;

pub use canon::canonical_ranking;
pub use vocab::{AtomType, AtomVocabulary, VocabularyError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("atom index {index} out of range for a graph of {len} atoms")]
    AtomOutOfRange { index: usize, len: usize },
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("atoms {0} and {1} are already bonded")]
    DuplicateBond(usize, usize),
    #[error("bond of order {order} between {a} and {b} exceeds remaining valence")]
    ValenceExceeded { a: usize, b: usize, order: u8 },
    #[error("implicit hydrogen count {h} on atom {atom} exceeds remaining valence")]
    HydrogenOverflow { atom: usize, h: u8 },
    #[error("invalid bond order {0}")]
    InvalidBondOrder(u8),
}

/// One of the three modelled bond types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub const ALL: [BondOrder; 3] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple];

    pub fn order(self) -> u8 {
        self as u8
    }

    /// Zero-based index used for one-hot encodings and per-type weights.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_order(order: u8) -> Result<Self, GraphError> {
        match order {
            1 => Ok(BondOrder::Single),
            2 => Ok(BondOrder::Double),
            3 => Ok(BondOrder::Triple),
            other => Err(GraphError::InvalidBondOrder(other)),
        }
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Index into the vocabulary the graph was built with.
    pub kind: usize,
    pub valence: u8,
    pub implicit_h: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Labeled graph of typed heavy atoms and typed bonds.
///
/// Every mutation goes through [`MolecularGraph::add_bond`] or
/// [`MolecularGraph::set_implicit_h`], both of which refuse to push an atom
/// past its valence, so `remaining_valence` can never underflow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    // (neighbor, bond index) per atom
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, index: usize) -> Result<&Atom, GraphError> {
        self.atoms.get(index).ok_or(GraphError::AtomOutOfRange {
            index,
            len: self.atoms.len(),
        })
    }

    /// Appends a bond-free atom of vocabulary type `kind` and returns its index.
    pub fn add_atom(&mut self, vocab: &AtomVocabulary, kind: usize) -> usize {
        let valence = vocab.types()[kind].valence;
        self.push_atom(kind, valence)
    }

    /// Appends an atom with an explicit valence, bypassing the vocabulary.
    pub fn push_atom(&mut self, kind: usize, valence: u8) -> usize {
        self.atoms.push(Atom {
            kind,
            valence,
            implicit_h: 0,
        });
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    fn check_index(&self, index: usize) -> Result<(), GraphError> {
        if index < self.atoms.len() {
            Ok(())
        } else {
            Err(GraphError::AtomOutOfRange {
                index,
                len: self.atoms.len(),
            })
        }
    }

    pub fn bond_order_sum(&self, atom: usize) -> u32 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.order() as u32)
            .sum()
    }

    /// Valence left after incident bonds and implicit hydrogens.
    pub fn remaining_valence(&self, atom: usize) -> Result<u8, GraphError> {
        self.check_index(atom)?;
        let a = &self.atoms[atom];
        let used = self.bond_order_sum(atom) + a.implicit_h as u32;
        Ok((a.valence as u32).saturating_sub(used) as u8)
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.adjacency[atom]
            .iter()
            .map(move |&(n, b)| (n, self.bonds[b].order))
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondOrder> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| self.bonds[bi].order)
    }

    /// Adds a bond if it keeps both endpoints within their valence.
    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), GraphError> {
        self.check_index(a)?;
        self.check_index(b)?;
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        if self.bond_between(a, b).is_some() {
            return Err(GraphError::DuplicateBond(a, b));
        }
        if self.remaining_valence(a)? < order.order() || self.remaining_valence(b)? < order.order() {
            return Err(GraphError::ValenceExceeded {
                a,
                b,
                order: order.order(),
            });
        }
        let index = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push((b, index));
        self.adjacency[b].push((a, index));
        Ok(())
    }

    pub fn set_implicit_h(&mut self, atom: usize, h: u8) -> Result<(), GraphError> {
        self.check_index(atom)?;
        let capacity = self.atoms[atom].valence as u32;
        if self.bond_order_sum(atom) + h as u32 > capacity {
            return Err(GraphError::HydrogenOverflow { atom, h });
        }
        self.atoms[atom].implicit_h = h;
        Ok(())
    }

    /// True when every atom's bonds plus hydrogens exactly fill its valence.
    pub fn is_valence_valid(&self) -> bool {
        (0..self.len()).all(|i| {
            self.bond_order_sum(i) + self.atoms[i].implicit_h as u32 == self.atoms[i].valence as u32
        })
    }

    /// Raises implicit hydrogen counts until every atom is saturated.
    pub fn complete_with_hydrogens(&self) -> MolecularGraph {
        let mut out = self.clone();
        for i in 0..out.len() {
            let free = out.remaining_valence(i).expect("index in range");
            out.atoms[i].implicit_h += free;
        }
        out
    }

    /// Drops atoms without bonds, keeping the relative order of the rest.
    pub fn remove_isolated_atoms(&self) -> MolecularGraph {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.degree(i) > 0).collect();
        self.induced_subgraph(&keep)
    }

    /// Subgraph on `keep` (in that order) with the bonds among those atoms.
    pub fn induced_subgraph(&self, keep: &[usize]) -> MolecularGraph {
        let mut map = vec![usize::MAX; self.len()];
        let mut out = MolecularGraph::new();
        for &old in keep {
            let a = self.atoms[old];
            map[old] = out.push_atom(a.kind, a.valence);
            out.atoms[map[old]].implicit_h = a.implicit_h;
        }
        for bond in &self.bonds {
            let (a, b) = (map[bond.a], map[bond.b]);
            if a != usize::MAX && b != usize::MAX {
                let index = out.bonds.len();
                out.bonds.push(Bond {
                    a,
                    b,
                    order: bond.order,
                });
                out.adjacency[a].push((b, index));
                out.adjacency[b].push((a, index));
            }
        }
        out
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.len(), "permutation length");
        let mut inverse = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let mut out = MolecularGraph::new();
        for &old in &inverse {
            let a = self.atoms[old];
            let i = out.push_atom(a.kind, a.valence);
            out.atoms[i].implicit_h = a.implicit_h;
        }
        for bond in &self.bonds {
            out.add_bond_unchecked(perm[bond.a], perm[bond.b], bond.order);
        }
        out
    }

    fn add_bond_unchecked(&mut self, a: usize, b: usize, order: BondOrder) {
        let index = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push((b, index));
        self.adjacency[b].push((a, index));
    }

    pub fn is_connected(&self) -> bool {
        if self.is_empty() {
            return false;
        }
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Hop distances from `source`; `None` for unreachable atoms.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &(u, _) in &self.adjacency[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.len()
    }

    /// Counts atoms per valence value; implicit hydrogens land in bucket 1
    /// when `include_hydrogens` is set. Atoms above `nu` are not counted.
    pub fn valence_histogram(&self, nu: usize, include_hydrogens: bool) -> ValenceHistogram {
        let mut counts = vec![0u32; nu];
        for atom in &self.atoms {
            let v = atom.valence as usize;
            if (1..=nu).contains(&v) {
                counts[v - 1] += 1;
            }
            if include_hydrogens && nu >= 1 {
                counts[0] += atom.implicit_h as u32;
            }
        }
        ValenceHistogram::from_counts(counts)
    }

    /// Bonds as sorted `(low, high, order)` triples.
    pub fn bond_set(&self) -> Vec<(usize, usize, u8)> {
        let mut out: Vec<_> = self
            .bonds
            .iter()
            .map(|b| (b.a.min(b.b), b.a.max(b.b), b.order.order()))
            .collect();
        out.sort_unstable();
        out
    }

    /// Same atoms at the same indices and the same bonds, ignoring bond
    /// insertion order.
    pub fn same_labelled_graph(&self, other: &MolecularGraph) -> bool {
        self.atoms == other.atoms && self.bond_set() == other.bond_set()
    }

    /// Permutation-invariant identifier; equal for isomorphic graphs.
    pub fn canonical_form(&self) -> String {
        canon::canonical_form(self)
    }
}

impl fmt::Display for MolecularGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical_form())
    }
}
