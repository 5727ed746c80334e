use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainingError;
use crate::chemgraph::MolecularGraph;
use crate::decoder::{BondPlan, EdgeChoice};
use crate::histogram::ValenceHistogram;

/// One Monte Carlo breadth-first construction order for a molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherTrajectory {
    /// Focus atoms in the order they are visited.
    pub visit_order: Vec<usize>,
    pub plan: BondPlan,
    pub types: Vec<usize>,
    pub alpha0: ValenceHistogram,
}

/// Random start atom; each focus emits its not-yet-placed bonds in random
/// order, then stop. Atoms join the queue on their first bond, mirroring
/// the decoder's queue discipline exactly.
pub fn build_trajectory<R: Rng + ?Sized>(
    g: &MolecularGraph,
    nu: usize,
    rng: &mut R,
) -> Result<TeacherTrajectory, TrainingError> {
    if g.is_empty() {
        return Err(TrainingError::EmptyGraph);
    }
    if !g.is_connected() {
        return Err(TrainingError::Disconnected);
    }
    let n = g.len();
    let start = rng.random_range(0..n);
    let mut placed = vec![false; g.bonds().len()];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    let mut visit_order = Vec::with_capacity(n);
    let mut decisions = Vec::new();
    let mut focus = start;
    seen[start] = true;
    let bond_index = |a: usize, b: usize| {
        g.bonds()
            .iter()
            .position(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
            .expect("neighbour implies bond")
    };
    loop {
        visit_order.push(focus);
        let mut pending: Vec<(usize, usize)> = g
            .neighbors(focus)
            .map(|(u, _)| (u, bond_index(focus, u)))
            .filter(|&(_, b)| !placed[b])
            .collect();
        pending.sort_unstable();
        pending.shuffle(rng);
        for (u, b) in pending {
            placed[b] = true;
            decisions.push(EdgeChoice::Bond {
                target: u,
                order: g.bonds()[b].order,
            });
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
        decisions.push(EdgeChoice::Stop);
        match queue.pop_front() {
            Some(next) => focus = next,
            None => break,
        }
    }
    Ok(TeacherTrajectory {
        visit_order,
        plan: BondPlan { start, decisions },
        types: g.atoms().iter().map(|a| a.kind).collect(),
        alpha0: g.valence_histogram(nu, false),
    })
}
