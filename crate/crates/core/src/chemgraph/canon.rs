//! Canonical atom ordering by colour refinement plus individualization.
//!
//! Atoms start coloured by their local invariants, and colours are refined
//! from neighbour colour multisets until stable. Remaining ties are broken
//! by trying every atom of the first non-singleton cell and keeping the
//! lexicographically smallest encoding, which makes the result exact for
//! graphs up to [`EXHAUSTIVE_LIMIT`] atoms. Larger graphs break residual ties
//! by input index and are only refinement-canonical.

use std::fmt::Write;

use super::MolecularGraph;

pub const EXHAUSTIVE_LIMIT: usize = 64;

type Code = Vec<u32>;

fn rank_by_key<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn initial_colors(g: &MolecularGraph) -> Vec<usize> {
    let keys: Vec<(usize, u8, u8, usize, Vec<u8>)> = (0..g.len())
        .map(|i| {
            let a = g.atoms()[i];
            let mut orders: Vec<u8> = g.neighbors(i).map(|(_, o)| o.order()).collect();
            orders.sort_unstable();
            (a.kind, a.valence, a.implicit_h, g.degree(i), orders)
        })
        .collect();
    rank_by_key(&keys)
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().copied().max().map_or(0, |m| m + 1)
}

fn refine(g: &MolecularGraph, mut colors: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&colors);
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..g.len())
            .map(|i| {
                let mut around: Vec<(u8, usize)> =
                    g.neighbors(i).map(|(n, o)| (o.order(), colors[n])).collect();
                around.sort_unstable();
                (colors[i], around)
            })
            .collect();
        let next = rank_by_key(&keys);
        let next_classes = class_count(&next);
        colors = next;
        if next_classes == classes {
            return colors;
        }
        classes = next_classes;
    }
}

fn encode(g: &MolecularGraph, colors: &[usize]) -> Code {
    // colors form a permutation here: color = canonical position
    let mut order = vec![0; g.len()];
    for (atom, &c) in colors.iter().enumerate() {
        order[c] = atom;
    }
    let mut code = Vec::with_capacity(3 * g.len() + 3 * g.bonds().len());
    for &atom in &order {
        let a = g.atoms()[atom];
        code.extend([a.kind as u32, a.valence as u32, a.implicit_h as u32]);
    }
    let mut bonds: Vec<(u32, u32, u32)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (colors[b.a] as u32, colors[b.b] as u32);
            (x.min(y), x.max(y), b.order.order() as u32)
        })
        .collect();
    bonds.sort_unstable();
    for (x, y, o) in bonds {
        code.extend([x, y, o]);
    }
    code
}

fn individualize(colors: &[usize], atom: usize) -> Vec<usize> {
    let keys: Vec<(usize, bool)> = colors
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i != atom))
        .collect();
    rank_by_key(&keys)
}

fn search(g: &MolecularGraph, colors: Vec<usize>, best: &mut Option<(Code, Vec<usize>)>) {
    let n = colors.len();
    if class_count(&colors) == n {
        let code = encode(g, &colors);
        if best.as_ref().is_none_or(|(b, _)| code < *b) {
            *best = Some((code, colors));
        }
        return;
    }
    let mut sizes = vec![0usize; n];
    for &c in &colors {
        sizes[c] += 1;
    }
    let target = (0..n).find(|&c| sizes[c] > 1).expect("a non-singleton cell exists");
    let members: Vec<usize> = (0..n).filter(|&i| colors[i] == target).collect();
    for atom in members {
        let split = refine(g, individualize(&colors, atom));
        search(g, split, best);
    }
}

/// Canonical position of every atom: `ranking[atom]` is its slot in the
/// canonical order. Isomorphic graphs get orderings related by the isomorphism.
pub fn canonical_ranking(g: &MolecularGraph) -> Vec<usize> {
    if g.is_empty() {
        return Vec::new();
    }
    let colors = refine(g, initial_colors(g));
    if g.len() > EXHAUSTIVE_LIMIT {
        let keys: Vec<(usize, usize)> = colors.iter().copied().zip(0..).collect();
        return rank_by_key(&keys);
    }
    let mut best = None;
    search(g, colors, &mut best);
    best.expect("search visits at least one leaf").1
}

pub(super) fn canonical_form(g: &MolecularGraph) -> String {
    let ranking = canonical_ranking(g);
    let code = encode(g, &ranking);
    let atoms = 3 * g.len();
    let mut out = String::new();
    for (i, chunk) in code[..atoms].chunks(3).enumerate() {
        if i > 0 {
            out.push('.');
        }
        let _ = write!(out, "{}v{}h{}", chunk[0], chunk[1], chunk[2]);
    }
    out.push('|');
    for (i, chunk) in code[atoms..].chunks(3).enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}-{}:{}", chunk[0], chunk[1], chunk[2]);
    }
    out
}
