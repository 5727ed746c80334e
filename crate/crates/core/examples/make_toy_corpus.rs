//! Writes a deterministic synthetic corpus of small C/N/O/F molecules
//! (at most 9 heavy atoms) as one SMILES per line.
//!
//! cargo run -p ccgvae --example make_toy_corpus -- data/toy_qm9.smi

use std::collections::HashSet;

use ccgvae::chemgraph::{AtomVocabulary, BondOrder, MolecularGraph};
use ccgvae::util::{sample_weighted, stream_rng};
use ccgvae::write_smiles;
use rand::Rng;

const COUNT: usize = 500;

fn random_molecule<R: Rng>(vocab: &AtomVocabulary, rng: &mut R) -> MolecularGraph {
    // C, N, O, F
    let type_weights = [0.62, 0.14, 0.2, 0.04];
    let size_weights = [0.01, 0.01, 0.02, 0.03, 0.05, 0.08, 0.15, 0.25, 0.4];
    let n = sample_weighted(&size_weights, rng).unwrap() + 1;
    let mut g = MolecularGraph::new();
    g.add_atom(vocab, 0);
    while g.len() < n {
        let open: Vec<usize> = (0..g.len()).filter(|&i| g.remaining_valence(i).unwrap() > 0).collect();
        if open.is_empty() {
            break;
        }
        let parent = open[rng.random_range(0..open.len())];
        let kind = sample_weighted(&type_weights, rng).unwrap();
        if g.len() + 1 < n && vocab.valence(kind) == 1 {
            continue;
        }
        let child = g.add_atom(vocab, kind);
        let cap = g.remaining_valence(parent).unwrap().min(g.remaining_valence(child).unwrap());
        let order = match rng.random_range(0..10) {
            0..=6 => 1,
            7..=8 => 2,
            _ => 3,
        }
        .min(cap);
        g.add_bond(parent, child, BondOrder::from_order(order).unwrap()).unwrap();
    }
    let closures = sample_weighted(&[0.55, 0.35, 0.1], rng).unwrap();
    for _ in 0..closures {
        let open: Vec<usize> = (0..g.len()).filter(|&i| g.remaining_valence(i).unwrap() > 0).collect();
        let pairs: Vec<(usize, usize)> = open
            .iter()
            .flat_map(|&a| open.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a < b && g.bond_between(a, b).is_none())
            .filter(|&(a, b)| g.bfs_distances(a)[b].is_some_and(|d| d >= 2))
            .collect();
        if pairs.is_empty() {
            break;
        }
        let (a, b) = pairs[rng.random_range(0..pairs.len())];
        g.add_bond(a, b, BondOrder::Single).unwrap();
    }
    g.complete_with_hydrogens()
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/toy_qm9.smi".into());
    let vocab = AtomVocabulary::qm9();
    let mut rng = stream_rng(20190501, 0);
    let mut seen = HashSet::new();
    let mut lines = vec!["# synthetic QM9-like corpus: C/N/O/F, at most 9 heavy atoms".to_string()];
    while seen.len() < COUNT {
        let g = random_molecule(&vocab, &mut rng);
        if seen.insert(g.canonical_form()) {
            lines.push(write_smiles(&g, &vocab).unwrap());
        }
    }
    std::fs::write(&out, lines.join("\n") + "\n").unwrap();
    eprintln!("wrote {COUNT} molecules to {out}");
}
