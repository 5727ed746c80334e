use crate::chemgraph::MolecularGraph;
use crate::util::fnv1a64;

use super::MetricsError;

pub const DEFAULT_WIDTH: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

/// Folded bit vector of hashed rooted substructures.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    width: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(width: usize) -> Self {
        Self {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn from_bits(width: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::empty(width);
        for b in bits {
            fp.set(b % width);
        }
        fp
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&b| self.get(b))
    }
}

fn mix(parts: &[u64]) -> u64 {
    let bytes: Vec<u8> = parts.iter().flat_map(|p| p.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

/// Morgan-style circular fingerprint: each atom starts from its own
/// invariants and absorbs its sorted neighbourhood once per radius step;
/// every identifier seen at any radius sets one folded bit.
pub fn fingerprint(g: &MolecularGraph, width: usize, radius: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(width);
    let mut ids: Vec<u64> = g
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| mix(&[a.kind as u64, a.valence as u64, a.implicit_h as u64, g.degree(i) as u64]))
        .collect();
    for &id in &ids {
        fp.set((id % width as u64) as usize);
    }
    for round in 1..=radius {
        let next: Vec<u64> = (0..g.len())
            .map(|v| {
                let mut env: Vec<(u64, u64)> = g.neighbors(v).map(|(u, o)| (o.order() as u64, ids[u])).collect();
                env.sort_unstable();
                let mut parts = vec![round as u64, ids[v]];
                for (o, id) in env {
                    parts.push(o);
                    parts.push(id);
                }
                mix(&parts)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % width as u64) as usize);
        }
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, and 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, MetricsError> {
    if a.width != b.width {
        return Err(MetricsError::WidthMismatch(a.width, b.width));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    Ok(if either == 0 { 1.0 } else { both as f64 / either as f64 })
}
