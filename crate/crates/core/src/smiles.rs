//! SMILES reading and writing for the modelled chemistry.
//!
//! Supported: organic-subset atoms, bracket atoms with an explicit hydrogen
//! count, `-` `=` `#` `:` bonds, branches, and ring closures `0-9` / `%nn`.
//! Aromatic lowercase atoms are kekulized into alternating single/double
//! bonds. Charges, isotopes, chirality, directional bonds and dot-separated
//! components are rejected as unsupported.

use std::collections::HashMap;

use thiserror::Error;

use crate::chemgraph::{canonical_ranking, AtomVocabulary, BondOrder, GraphError, MolecularGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unsupported feature `{feature}` at position {position}")]
    Unsupported { position: usize, feature: String },
    #[error("element `{symbol}` at position {position} is not in the vocabulary")]
    UnknownElement { position: usize, symbol: String },
    #[error("ring closure {0} never closed")]
    UnclosedRing(u32),
    #[error("atom {atom} exceeds its valence")]
    ValenceOverflow { atom: usize },
    #[error("bracket atom {atom} leaves {free} valence unfilled")]
    ValenceMismatch { atom: usize, free: u8 },
    #[error("aromatic system cannot be kekulized")]
    Kekulization,
    #[error("cannot write a disconnected graph")]
    Disconnected,
    #[error("cannot write an empty graph")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

const ORGANIC: [&str; 10] = ["Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC: [char; 6] = ['b', 'c', 'n', 'o', 'p', 's'];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawBond {
    Order(BondOrder),
    Aromatic,
}

#[derive(Debug)]
struct RawAtom {
    kind: usize,
    aromatic: bool,
    // explicit hydrogen count for bracket atoms
    fixed_h: Option<u8>,
    position: usize,
}

struct Parser<'a> {
    chars: Vec<char>,
    vocab: &'a AtomVocabulary,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, position: usize, message: impl Into<String>) -> SmilesError {
        SmilesError::Syntax {
            position: position + 1,
            message: message.into(),
        }
    }

    fn unsupported(&self, position: usize, feature: impl Into<String>) -> SmilesError {
        SmilesError::Unsupported {
            position: position + 1,
            feature: feature.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn lookup(&self, symbol: &str, position: usize) -> Result<usize, SmilesError> {
        self.vocab
            .index_of(symbol)
            .ok_or_else(|| SmilesError::UnknownElement {
                position: position + 1,
                symbol: symbol.to_string(),
            })
    }

    fn organic_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let start = self.pos;
        let c = self.chars[self.pos];
        if AROMATIC.contains(&c) {
            self.pos += 1;
            let symbol = c.to_ascii_uppercase().to_string();
            return Ok(RawAtom {
                kind: self.lookup(&symbol, start)?,
                aromatic: true,
                fixed_h: None,
                position: start,
            });
        }
        for sym in ORGANIC {
            let len = sym.len();
            if self.chars.len() >= self.pos + len
                && self.chars[self.pos..self.pos + len].iter().copied().eq(sym.chars())
            {
                self.pos += len;
                return Ok(RawAtom {
                    kind: self.lookup(sym, start)?,
                    aromatic: false,
                    fixed_h: None,
                    position: start,
                });
            }
        }
        Err(self.err(start, format!("unexpected character `{c}`")))
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(self.unsupported(self.pos, "isotope"));
        }
        let start = self.pos;
        let (symbol, aromatic) = match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                self.pos += 1;
                let mut s = c.to_string();
                if let Some(n) = self.peek().filter(|n| n.is_ascii_lowercase() && *n != 'h') {
                    // two-letter element, unless the lowercase letter is an H count
                    s.push(n);
                    self.pos += 1;
                }
                (s, false)
            }
            Some(c) if c.is_ascii_lowercase() => {
                self.pos += 1;
                let mut s = c.to_ascii_uppercase().to_string();
                if c == 's' && self.peek() == Some('e') {
                    s.push('e');
                    self.pos += 1;
                }
                (s, true)
            }
            _ => return Err(self.err(start, "expected element symbol in bracket atom")),
        };
        let kind = self.lookup(&symbol, start)?;
        if symbol == "H" {
            return Err(self.unsupported(start, "explicit hydrogen atom"));
        }
        let mut h = 0u8;
        loop {
            match self.peek() {
                Some('@') => return Err(self.unsupported(self.pos, "chirality")),
                Some('+') | Some('-') => return Err(self.unsupported(self.pos, "charge")),
                Some(':') => return Err(self.unsupported(self.pos, "atom class")),
                Some('H') => {
                    self.pos += 1;
                    h = 1;
                    if let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                        self.pos += 1;
                        h = d as u8;
                    }
                }
                Some(']') => {
                    self.pos += 1;
                    break;
                }
                Some(c) => return Err(self.err(self.pos, format!("unexpected `{c}` in bracket atom"))),
                None => return Err(self.err(open, "unterminated bracket atom")),
            }
        }
        Ok(RawAtom {
            kind,
            aromatic,
            fixed_h: Some(h),
            position: start,
        })
    }

    fn ring_number(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.chars[self.pos] == '%' {
            let digits: Option<Vec<u32>> = (1..=2)
                .map(|k| self.chars.get(self.pos + k).and_then(|c| c.to_digit(10)))
                .collect();
            let digits = digits.ok_or_else(|| self.err(start, "`%` must be followed by two digits"))?;
            self.pos += 3;
            Ok(digits[0] * 10 + digits[1])
        } else {
            let d = self.chars[self.pos].to_digit(10).expect("caller checked digit");
            self.pos += 1;
            Ok(d)
        }
    }
}

type ParsedTopology = (Vec<RawAtom>, Vec<(usize, usize, Option<RawBond>)>);

fn tokenize(parser: &mut Parser) -> Result<ParsedTopology, SmilesError> {
    let mut atoms: Vec<RawAtom> = Vec::new();
    let mut bonds: Vec<(usize, usize, Option<RawBond>)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branch_stack: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(RawBond, usize)> = None;
    let mut rings: HashMap<u32, (usize, Option<RawBond>, usize)> = HashMap::new();

    if parser.chars.is_empty() {
        return Err(parser.err(0, "empty SMILES"));
    }
    while let Some(c) = parser.peek() {
        let here = parser.pos;
        match c {
            '(' => {
                let anchor = prev.ok_or_else(|| parser.err(here, "branch before any atom"))?;
                if pending.is_some() {
                    return Err(parser.err(here, "bond symbol before branch"));
                }
                branch_stack.push((anchor, here));
                parser.pos += 1;
            }
            ')' => {
                let (anchor, _) = branch_stack
                    .pop()
                    .ok_or_else(|| parser.err(here, "unbalanced `)`"))?;
                if pending.is_some() {
                    return Err(parser.err(here, "dangling bond before `)`"));
                }
                if parser.chars.get(here.wrapping_sub(1)) == Some(&'(') {
                    return Err(parser.err(here, "empty branch"));
                }
                prev = Some(anchor);
                parser.pos += 1;
            }
            '-' | '=' | '#' | ':' => {
                if prev.is_none() {
                    return Err(parser.err(here, "bond before any atom"));
                }
                if pending.is_some() {
                    return Err(parser.err(here, "two consecutive bond symbols"));
                }
                let bond = match c {
                    '-' => RawBond::Order(BondOrder::Single),
                    '=' => RawBond::Order(BondOrder::Double),
                    '#' => RawBond::Order(BondOrder::Triple),
                    _ => RawBond::Aromatic,
                };
                pending = Some((bond, here));
                parser.pos += 1;
            }
            '$' => return Err(parser.unsupported(here, "quadruple bond")),
            '/' | '\\' => return Err(parser.unsupported(here, "directional bond")),
            '.' => return Err(parser.unsupported(here, "disconnected components")),
            '*' => return Err(parser.unsupported(here, "wildcard atom")),
            '%' | '0'..='9' => {
                let atom = prev.ok_or_else(|| parser.err(here, "ring closure before any atom"))?;
                let number = parser.ring_number()?;
                let bond = pending.take().map(|(b, _)| b);
                match rings.remove(&number) {
                    Some((other, other_bond, _)) => {
                        if other == atom {
                            return Err(parser.err(here, "ring closure to the same atom"));
                        }
                        let resolved = match (other_bond, bond) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(parser.err(here, "conflicting ring-closure bond symbols"))
                            }
                            (a, b) => a.or(b),
                        };
                        bonds.push((other, atom, resolved));
                    }
                    None => {
                        rings.insert(number, (atom, bond, here));
                    }
                }
            }
            '[' | 'A'..='Z' | 'a'..='z' => {
                let atom = if c == '[' {
                    parser.bracket_atom()?
                } else {
                    parser.organic_atom()?
                };
                atoms.push(atom);
                let index = atoms.len() - 1;
                if let Some(p) = prev {
                    bonds.push((p, index, pending.take().map(|(b, _)| b)));
                } else if let Some((_, at)) = pending {
                    return Err(parser.err(at, "bond before any atom"));
                }
                prev = Some(index);
            }
            ']' => return Err(parser.err(here, "unmatched `]`")),
            other => return Err(parser.err(here, format!("unexpected character `{other}`"))),
        }
    }
    if let Some((_, at)) = pending {
        return Err(parser.err(at, "dangling bond at end of input"));
    }
    if let Some(&(_, at)) = branch_stack.last() {
        return Err(parser.err(at, "unclosed branch"));
    }
    if let Some((&number, _)) = rings.iter().min_by_key(|(_, v)| v.2) {
        return Err(SmilesError::UnclosedRing(number));
    }
    Ok((atoms, bonds))
}

/// Parses a SMILES string into a valence-valid graph over `vocab`.
pub fn parse_smiles(s: &str, vocab: &AtomVocabulary) -> Result<MolecularGraph, SmilesError> {
    let mut parser = Parser {
        chars: s.chars().collect(),
        vocab,
        pos: 0,
    };
    let (atoms, raw_bonds) = tokenize(&mut parser)?;

    let n = atoms.len();
    let mut seen = std::collections::HashSet::new();
    let mut orders: Vec<(usize, usize, Option<BondOrder>)> = Vec::with_capacity(raw_bonds.len());
    for (a, b, bond) in raw_bonds {
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(SmilesError::Syntax {
                position: atoms[b].position + 1,
                message: format!("atoms {a} and {b} bonded twice"),
            });
        }
        let resolved = match bond {
            Some(RawBond::Order(o)) => Some(o),
            Some(RawBond::Aromatic) => None,
            None if atoms[a].aromatic && atoms[b].aromatic => None,
            None => Some(BondOrder::Single),
        };
        if resolved.is_none() && !(atoms[a].aromatic && atoms[b].aromatic) {
            return Err(SmilesError::Syntax {
                position: atoms[b].position + 1,
                message: "aromatic bond between non-aromatic atoms".into(),
            });
        }
        orders.push((a, b, resolved));
    }

    let valence: Vec<u32> = atoms.iter().map(|a| vocab.valence(a.kind) as u32).collect();
    // valence consumed by fixed bonds, aromatic bonds counted as single
    let mut sigma = vec![0u32; n];
    for &(a, b, o) in &orders {
        let w = o.map_or(1, |o| o.order() as u32);
        sigma[a] += w;
        sigma[b] += w;
    }
    let mut needs_double = vec![false; n];
    for i in 0..n {
        let used = sigma[i] + atoms[i].fixed_h.unwrap_or(0) as u32;
        if used > valence[i] {
            return Err(SmilesError::ValenceOverflow { atom: i });
        }
        let has_aromatic_bond = orders
            .iter()
            .any(|&(a, b, o)| o.is_none() && (a == i || b == i));
        needs_double[i] = atoms[i].aromatic && has_aromatic_bond && used < valence[i];
    }
    let aromatic_edges: Vec<usize> = (0..orders.len()).filter(|&e| orders[e].2.is_none()).collect();
    let doubled = kekulize(n, &orders, &aromatic_edges, &needs_double).ok_or(SmilesError::Kekulization)?;

    let mut g = MolecularGraph::new();
    for a in &atoms {
        g.add_atom(vocab, a.kind);
    }
    for (e, &(a, b, o)) in orders.iter().enumerate() {
        let order = o.unwrap_or(if doubled[e] { BondOrder::Double } else { BondOrder::Single });
        g.add_bond(a, b, order).map_err(|err| match err {
            GraphError::ValenceExceeded { a, .. } => SmilesError::ValenceOverflow { atom: a },
            other => SmilesError::Graph(other),
        })?;
    }
    for (i, a) in atoms.iter().enumerate() {
        let free = g.remaining_valence(i)?;
        match a.fixed_h {
            None => g.set_implicit_h(i, free)?,
            Some(h) if h > free => return Err(SmilesError::ValenceOverflow { atom: i }),
            Some(h) if h < free => {
                return Err(SmilesError::ValenceMismatch {
                    atom: i,
                    free: free - h,
                })
            }
            Some(h) => g.set_implicit_h(i, h)?,
        }
    }
    Ok(g)
}

/// Picks aromatic edges to double so that every atom in `needs` gets exactly
/// one double bond and no other atom gets any. Backtracking over atoms in
/// index order; `None` when no perfect matching exists.
fn kekulize(
    n: usize,
    bonds: &[(usize, usize, Option<BondOrder>)],
    aromatic_edges: &[usize],
    needs: &[bool],
) -> Option<Vec<bool>> {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &e in aromatic_edges {
        let (a, b, _) = bonds[e];
        if needs[a] && needs[b] {
            incident[a].push(e);
            incident[b].push(e);
        }
    }
    let mut matched = vec![false; n];
    let mut doubled = vec![false; bonds.len()];

    fn go(
        atom: usize,
        bonds: &[(usize, usize, Option<BondOrder>)],
        incident: &[Vec<usize>],
        needs: &[bool],
        matched: &mut [bool],
        doubled: &mut [bool],
    ) -> bool {
        let Some(v) = (atom..needs.len()).find(|&i| needs[i] && !matched[i]) else {
            return true;
        };
        for &e in &incident[v] {
            let (a, b, _) = bonds[e];
            let u = if a == v { b } else { a };
            if matched[u] {
                continue;
            }
            matched[v] = true;
            matched[u] = true;
            doubled[e] = true;
            if go(v + 1, bonds, incident, needs, matched, doubled) {
                return true;
            }
            matched[v] = false;
            matched[u] = false;
            doubled[e] = false;
        }
        false
    }

    go(0, bonds, &incident, needs, &mut matched, &mut doubled).then_some(doubled)
}

fn atom_text(g: &MolecularGraph, vocab: &AtomVocabulary, atom: usize) -> String {
    let a = g.atoms()[atom];
    let symbol = vocab.symbol(a.kind);
    let bare_ok = ORGANIC.contains(&symbol) && vocab.valence(a.kind) == a.valence;
    // bare organic atoms take implicit H from the vocabulary valence
    if bare_ok && g.remaining_valence(atom).unwrap_or(0) == 0 {
        return symbol.to_string();
    }
    match a.implicit_h {
        0 => format!("[{symbol}]"),
        1 => format!("[{symbol}H]"),
        h => format!("[{symbol}H{h}]"),
    }
}

fn bond_text(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn ring_label(n: u32) -> String {
    if n < 10 {
        n.to_string()
    } else {
        format!("%{n}")
    }
}

/// Writes a connected graph as SMILES, traversing atoms in canonical order so
/// isomorphic graphs give identical strings.
pub fn write_smiles(g: &MolecularGraph, vocab: &AtomVocabulary) -> Result<String, SmilesError> {
    if g.is_empty() {
        return Err(SmilesError::Empty);
    }
    if !g.is_connected() {
        return Err(SmilesError::Disconnected);
    }
    let rank = canonical_ranking(g);
    let n = g.len();
    let sorted_neighbors = |v: usize| {
        let mut ns: Vec<(usize, BondOrder)> = g.neighbors(v).collect();
        ns.sort_by_key(|&(u, _)| rank[u]);
        ns
    };
    let root = (0..n).min_by_key(|&i| rank[i]).unwrap();

    // spanning tree by DFS; remaining edges become ring closures
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![(root, usize::MAX)];
    let mut tree_edges = std::collections::HashSet::new();
    while let Some((v, parent)) = stack.pop() {
        if visited[v] {
            continue;
        }
        visited[v] = true;
        order.push(v);
        if parent != usize::MAX {
            tree_edges.insert((parent.min(v), parent.max(v)));
            let o = g.bond_between(parent, v).unwrap();
            children[parent].push((v, o));
        }
        for &(u, _) in sorted_neighbors(v).iter().rev() {
            if !visited[u] {
                stack.push((u, v));
            }
        }
    }
    let position: Vec<usize> = {
        let mut p = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            p[v] = i;
        }
        p
    };
    for b in g.bonds() {
        if !tree_edges.contains(&(b.a.min(b.b), b.a.max(b.b))) {
            closures[b.a].push((b.b, b.order));
            closures[b.b].push((b.a, b.order));
        }
    }
    for list in &mut closures {
        list.sort_by_key(|&(u, _)| position[u]);
    }
    let mut out = String::new();
    let mut open: HashMap<(usize, usize), u32> = HashMap::new();
    let mut free_labels: Vec<u32> = (1..100).rev().collect();
    write_atom(
        g,
        vocab,
        root,
        &children,
        &closures,
        &mut open,
        &mut free_labels,
        &mut out,
    );
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn write_atom(
    g: &MolecularGraph,
    vocab: &AtomVocabulary,
    v: usize,
    children: &[Vec<(usize, BondOrder)>],
    closures: &[Vec<(usize, BondOrder)>],
    open: &mut HashMap<(usize, usize), u32>,
    free_labels: &mut Vec<u32>,
    out: &mut String,
) {
    out.push_str(&atom_text(g, vocab, v));
    for &(u, o) in &closures[v] {
        let key = (v.min(u), v.max(u));
        if let Some(label) = open.remove(&key) {
            out.push_str(bond_text(o));
            out.push_str(&ring_label(label));
            free_labels.push(label);
            free_labels.sort_unstable_by(|a, b| b.cmp(a));
        } else {
            let label = free_labels.pop().expect("fewer than 100 open rings");
            open.insert(key, label);
            out.push_str(bond_text(o));
            out.push_str(&ring_label(label));
        }
    }
    let kids = &children[v];
    for (i, &(u, o)) in kids.iter().enumerate() {
        let last = i + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(o));
        write_atom(g, vocab, u, children, closures, open, free_labels, out);
        if !last {
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qm9() -> AtomVocabulary {
        AtomVocabulary::qm9()
    }

    fn hs(g: &MolecularGraph) -> Vec<u8> {
        g.atoms().iter().map(|a| a.implicit_h).collect()
    }

    #[test]
    fn methane_and_ethanol() {
        let v = qm9();
        let m = parse_smiles("C", &v).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(hs(&m), vec![4]);
        let e = parse_smiles("CCO", &v).unwrap();
        assert_eq!(hs(&e), vec![3, 2, 1]);
        assert_eq!(e.bonds().len(), 2);
        assert!(e.is_valence_valid());
    }

    #[test]
    fn unbalanced_branch_position() {
        assert_eq!(
            parse_smiles("C=O)", &qm9()),
            Err(SmilesError::Syntax {
                position: 4,
                message: "unbalanced `)`".into()
            })
        );
    }

    #[test]
    fn error_kinds() {
        let v = qm9();
        assert!(matches!(parse_smiles("CS", &v), Err(SmilesError::UnknownElement { position: 2, .. })));
        assert!(matches!(parse_smiles("C1CC", &v), Err(SmilesError::UnclosedRing(1))));
        assert!(matches!(parse_smiles("FF=O", &v), Err(SmilesError::ValenceOverflow { .. })));
        assert!(matches!(parse_smiles("C(C", &v), Err(SmilesError::Syntax { position: 2, .. })));
        assert!(matches!(parse_smiles("[NH4+]", &v), Err(SmilesError::Unsupported { .. })));
        assert!(matches!(parse_smiles("[13C]", &v), Err(SmilesError::Unsupported { .. })));
        assert!(matches!(parse_smiles("C[C@H](O)N", &v), Err(SmilesError::Unsupported { .. })));
        assert!(matches!(parse_smiles("C.C", &v), Err(SmilesError::Unsupported { .. })));
        assert!(matches!(parse_smiles("F/C=C/F", &v), Err(SmilesError::Unsupported { .. })));
        assert!(matches!(parse_smiles("c1cccc1", &v), Err(SmilesError::Kekulization)));
        assert!(matches!(parse_smiles("[CH2]", &v), Err(SmilesError::ValenceMismatch { .. })));
        assert!(matches!(parse_smiles("", &v), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_smiles("C11", &v), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_smiles("C1CC1C1", &v), Err(SmilesError::UnclosedRing(1))));
    }

    #[test]
    fn ring_closures_and_bracket_atoms() {
        let v = qm9();
        let g = parse_smiles("C1CC=1", &v).unwrap();
        assert_eq!(g.bond_between(0, 2), Some(BondOrder::Double));
        let g = parse_smiles("C%12CC%12", &v).unwrap();
        assert_eq!(g.bonds().len(), 3);
        let g = parse_smiles("[CH4]", &v).unwrap();
        assert_eq!(hs(&g), vec![4]);
        let g = parse_smiles("N#CC(=O)O", &v).unwrap();
        assert!(g.is_valence_valid());
        assert_eq!(hs(&g), vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn aromatic_rings_are_kekulized() {
        let v = qm9();
        let benzene = parse_smiles("c1ccccc1", &v).unwrap();
        let doubles = benzene
            .bonds()
            .iter()
            .filter(|b| b.order == BondOrder::Double)
            .count();
        assert_eq!(doubles, 3);
        assert!(benzene.atoms().iter().all(|a| a.implicit_h == 1));
        assert_eq!(
            benzene.canonical_form(),
            parse_smiles("C1=CC=CC=C1", &v).unwrap().canonical_form()
        );
        let pyrrole = parse_smiles("c1cc[nH]c1", &v).unwrap();
        assert!(pyrrole.is_valence_valid());
        let furan = parse_smiles("c1ccoc1", &v).unwrap();
        assert_eq!(
            furan.bonds().iter().filter(|b| b.order == BondOrder::Double).count(),
            2
        );
        let pyridine = parse_smiles("n1ccccc1", &v).unwrap();
        assert_eq!(pyridine.atoms()[0].implicit_h, 0);
    }

    #[test]
    fn writer_basics() {
        let v = qm9();
        assert_eq!(write_smiles(&parse_smiles("C", &v).unwrap(), &v).unwrap(), "C");
        let a = parse_smiles("CCO", &v).unwrap();
        let b = parse_smiles("OCC", &v).unwrap();
        assert_eq!(write_smiles(&a, &v).unwrap(), write_smiles(&b, &v).unwrap());
        assert_eq!(write_smiles(&MolecularGraph::new(), &v), Err(SmilesError::Empty));
        let mut two = MolecularGraph::new();
        two.add_atom(&v, 0);
        two.add_atom(&v, 0);
        assert_eq!(write_smiles(&two, &v), Err(SmilesError::Disconnected));
    }

    #[test]
    fn writer_round_trips_rings() {
        let v = qm9();
        for s in ["C1CC2CC1C2", "c1ccc2ccccc2c1", "C12C3C4C1C5C2C3C45", "OC1=CC(=O)C=C1N", "C1CC1C1CC1"] {
            let g = parse_smiles(s, &v).unwrap();
            let written = write_smiles(&g, &v).unwrap();
            let back = parse_smiles(&written, &v).unwrap();
            assert_eq!(back.canonical_form(), g.canonical_form(), "{s} -> {written}");
        }
    }

    #[test]
    fn non_organic_symbols_use_brackets() {
        let v = AtomVocabulary::parse("C 4\nSe 2\n").unwrap();
        let g = parse_smiles("C[SeH]", &v).unwrap();
        let written = write_smiles(&g, &v).unwrap();
        assert!(written.contains("[SeH]"), "{written}");
        assert_eq!(parse_smiles(&written, &v).unwrap().canonical_form(), g.canonical_form());
    }

    proptest! {
        #[test]
        fn parser_never_panics(s in "\\PC{0,24}") {
            let _ = parse_smiles(&s, &qm9());
        }

        #[test]
        fn parser_never_panics_on_smiles_alphabet(s in "[CNOFcno()=#\\[\\]H0-9%+@.\\-]{0,30}") {
            let _ = parse_smiles(&s, &qm9());
        }
    }
}
