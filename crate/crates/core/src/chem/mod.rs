//! Molecular text formats, graphs, fingerprints and 2D depiction.
//!
//! SMILES input is restricted to the organic subset plus bracket atoms;
//! aromaticity is taken from lowercase notation as written, with no valence
//! model and no kekulization. Stereo markers are tokenized and ignored.

mod fingerprint;
mod layout;
mod render;
mod selfies;
mod smiles;

pub use fingerprint::{dice_similarity, morgan_fingerprint, tanimoto_similarity, Fingerprint};
pub use layout::layout_2d;
pub use render::{render_image, MolecularImage};
pub use selfies::tokenize_selfies;
pub use smiles::{lex_smiles, parse_smiles, tokenize_smiles, SmilesToken, TokenKind};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Errors produced while lexing or parsing SMILES input.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("unknown character at byte {0}")]
    UnknownCharacter(usize),
    #[error("ring bond {0} opened but never closed")]
    UnmatchedRingBond(u8),
    #[error("unbalanced parenthesis at byte {0}")]
    UnbalancedParenthesis(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("bond symbol with no atom to attach at byte {0}")]
    DanglingBond(usize),
    #[error("ring bond {0} would form a self-loop")]
    RingSelfLoop(u8),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("ring bond {0} closed with conflicting bond orders")]
    RingOrderConflict(u8),
}

/// Errors produced while tokenizing SELFIES input.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelfiesError {
    #[error("malformed bracket group at byte {0}")]
    MalformedBracket(usize),
}

/// The element subset accepted by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    H,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::H,
    ];

    /// Stable small integer used in hashing and featurization.
    pub fn code(self) -> u8 {
        match self {
            Element::B => 0,
            Element::C => 1,
            Element::N => 2,
            Element::O => 3,
            Element::P => 4,
            Element::S => 5,
            Element::F => 6,
            Element::Cl => 7,
            Element::Br => 8,
            Element::I => 9,
            Element::H => 10,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::H => "H",
        }
    }

    fn from_symbol(s: &str) -> Option<Element> {
        Some(match s {
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "P" => Element::P,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            "H" => Element::H,
            _ => return None,
        })
    }
}

/// Bond multiplicity. Aromatic is its own class rather than an order of 1.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Stable small integer used in hashing and featurization.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i32,
    pub explicit_h: u32,
    pub isotope: Option<u32>,
}

impl Atom {
    pub fn plain(element: Element) -> Atom {
        Atom {
            element,
            aromatic: false,
            formal_charge: 0,
            explicit_h: 0,
            isotope: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Undirected simple graph of atoms and bonds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Per-atom list of (neighbor atom index, bond index).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn new() -> MolecularGraph {
        MolecularGraph {
            atoms: Vec::new(),
            bonds: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    /// Adds an undirected bond. Rejects self-loops and duplicate edges so the
    /// graph stays simple.
    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<usize, SmilesError> {
        assert!(a < self.atoms.len() && b < self.atoms.len(), "bond endpoint out of range");
        if a == b {
            return Err(SmilesError::RingSelfLoop(0));
        }
        if self.adjacency[a].iter().any(|&(n, _)| n == b) {
            return Err(SmilesError::DuplicateBond(a.min(b), a.max(b)));
        }
        let idx = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push((b, idx));
        self.adjacency[b].push((a, idx));
        Ok(idx)
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbors of `v` as (atom index, bond index) pairs, in insertion order.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }
}

impl Default for MolecularGraph {
    fn default() -> Self {
        MolecularGraph::new()
    }
}

/// Order-preserving symbol table mapping token text to dense indices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

// The index is a cache rebuilt on demand; identity is the symbol list.
impl PartialEq for Vocab {
    fn eq(&self, other: &Vocab) -> bool {
        self.symbols == other.symbols
    }
}

impl Eq for Vocab {}

impl Vocab {
    pub fn new() -> Vocab {
        Vocab::default()
    }

    /// Returns the index of `symbol`, inserting it on first sight.
    pub fn intern(&mut self, symbol: &str) -> usize {
        if let Some(&i) = self.index.get(symbol) {
            return i;
        }
        // Rebuild lazily after deserialization, where the map is skipped.
        if self.index.len() != self.symbols.len() {
            self.index = self
                .symbols
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i))
                .collect();
            if let Some(&i) = self.index.get(symbol) {
                return i;
            }
        }
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), self.symbols.len() - 1);
        self.symbols.len() - 1
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        if !self.index.is_empty() || self.symbols.is_empty() {
            return self.index.get(symbol).copied();
        }
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// A tokenized string: dense token indices plus the vocabulary they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub vocab: Vocab,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token texts in sequence order.
    pub fn lexemes(&self) -> Vec<&str> {
        self.tokens.iter().map(|&t| self.vocab.symbol(t)).collect()
    }
}

/// One-hot encodes a token sequence into a `max_len x vocab_size` matrix.
///
/// Rows past the sequence end are zero; tokens past `max_len` are dropped.
pub fn one_hot_encode(seq: &TokenSequence, max_len: usize) -> Vec<Vec<f64>> {
    let cols = seq.vocab.len();
    let mut rows = vec![vec![0.0; cols]; max_len];
    for (i, &t) in seq.tokens.iter().take(max_len).enumerate() {
        rows[i][t] = 1.0;
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_interns_in_first_appearance_order() {
        let mut v = Vocab::new();
        assert_eq!(v.intern("C"), 0);
        assert_eq!(v.intern("O"), 1);
        assert_eq!(v.intern("C"), 0);
        assert_eq!(v.symbol(1), "O");
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn graph_rejects_self_loop_and_duplicate() {
        let mut g = MolecularGraph::new();
        let a = g.add_atom(Atom::plain(Element::C));
        let b = g.add_atom(Atom::plain(Element::C));
        assert!(g.add_bond(a, a, BondOrder::Single).is_err());
        g.add_bond(a, b, BondOrder::Single).unwrap();
        assert_eq!(
            g.add_bond(b, a, BondOrder::Single),
            Err(SmilesError::DuplicateBond(0, 1))
        );
        assert_eq!(g.degree(a), 1);
    }

    #[test]
    fn one_hot_pads_and_truncates() {
        let mut vocab = Vocab::new();
        let c = vocab.intern("C");
        let o = vocab.intern("O");
        let seq = TokenSequence {
            tokens: vec![c, o, c],
            vocab,
        };
        let m = one_hot_encode(&seq, 5);
        assert_eq!(m.len(), 5);
        assert_eq!(m[0], vec![1.0, 0.0]);
        assert_eq!(m[1], vec![0.0, 1.0]);
        assert_eq!(m[2], vec![1.0, 0.0]);
        assert_eq!(m[3], vec![0.0, 0.0]);
        assert_eq!(m[4], vec![0.0, 0.0]);

        let truncated = one_hot_encode(
            &TokenSequence {
                tokens: vec![0, 1, 0],
                vocab: {
                    let mut v = Vocab::new();
                    v.intern("C");
                    v.intern("O");
                    v
                },
            },
            2,
        );
        assert_eq!(truncated.len(), 2);
        assert_eq!(truncated[1], vec![0.0, 1.0]);
    }
}
