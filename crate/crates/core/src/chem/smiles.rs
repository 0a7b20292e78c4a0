//! SMILES lexer and parser for the organic subset plus bracket atoms.
//!
//! Grammar accepted here: bare atoms `B C N O P S F Cl Br I` and their
//! aromatic lowercase forms `b c n o p s`; bracket atoms with optional
//! isotope, chirality (`@`, `@@`, ignored), explicit hydrogen count and
//! formal charge; bond symbols `- = # :`; stereo bond markers `/ \`
//! (tokenized, ignored); ring-closure labels `0`-`9` and `%NN`; branch
//! parentheses. Anything else is rejected with its byte offset.

use super::{Atom, BondOrder, Element, MolecularGraph, SmilesError, TokenSequence, Vocab};
use std::collections::BTreeMap;

/// Lexical class of one SMILES token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare or bracket atom, fully resolved.
    Atom(Atom),
    /// Explicit bond symbol.
    Bond(BondOrder),
    /// `/` or `\`: accepted for coverage, otherwise ignored.
    Stereo,
    /// `(`
    Open,
    /// `)`
    Close,
    /// Ring-closure label (`1`..`9`, `0`, or `%NN`).
    Ring(u8),
}

/// One token with its source text and byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmilesToken {
    pub kind: TokenKind,
    pub text: String,
    pub pos: usize,
}

/// Splits `input` into tokens. Concatenating the returned token texts
/// reproduces `input` exactly.
pub fn lex_smiles(input: &str) -> Result<Vec<SmilesToken>, SmilesError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let pos = i;
        let token = match bytes[i] {
            b'C' if bytes.get(i + 1) == Some(&b'l') => {
                i += 2;
                atom_token(Element::Cl, false, "Cl", pos)
            }
            b'B' if bytes.get(i + 1) == Some(&b'r') => {
                i += 2;
                atom_token(Element::Br, false, "Br", pos)
            }
            c @ (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I') => {
                i += 1;
                let element = Element::from_symbol(&(c as char).to_string()).unwrap();
                atom_token(element, false, &(c as char).to_string(), pos)
            }
            c @ (b'b' | b'c' | b'n' | b'o' | b'p' | b's') => {
                i += 1;
                let element = Element::from_symbol(&(c as char).to_ascii_uppercase().to_string())
                    .unwrap();
                atom_token(element, true, &(c as char).to_string(), pos)
            }
            b'[' => {
                let (atom, end) = lex_bracket(bytes, i)?;
                let text = input[i..end].to_string();
                i = end;
                SmilesToken {
                    kind: TokenKind::Atom(atom),
                    text,
                    pos,
                }
            }
            c @ (b'-' | b'=' | b'#' | b':') => {
                i += 1;
                let order = match c {
                    b'-' => BondOrder::Single,
                    b'=' => BondOrder::Double,
                    b'#' => BondOrder::Triple,
                    _ => BondOrder::Aromatic,
                };
                SmilesToken {
                    kind: TokenKind::Bond(order),
                    text: (c as char).to_string(),
                    pos,
                }
            }
            c @ (b'/' | b'\\') => {
                i += 1;
                SmilesToken {
                    kind: TokenKind::Stereo,
                    text: (c as char).to_string(),
                    pos,
                }
            }
            b'(' => {
                i += 1;
                SmilesToken {
                    kind: TokenKind::Open,
                    text: "(".to_string(),
                    pos,
                }
            }
            b')' => {
                i += 1;
                SmilesToken {
                    kind: TokenKind::Close,
                    text: ")".to_string(),
                    pos,
                }
            }
            c @ b'0'..=b'9' => {
                i += 1;
                SmilesToken {
                    kind: TokenKind::Ring(c - b'0'),
                    text: (c as char).to_string(),
                    pos,
                }
            }
            b'%' => {
                let d1 = bytes.get(i + 1).filter(|b| b.is_ascii_digit());
                let d2 = bytes.get(i + 2).filter(|b| b.is_ascii_digit());
                match (d1, d2) {
                    (Some(&a), Some(&b)) => {
                        let label = (a - b'0') * 10 + (b - b'0');
                        let text = input[i..i + 3].to_string();
                        i += 3;
                        SmilesToken {
                            kind: TokenKind::Ring(label),
                            text,
                            pos,
                        }
                    }
                    _ => return Err(SmilesError::UnknownCharacter(pos)),
                }
            }
            _ => return Err(SmilesError::UnknownCharacter(pos)),
        };
        tokens.push(token);
    }
    Ok(tokens)
}

fn atom_token(element: Element, aromatic: bool, text: &str, pos: usize) -> SmilesToken {
    SmilesToken {
        kind: TokenKind::Atom(Atom {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: 0,
            isotope: None,
        }),
        text: text.to_string(),
        pos,
    }
}

/// Lexes one bracket-atom group starting at the `[` at `start`. Returns the
/// atom and the byte index one past the closing `]`.
fn lex_bracket(bytes: &[u8], start: usize) -> Result<(Atom, usize), SmilesError> {
    let mut i = start + 1;
    let fail = |at: usize| SmilesError::UnknownCharacter(at);

    let mut isotope = None;
    let iso_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i > iso_start {
        let digits = std::str::from_utf8(&bytes[iso_start..i]).unwrap();
        isotope = Some(digits.parse::<u32>().map_err(|_| fail(iso_start))?);
    }

    let (element, aromatic) = match bytes.get(i) {
        Some(b'C') if bytes.get(i + 1) == Some(&b'l') => {
            i += 2;
            (Element::Cl, false)
        }
        Some(b'B') if bytes.get(i + 1) == Some(&b'r') => {
            i += 2;
            (Element::Br, false)
        }
        Some(&c @ (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' | b'H')) => {
            i += 1;
            (Element::from_symbol(&(c as char).to_string()).unwrap(), false)
        }
        Some(&c @ (b'b' | b'c' | b'n' | b'o' | b'p' | b's')) => {
            i += 1;
            (
                Element::from_symbol(&(c as char).to_ascii_uppercase().to_string()).unwrap(),
                true,
            )
        }
        _ => return Err(fail(i)),
    };

    // Chirality markers carry no graph information here.
    if bytes.get(i) == Some(&b'@') {
        i += 1;
        if bytes.get(i) == Some(&b'@') {
            i += 1;
        }
    }

    let mut explicit_h = 0;
    if element != Element::H && bytes.get(i) == Some(&b'H') {
        i += 1;
        let h_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        explicit_h = if i > h_start {
            std::str::from_utf8(&bytes[h_start..i])
                .unwrap()
                .parse::<u32>()
                .map_err(|_| fail(h_start))?
        } else {
            1
        };
    }

    let mut formal_charge = 0i32;
    if let Some(&sign @ (b'+' | b'-')) = bytes.get(i) {
        i += 1;
        let unit = if sign == b'+' { 1 } else { -1 };
        let digit_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i > digit_start {
            let magnitude: i32 = std::str::from_utf8(&bytes[digit_start..i])
                .unwrap()
                .parse()
                .map_err(|_| fail(digit_start))?;
            formal_charge = unit * magnitude;
        } else {
            let mut count = 1;
            while bytes.get(i) == Some(&sign) {
                count += 1;
                i += 1;
            }
            formal_charge = unit * count;
        }
    }

    if bytes.get(i) != Some(&b']') {
        return Err(fail(i));
    }
    Ok((
        Atom {
            element,
            aromatic,
            formal_charge,
            explicit_h,
            isotope,
        },
        i + 1,
    ))
}

/// Tokenizes `input` into a [`TokenSequence`] with a vocabulary assembled in
/// first-appearance order.
pub fn tokenize_smiles(input: &str) -> Result<TokenSequence, SmilesError> {
    let lexemes = lex_smiles(input)?;
    let mut vocab = Vocab::new();
    let tokens = lexemes.iter().map(|t| vocab.intern(&t.text)).collect();
    Ok(TokenSequence { tokens, vocab })
}

/// Parses `input` into a molecular graph.
///
/// A bond with no explicit symbol is aromatic when both endpoints are
/// aromatic and single otherwise. Stereo markers are skipped entirely.
pub fn parse_smiles(input: &str) -> Result<MolecularGraph, SmilesError> {
    let tokens = lex_smiles(input)?;
    if tokens.is_empty() {
        return Err(SmilesError::EmptyInput);
    }

    let mut graph = MolecularGraph::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<BondOrder> = None;
    let mut branch_stack: Vec<(usize, usize)> = Vec::new();
    // label -> (open atom, explicit order at open, label for errors)
    let mut open_rings: BTreeMap<u8, (usize, Option<BondOrder>)> = BTreeMap::new();

    for token in &tokens {
        match &token.kind {
            TokenKind::Atom(atom) => {
                let idx = graph.add_atom(*atom);
                match prev {
                    Some(p) => {
                        let order = pending
                            .take()
                            .unwrap_or_else(|| implicit_order(&graph, p, idx));
                        map_ring_error(graph.add_bond(p, idx, order), 0)?;
                    }
                    None => {
                        if pending.is_some() {
                            return Err(SmilesError::DanglingBond(token.pos));
                        }
                    }
                }
                prev = Some(idx);
            }
            TokenKind::Bond(order) => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::DanglingBond(token.pos));
                }
                pending = Some(*order);
            }
            TokenKind::Stereo => {}
            TokenKind::Open => {
                let p = match prev {
                    Some(p) if pending.is_none() => p,
                    _ => return Err(SmilesError::UnbalancedParenthesis(token.pos)),
                };
                branch_stack.push((p, token.pos));
            }
            TokenKind::Close => {
                if pending.is_some() {
                    return Err(SmilesError::DanglingBond(token.pos));
                }
                match branch_stack.pop() {
                    Some((p, _)) => prev = Some(p),
                    None => return Err(SmilesError::UnbalancedParenthesis(token.pos)),
                }
            }
            TokenKind::Ring(label) => {
                let here = match prev {
                    Some(p) => p,
                    None => return Err(SmilesError::DanglingBond(token.pos)),
                };
                match open_rings.remove(label) {
                    Some((there, open_order)) => {
                        if there == here {
                            return Err(SmilesError::RingSelfLoop(*label));
                        }
                        let close_order = pending.take();
                        let order = match (open_order, close_order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::RingOrderConflict(*label))
                            }
                            (Some(a), _) => a,
                            (None, Some(b)) => b,
                            (None, None) => implicit_order(&graph, there, here),
                        };
                        map_ring_error(graph.add_bond(there, here, order), *label)?;
                    }
                    None => {
                        open_rings.insert(*label, (here, pending.take()));
                    }
                }
            }
        }
    }

    if let Some((&label, _)) = open_rings.iter().next() {
        return Err(SmilesError::UnmatchedRingBond(label));
    }
    if let Some(&(_, pos)) = branch_stack.first() {
        return Err(SmilesError::UnbalancedParenthesis(pos));
    }
    if graph.atom_count() == 0 {
        return Err(SmilesError::EmptyInput);
    }
    Ok(graph)
}

fn implicit_order(graph: &MolecularGraph, a: usize, b: usize) -> BondOrder {
    if graph.atoms[a].aromatic && graph.atoms[b].aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

fn map_ring_error(r: Result<usize, SmilesError>, label: u8) -> Result<usize, SmilesError> {
    r.map_err(|e| match e {
        SmilesError::RingSelfLoop(_) => SmilesError::RingSelfLoop(label),
        other => other,
    })
}
