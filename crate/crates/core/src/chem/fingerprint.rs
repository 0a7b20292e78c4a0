//! Circular substructure fingerprints with iterative atom-invariant
//! refinement, plus bit-vector similarity measures.

use super::MolecularGraph;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Incremental FNV-1a hasher over little-endian byte encodings.
#[derive(Clone, Copy)]
struct Fnv(u64);

impl Fnv {
    fn new() -> Fnv {
        Fnv(FNV_OFFSET)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn write_u8(&mut self, v: u8) {
        self.write(&[v]);
    }

    fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }

    fn write_i32(&mut self, v: i32) {
        self.write(&v.to_le_bytes());
    }

    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    fn finish(self) -> u64 {
        self.0
    }
}

/// Fixed-width bit vector packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    n_bits: usize,
}

impl Fingerprint {
    pub fn new(n_bits: usize) -> Fingerprint {
        assert!(n_bits > 0, "fingerprint width must be positive");
        Fingerprint {
            words: vec![0; n_bits.div_ceil(64)],
            n_bits,
        }
    }

    pub fn set_bit(&mut self, i: usize) {
        assert!(i < self.n_bits, "bit index out of range");
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    pub fn get_bit(&self, i: usize) -> bool {
        assert!(i < self.n_bits, "bit index out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    /// Bit values as 0.0/1.0, for feeding dense layers.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.n_bits)
            .map(|i| if self.get_bit(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Initial invariant: a hash of the atom's local properties only.
fn initial_invariant(g: &MolecularGraph, v: usize) -> u64 {
    let atom = &g.atoms[v];
    let mut h = Fnv::new();
    h.write_u8(atom.element.code());
    h.write_u8(atom.aromatic as u8);
    h.write_u32(g.degree(v) as u32);
    h.write_i32(atom.formal_charge);
    h.write_u32(atom.explicit_h);
    h.finish()
}

/// Circular fingerprint over `radius` refinement rounds.
///
/// Every atom's invariant at every round (including round zero) sets bit
/// `invariant % n_bits`. Each round re-hashes the atom's own invariant
/// together with its sorted (bond order, neighbor invariant) pairs, so the
/// result does not depend on atom numbering or bond list order.
pub fn morgan_fingerprint(g: &MolecularGraph, radius: u32, n_bits: usize) -> Fingerprint {
    let mut fp = Fingerprint::new(n_bits);
    let mut invariants: Vec<u64> = (0..g.atom_count())
        .map(|v| initial_invariant(g, v))
        .collect();
    for &inv in &invariants {
        fp.set_bit((inv % n_bits as u64) as usize);
    }

    for _ in 0..radius {
        let mut next = Vec::with_capacity(invariants.len());
        for v in 0..g.atom_count() {
            let mut pairs: Vec<(u8, u64)> = g
                .neighbors(v)
                .iter()
                .map(|&(u, bond)| (g.bonds[bond].order.code(), invariants[u]))
                .collect();
            pairs.sort_unstable();
            let mut h = Fnv::new();
            h.write_u64(invariants[v]);
            for (order, inv) in pairs {
                h.write_u8(order);
                h.write_u64(inv);
            }
            next.push(h.finish());
        }
        invariants = next;
        for &inv in &invariants {
            fp.set_bit((inv % n_bits as u64) as usize);
        }
    }
    fp
}

/// Jaccard similarity of set bits. Two all-zero vectors compare as 1.0.
///
/// Panics if the widths differ.
pub fn tanimoto_similarity(a: &Fingerprint, b: &Fingerprint) -> f64 {
    assert_eq!(a.n_bits, b.n_bits, "fingerprint widths differ");
    let mut intersection = 0u32;
    let mut union = 0u32;
    for (x, y) in a.words.iter().zip(&b.words) {
        intersection += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return 1.0;
    }
    intersection as f64 / union as f64
}

/// Dice similarity of set bits. Two all-zero vectors compare as 1.0.
///
/// Panics if the widths differ.
pub fn dice_similarity(a: &Fingerprint, b: &Fingerprint) -> f64 {
    assert_eq!(a.n_bits, b.n_bits, "fingerprint widths differ");
    let mut intersection = 0u32;
    let mut total = 0u32;
    for (x, y) in a.words.iter().zip(&b.words) {
        intersection += (x & y).count_ones();
        total += x.count_ones() + y.count_ones();
    }
    if total == 0 {
        return 1.0;
    }
    2.0 * intersection as f64 / total as f64
}
