//! Dataset records, JSONL loading, synthetic corpus generation, and
//! stratified splitting.
//!
//! A record carries one enzyme: its residue sequence, substrate structure
//! as SMILES (optionally SELFIES), three quantum-chemistry descriptors, and
//! the enzyme class label in `1..=6`.

use crate::chem::{lex_smiles, parse_smiles, tokenize_selfies};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

pub const N_CLASSES: usize = 6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumDescriptors {
    pub scf_total_energy: f64,
    pub nuclear_repulsion_energy: f64,
    pub gradient_magnitude: f64,
}

impl QuantumDescriptors {
    pub fn as_array(&self) -> [f64; 3] {
        [
            self.scf_total_energy,
            self.nuclear_repulsion_energy,
            self.gradient_magnitude,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnzymeRecord {
    pub id: String,
    pub sequence: String,
    pub smiles: String,
    pub selfies: Option<String>,
    pub quantum: QuantumDescriptors,
    pub ec_class: i64,
}

impl EnzymeRecord {
    /// Zero-based class index; valid only after validation.
    pub fn label(&self) -> usize {
        (self.ec_class - 1) as usize
    }
}

fn validate_record(r: &EnzymeRecord) -> Result<(), String> {
    if r.id.is_empty() {
        return Err("id must be non-empty".into());
    }
    if !(1..=N_CLASSES as i64).contains(&r.ec_class) {
        return Err(format!("ec_class {} outside 1..=6", r.ec_class));
    }
    if r.sequence.is_empty() {
        return Err("sequence must be non-empty".into());
    }
    if !r.sequence.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err("sequence must contain only ASCII letters".into());
    }
    if let Err(e) = parse_smiles(&r.smiles) {
        return Err(format!("smiles: {e}"));
    }
    if let Some(s) = &r.selfies {
        if let Err(e) = tokenize_selfies(s) {
            return Err(format!("selfies: {e}"));
        }
    }
    for (name, v) in [
        ("scf_total_energy", r.quantum.scf_total_energy),
        ("nuclear_repulsion_energy", r.quantum.nuclear_repulsion_energy),
        ("gradient_magnitude", r.quantum.gradient_magnitude),
    ] {
        if !v.is_finite() {
            return Err(format!("quantum.{name} is not finite"));
        }
    }
    Ok(())
}

/// Loads and validates a JSONL dataset. Blank lines are skipped; the first
/// malformed or invalid line aborts the load with its line number.
pub fn load_dataset(path: &Path) -> Result<Vec<EnzymeRecord>, DataError> {
    let display = path.display().to_string();
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EnzymeRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                path: display.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        validate_record(&record).map_err(|message| DataError::Schema {
            path: display.clone(),
            line: lineno,
            message,
        })?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(DataError::Schema {
                path: display.clone(),
                line: lineno,
                message: format!("duplicate id {:?}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as one JSON object per line.
pub fn save_dataset(path: &Path, records: &[EnzymeRecord]) -> Result<(), DataError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---- synthetic corpus ----

const AMINO_ACIDS: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

/// One 6-residue motif per class, planted in most sequences of that class.
const CLASS_MOTIFS: [&[u8; 6]; N_CLASSES] = [
    b"HWKCYD", b"MFPETG", b"RNDSVQ", b"WLYAIH", b"KGTCFM", b"PDQREW",
];

/// Fraction of records whose sequence actually carries the class motif;
/// the rest are only separable through the other modalities.
const MOTIF_RATE: f64 = 0.9;

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Rewrites a SMILES string as a bracketed token stream, one group per
/// lexeme. Round-trips through the SELFIES tokenizer.
pub fn selfies_from_smiles(smiles: &str) -> Option<String> {
    let tokens = lex_smiles(smiles).ok()?;
    let mut out = String::new();
    for t in tokens {
        if t.text.starts_with('[') {
            out.push_str(&t.text);
        } else {
            out.push('[');
            out.push_str(&t.text);
            out.push(']');
        }
    }
    Some(out)
}

fn class_smiles<R: Rng>(class: usize, rng: &mut R) -> String {
    let j = rng.gen_range(1..=4usize);
    let k = rng.gen_range(1..=4usize);
    let c = |n: usize| "C".repeat(n);
    match class {
        1 => format!("O{}O", c(j + k)),
        2 => format!("{}C(=O)O{}", c(j), c(k)),
        3 => format!("{}C(=O)N{}", c(j), c(k)),
        4 => format!("{}C=C{}", c(j), c(k)),
        5 => {
            if rng.gen_bool(0.5) {
                format!("{}c1ccccc1", c(j))
            } else {
                format!("{}c1ccncc1", c(j))
            }
        }
        6 => format!("N{}C(=O)O", c(j)),
        _ => unreachable!("class outside 1..=6"),
    }
}

fn class_descriptors<R: Rng>(class: usize, rng: &mut R) -> QuantumDescriptors {
    let cf = class as f64;
    QuantumDescriptors {
        scf_total_energy: -40.0 - 12.0 * cf + 6.0 * gaussian(rng),
        nuclear_repulsion_energy: 15.0 + 6.0 * cf + 4.0 * gaussian(rng),
        gradient_magnitude: 0.010 * cf + 0.004 * gaussian(rng),
    }
}

fn synthesize_record<R: Rng>(class: usize, index: usize, rng: &mut R) -> EnzymeRecord {
    let len = rng.gen_range(40..=60usize);
    let mut seq: Vec<u8> = (0..len)
        .map(|_| AMINO_ACIDS[rng.gen_range(0..AMINO_ACIDS.len())])
        .collect();
    if rng.gen_bool(MOTIF_RATE) {
        let motif = CLASS_MOTIFS[class - 1];
        for _ in 0..2 {
            let at = rng.gen_range(0..=len - motif.len());
            seq[at..at + motif.len()].copy_from_slice(motif);
        }
    }
    let smiles = class_smiles(class, rng);
    let quantum = class_descriptors(class, rng);
    let selfies = if rng.gen_bool(0.8) {
        selfies_from_smiles(&smiles)
    } else {
        None
    };
    EnzymeRecord {
        id: format!("ec{class}-{index:04}"),
        sequence: String::from_utf8(seq).expect("alphabet is ASCII"),
        smiles,
        selfies,
        quantum,
        ec_class: class as i64,
    }
}

/// Generates a labeled corpus with `n_per_class` records per class.
///
/// Class signal is spread across modalities: a planted sequence motif
/// (present in 90% of records), a class-specific scaffold family, and
/// class-shifted Gaussian descriptors. No single weak modality separates
/// everything, but the combination does.
pub fn generate_synthetic_dataset(n_per_class: usize, seed: u64) -> Vec<EnzymeRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(N_CLASSES * n_per_class);
    for class in 1..=N_CLASSES {
        for i in 0..n_per_class {
            records.push(synthesize_record(class, i, &mut rng));
        }
    }
    records
}

// ---- stratified splitting ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err("ratios must be non-negative".into());
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("ratios sum to {total}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Order-sensitive digest for checking that two runs produced the same
    /// partition.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut fold = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for part in [&self.train, &self.val, &self.test] {
            fold(part.len() as u64);
            for &i in part.iter() {
                fold(i as u64);
            }
        }
        h
    }
}

/// Largest-remainder apportionment of `n` into three buckets. Each bucket
/// lands within one count of its exact quota; leftovers go to the largest
/// fractional parts, earlier buckets first on ties.
fn apportion(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = [
        n as f64 * ratios.train,
        n as f64 * ratios.val,
        n as f64 * ratios.test,
    ];
    let mut counts = [
        quotas[0].floor() as usize,
        quotas[1].floor() as usize,
        quotas[2].floor() as usize,
    ];
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &bucket in order.iter().take(n - assigned) {
        counts[bucket] += 1;
    }
    counts
}

/// Splits per class so every class keeps the requested proportions to
/// within one record. Classes with fewer than three records go entirely to
/// the training split, with a warning on stderr.
///
/// The shuffle depends only on the records, the ratios, and the seed, so
/// repeated calls partition identically.
pub fn stratified_split(
    records: &[EnzymeRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    ratios.validate().map_err(DataError::Ratios)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.ec_class).or_default().push(i);
    }

    let mut split = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut group) in by_class {
        group.shuffle(&mut rng);
        if group.len() < 3 {
            eprintln!(
                "warning: class {class} has only {} record(s); assigning all to train",
                group.len()
            );
            split.train.extend(group);
            continue;
        }
        let [n_train, n_val, _] = apportion(group.len(), &ratios);
        split.train.extend(&group[..n_train]);
        split.val.extend(&group[n_train..n_train + n_val]);
        split.test.extend(&group[n_train + n_val..]);
    }
    Ok(split)
}
