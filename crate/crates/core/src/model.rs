//! The full classifier: featurization, cross-modal fusion, the classifier
//! head, the focal training loss, and checkpoint serialization.
//!
//! Modalities are fused by projecting each encoder output to a token,
//! prepending a learned fusion token, and running one attention block over
//! the short token row stack. Row zero after normalization is the fused
//! representation fed to the head.

use crate::chem::{
    morgan_fingerprint, parse_smiles, render_image, tokenize_selfies, tokenize_smiles,
    SmilesError, Vocab,
};
use crate::data::{EnzymeRecord, QuantumDescriptors, SplitRatios, N_CLASSES};
use crate::encoders::{
    encode_fingerprint, encode_graph, encode_image, encode_quantum, encode_sequence, linear,
    multi_head_attention, AttentionParams, AttentionRefs, EncoderConfig, FingerprintEncoderParams,
    FingerprintEncoderRefs, GraphEncoderParams, GraphEncoderRefs, GraphTensors,
    ImageEncoderParams, ImageEncoderRefs, LayerNormParams, LayerNormRefs, LinearParams,
    LinearRefs, QuantumEncoderParams, QuantumEncoderRefs, SequenceEncoderParams,
    SequenceEncoderRefs, SequenceSource,
};
use crate::quantum::{
    basis_probabilities, build_mottonen_circuit, prepare_amplitudes, simulate, z_expectations,
    AmplitudeVector, QuantumError,
};
use crate::tensor::{Tape, Tensor, TensorError, TensorRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const UNK_TOKEN: &str = "<unk>";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Chem(#[from] SmilesError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("{0} features are missing for an enabled modality")]
    MissingModality(&'static str),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Input modalities in their canonical fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Sequence,
    Graph,
    Image,
    Quantum,
    Fingerprint,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Sequence,
        Modality::Graph,
        Modality::Image,
        Modality::Quantum,
        Modality::Fingerprint,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Sequence => "sequence",
            Modality::Graph => "graph",
            Modality::Image => "image",
            Modality::Quantum => "quantum",
            Modality::Fingerprint => "fingerprint",
        }
    }

    pub fn from_label(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.label() == s)
    }
}

/// Sorts into canonical order and drops duplicates.
pub fn normalize_modalities(mods: &[Modality]) -> Vec<Modality> {
    let mut out = mods.to_vec();
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub modalities: Vec<Modality>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, modalities: &[Modality]) -> ModelConfig {
        ModelConfig {
            encoder,
            modalities: normalize_modalities(modalities),
        }
    }

    pub fn enabled(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.encoder.validate()?;
        if self.modalities.is_empty() {
            return Err("at least one modality must be enabled".into());
        }
        if self.modalities != normalize_modalities(&self.modalities) {
            return Err("modalities must be unique and in canonical order".into());
        }
        Ok(())
    }
}

// ---- featurization ----

/// Quantum-descriptor minima observed on the training split; readouts
/// shift each descriptor to be positive relative to these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub quantum_min: [f64; 3],
}

impl NormStats {
    pub fn from_records<'a>(records: impl Iterator<Item = &'a EnzymeRecord>) -> NormStats {
        let mut mins = [f64::INFINITY; 3];
        let mut any = false;
        for r in records {
            any = true;
            for (m, v) in mins.iter_mut().zip(r.quantum.as_array()) {
                *m = m.min(v);
            }
        }
        if !any {
            mins = [0.0; 3];
        }
        NormStats { quantum_min: mins }
    }
}

/// Fitted preprocessing state: the model config, the training vocabulary
/// (index 0 is the unknown token), and descriptor normalization.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub norm: NormStats,
}

fn raw_tokens(source: SequenceSource, record: &EnzymeRecord) -> Result<Vec<String>, ModelError> {
    match source {
        SequenceSource::Protein => Ok(record.sequence.chars().map(String::from).collect()),
        SequenceSource::Selfies => {
            if let Some(s) = &record.selfies {
                let seq = tokenize_selfies(s)
                    .map_err(|e| ModelError::Config(format!("selfies: {e}")))?;
                if !seq.is_empty() {
                    return Ok(seq.lexemes().into_iter().map(String::from).collect());
                }
            }
            let seq = tokenize_smiles(&record.smiles)?;
            Ok(seq.lexemes().into_iter().map(String::from).collect())
        }
    }
}

/// Featurized inputs for one record; only enabled modalities are present.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub tokens: Option<Vec<usize>>,
    pub graph: Option<GraphTensors>,
    pub image: Option<Tensor>,
    pub quantum: Option<Vec<f64>>,
    pub fingerprint: Option<Vec<f64>>,
    pub label: usize,
}

impl Featurizer {
    /// Builds the vocabulary and normalization statistics from the
    /// training records only.
    pub fn fit(
        config: &ModelConfig,
        records: &[EnzymeRecord],
        train_idx: &[usize],
    ) -> Result<Featurizer, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        if train_idx.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mut vocab = Vocab::new();
        vocab.intern(UNK_TOKEN);
        for &i in train_idx {
            for tok in raw_tokens(config.encoder.sequence_source, &records[i])? {
                vocab.intern(&tok);
            }
        }
        let norm = NormStats::from_records(train_idx.iter().map(|&i| &records[i]));
        Ok(Featurizer {
            config: config.clone(),
            vocab,
            norm,
        })
    }

    /// Maps token text through the training vocabulary; unseen tokens
    /// collapse to the unknown index.
    pub fn token_ids(&self, record: &EnzymeRecord) -> Result<Vec<usize>, ModelError> {
        Ok(raw_tokens(self.config.encoder.sequence_source, record)?
            .iter()
            .map(|t| self.vocab.get(t).unwrap_or(0))
            .collect())
    }

    /// Descriptors shifted positive against the training minima and
    /// normalized into a state vector.
    pub fn quantum_amplitudes(&self, q: &QuantumDescriptors) -> Result<AmplitudeVector, ModelError> {
        let base: Vec<f64> = q
            .as_array()
            .iter()
            .zip(self.norm.quantum_min)
            .map(|(v, min)| v - min + 1e-6)
            .collect();
        let width = self.config.encoder.quantum_features;
        // Widths beyond the three raw descriptors repeat them at halving
        // scales so every slot stays informative.
        let extended: Vec<f64> = (0..width)
            .map(|i| base[i % base.len()] * 2f64.powi(-((i / base.len()) as i32)))
            .collect();
        Ok(prepare_amplitudes(&extended)?)
    }

    /// Amplitude-encoded descriptors run through the state-preparation
    /// circuit, reduced to the configured readout vector.
    pub fn quantum_readout(&self, q: &QuantumDescriptors) -> Result<Vec<f64>, ModelError> {
        let amps = self.quantum_amplitudes(q)?;
        let circuit = build_mottonen_circuit(&amps);
        let state = simulate(&circuit)?;
        Ok(match self.config.encoder.quantum_readout {
            crate::encoders::QuantumReadout::Probabilities => basis_probabilities(&state),
            crate::encoders::QuantumReadout::ZExpectations => z_expectations(&state),
        })
    }

    pub fn featurize(&self, record: &EnzymeRecord) -> Result<ModelInputs, ModelError> {
        let cfg = &self.config;
        let e = &cfg.encoder;
        let needs_graph = cfg.enabled(Modality::Graph)
            || cfg.enabled(Modality::Image)
            || cfg.enabled(Modality::Fingerprint);
        let graph = if needs_graph {
            Some(parse_smiles(&record.smiles)?)
        } else {
            None
        };

        let tokens = if cfg.enabled(Modality::Sequence) {
            Some(self.token_ids(record)?)
        } else {
            None
        };
        let graph_tensors = if cfg.enabled(Modality::Graph) {
            Some(GraphTensors::from_graph(graph.as_ref().unwrap()))
        } else {
            None
        };
        let image = if cfg.enabled(Modality::Image) {
            let img = render_image(graph.as_ref().unwrap(), e.image_size);
            Some(Tensor::new(vec![1, img.size, img.size], img.pixels))
        } else {
            None
        };
        let quantum = if cfg.enabled(Modality::Quantum) {
            Some(self.quantum_readout(&record.quantum)?)
        } else {
            None
        };
        let fingerprint = if cfg.enabled(Modality::Fingerprint) {
            let fp =
                morgan_fingerprint(graph.as_ref().unwrap(), e.fp_radius as u32, e.fp_bits);
            Some(fp.to_dense())
        } else {
            None
        };

        Ok(ModelInputs {
            tokens,
            graph: graph_tensors,
            image,
            quantum,
            fingerprint,
            label: record.label(),
        })
    }
}

// ---- parameters ----

#[derive(Debug, Clone)]
pub struct FusionParams {
    pub proj: Vec<LinearParams>,
    pub fuse: Tensor,
    pub attn: AttentionParams,
    pub ln: LayerNormParams,
}

pub struct FusionRefs {
    pub proj: Vec<LinearRefs>,
    pub fuse: TensorRef,
    pub attn: AttentionRefs,
    pub ln: LayerNormRefs,
}

impl FusionParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, n_modalities: usize, rng: &mut R) -> FusionParams {
        let d = cfg.d_model;
        FusionParams {
            proj: (0..n_modalities)
                .map(|_| LinearParams::init(d, d, rng))
                .collect(),
            fuse: Tensor::uniform_init(vec![1, d], d, rng),
            attn: AttentionParams::init(d, rng),
            ln: LayerNormParams::init(d),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, p) in self.proj.iter().enumerate() {
            p.collect(&format!("{prefix}.proj{i}"), out);
        }
        out.push((format!("{prefix}.fuse"), &self.fuse));
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln.collect(&format!("{prefix}.ln"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, p) in self.proj.iter_mut().enumerate() {
            p.collect_mut(&format!("{prefix}.proj{i}"), out);
        }
        out.push((format!("{prefix}.fuse"), &mut self.fuse));
        self.attn.collect_mut(&format!("{prefix}.attn"), out);
        self.ln.collect_mut(&format!("{prefix}.ln"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> FusionRefs {
        let proj = self.proj.iter().map(|p| p.bind(tape, order)).collect();
        let fuse = tape.param(&self.fuse);
        order.push(fuse);
        FusionRefs {
            proj,
            fuse,
            attn: self.attn.bind(tape, order),
            ln: self.ln.bind(tape, order),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub l1: LinearParams,
    pub l2: LinearParams,
}

pub struct HeadRefs {
    pub l1: LinearRefs,
    pub l2: LinearRefs,
}

impl HeadParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> HeadParams {
        HeadParams {
            l1: LinearParams::init(cfg.d_model, cfg.head_hidden(), rng),
            l2: LinearParams::init(cfg.head_hidden(), N_CLASSES, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.l1.collect(&format!("{prefix}.l1"), out);
        self.l2.collect(&format!("{prefix}.l2"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.l1.collect_mut(&format!("{prefix}.l1"), out);
        self.l2.collect_mut(&format!("{prefix}.l2"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> HeadRefs {
        HeadRefs {
            l1: self.l1.bind(tape, order),
            l2: self.l2.bind(tape, order),
        }
    }
}

/// Every learnable tensor in the model. Encoders for disabled modalities
/// are absent and contribute neither parameters nor compute.
pub struct ModelParams {
    pub sequence: Option<SequenceEncoderParams>,
    pub graph: Option<GraphEncoderParams>,
    pub image: Option<ImageEncoderParams>,
    pub quantum: Option<QuantumEncoderParams>,
    pub fingerprint: Option<FingerprintEncoderParams>,
    pub fusion: FusionParams,
    pub head: HeadParams,
}

pub struct ModelRefs {
    pub sequence: Option<SequenceEncoderRefs>,
    pub graph: Option<GraphEncoderRefs>,
    pub image: Option<ImageEncoderRefs>,
    pub quantum: Option<QuantumEncoderRefs>,
    pub fingerprint: Option<FingerprintEncoderRefs>,
    pub fusion: FusionRefs,
    pub head: HeadRefs,
}

impl ModelParams {
    /// Draws all weights from `rng` in canonical modality order, so a
    /// fixed seed and config reproduce the same initialization.
    pub fn init<R: Rng>(config: &ModelConfig, vocab_len: usize, rng: &mut R) -> ModelParams {
        let e = &config.encoder;
        ModelParams {
            sequence: config
                .enabled(Modality::Sequence)
                .then(|| SequenceEncoderParams::init(e, vocab_len, rng)),
            graph: config
                .enabled(Modality::Graph)
                .then(|| GraphEncoderParams::init(e, rng)),
            image: config
                .enabled(Modality::Image)
                .then(|| ImageEncoderParams::init(e, rng)),
            quantum: config
                .enabled(Modality::Quantum)
                .then(|| QuantumEncoderParams::init(e, rng)),
            fingerprint: config
                .enabled(Modality::Fingerprint)
                .then(|| FingerprintEncoderParams::init(e, rng)),
            fusion: FusionParams::init(e, config.modalities.len(), rng),
            head: HeadParams::init(e, rng),
        }
    }

    pub fn collect(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(p) = &self.sequence {
            p.collect("sequence", &mut out);
        }
        if let Some(p) = &self.graph {
            p.collect("graph", &mut out);
        }
        if let Some(p) = &self.image {
            p.collect("image", &mut out);
        }
        if let Some(p) = &self.quantum {
            p.collect("quantum", &mut out);
        }
        if let Some(p) = &self.fingerprint {
            p.collect("fingerprint", &mut out);
        }
        self.fusion.collect("fusion", &mut out);
        self.head.collect("head", &mut out);
        out
    }

    pub fn collect_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.sequence {
            p.collect_mut("sequence", &mut out);
        }
        if let Some(p) = &mut self.graph {
            p.collect_mut("graph", &mut out);
        }
        if let Some(p) = &mut self.image {
            p.collect_mut("image", &mut out);
        }
        if let Some(p) = &mut self.quantum {
            p.collect_mut("quantum", &mut out);
        }
        if let Some(p) = &mut self.fingerprint {
            p.collect_mut("fingerprint", &mut out);
        }
        self.fusion.collect_mut("fusion", &mut out);
        self.head.collect_mut("head", &mut out);
        out
    }

    /// Binds every tensor onto the tape, pushing refs in the same order
    /// `collect` walks names.
    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> ModelRefs {
        ModelRefs {
            sequence: self.sequence.as_ref().map(|p| p.bind(tape, order)),
            graph: self.graph.as_ref().map(|p| p.bind(tape, order)),
            image: self.image.as_ref().map(|p| p.bind(tape, order)),
            quantum: self.quantum.as_ref().map(|p| p.bind(tape, order)),
            fingerprint: self.fingerprint.as_ref().map(|p| p.bind(tape, order)),
            fusion: self.fusion.bind(tape, order),
            head: self.head.bind(tape, order),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.collect().iter().map(|(_, t)| t.numel()).sum()
    }
}

// ---- forward pass ----

/// Per-head fusion attention weights over the fusion token row stack.
/// `labels[i]` names row/column `i`; each head matrix is row-stochastic.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionRecord {
    pub labels: Vec<String>,
    pub heads: Vec<Vec<Vec<f64>>>,
}

pub struct ForwardPass {
    pub logits: TensorRef,
    pub fused: TensorRef,
    pub embeddings: Vec<(Modality, TensorRef)>,
    pub attention: AttentionRecord,
}

/// Samples an inverted dropout mask: zero with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(width: usize, rate: f64, rng: &mut R) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    let data = (0..width)
        .map(|_| if rng.gen_bool(rate) { 0.0 } else { keep })
        .collect();
    Tensor::new(vec![1, width], data)
}

pub fn forward(
    tape: &mut Tape,
    refs: &ModelRefs,
    config: &ModelConfig,
    inputs: &ModelInputs,
    dropout: Option<&Tensor>,
) -> Result<ForwardPass, ModelError> {
    let e = &config.encoder;
    let mut rows = vec![refs.fusion.fuse];
    let mut labels = vec!["fuse".to_string()];
    let mut embeddings = Vec::new();

    for (slot, m) in config.modalities.iter().enumerate() {
        let missing = || ModelError::MissingModality(m.label());
        let emb = match m {
            Modality::Sequence => {
                let enc = refs.sequence.as_ref().ok_or_else(missing)?;
                let tokens = inputs.tokens.as_ref().ok_or_else(missing)?;
                encode_sequence(tape, enc, e, tokens)?
            }
            Modality::Graph => {
                let enc = refs.graph.as_ref().ok_or_else(missing)?;
                let g = inputs.graph.as_ref().ok_or_else(missing)?;
                encode_graph(tape, enc, g)?
            }
            Modality::Image => {
                let enc = refs.image.as_ref().ok_or_else(missing)?;
                let img = inputs.image.as_ref().ok_or_else(missing)?;
                encode_image(tape, enc, img)?
            }
            Modality::Quantum => {
                let enc = refs.quantum.as_ref().ok_or_else(missing)?;
                let readout = inputs.quantum.as_ref().ok_or_else(missing)?;
                encode_quantum(tape, enc, readout)?
            }
            Modality::Fingerprint => {
                let enc = refs.fingerprint.as_ref().ok_or_else(missing)?;
                let bits = inputs.fingerprint.as_ref().ok_or_else(missing)?;
                encode_fingerprint(tape, enc, bits)?
            }
        };
        embeddings.push((*m, emb));
        rows.push(linear(tape, &refs.fusion.proj[slot], emb)?);
        labels.push(m.label().to_string());
    }

    let stack = tape.concat(&rows, 0)?;
    let (attn_out, weights) = multi_head_attention(tape, &refs.fusion.attn, stack, e.n_heads)?;
    let res = tape.add(stack, attn_out)?;
    let normed = tape.layer_norm(res, refs.fusion.ln.gamma, refs.fusion.ln.beta)?;
    let fused = tape.slice_rows(normed, 0, 1)?;

    let h = linear(tape, &refs.head.l1, fused)?;
    let h = tape.relu(h)?;
    let h = match dropout {
        Some(mask) => {
            let m = tape.constant(mask);
            tape.mul(h, m)?
        }
        None => h,
    };
    let logits = linear(tape, &refs.head.l2, h)?;

    let t = rows.len();
    let heads = weights
        .into_iter()
        .map(|flat| flat.chunks(t).map(|row| row.to_vec()).collect())
        .collect();

    Ok(ForwardPass {
        logits,
        fused,
        embeddings,
        attention: AttentionRecord { labels, heads },
    })
}

/// Index of the highest score; ties resolve to the lower class index.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

// ---- loss ----

/// Class weights proportional to inverse training frequency, scaled so the
/// weights of the classes actually present average to one. Absent classes
/// get weight zero.
pub fn inverse_frequency_alpha(labels: &[usize]) -> Vec<f64> {
    let mut counts = vec![0usize; N_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let total = labels.len() as f64;
    let mut alpha: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total / c as f64 })
        .collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let sum: f64 = alpha.iter().sum();
    if present > 0 && sum > 0.0 {
        let scale = present as f64 / sum;
        for a in alpha.iter_mut() {
            *a *= scale;
        }
    }
    alpha
}

/// Class-weighted focal loss on raw logits:
/// `-alpha[y] * (1 - p_y)^gamma * ln(p_y)` with `p = softmax(logits)`.
/// `gamma = 0` reduces to weighted cross-entropy.
pub fn focal_loss(
    tape: &mut Tape,
    logits: TensorRef,
    label: usize,
    alpha: &[f64],
    gamma: f64,
) -> Result<TensorRef, TensorError> {
    let p = tape.softmax(logits)?;
    let p_y = tape.slice_cols(p, label, 1)?;
    let log_p = tape.log(p_y)?;
    let neg_p = tape.scale(p_y, -1.0)?;
    let one_minus = tape.add_scalar(neg_p, 1.0)?;
    let focus = tape.pow_const(one_minus, gamma)?;
    let weighted = tape.mul(focus, log_p)?;
    let scaled = tape.scale(weighted, -alpha[label])?;
    tape.mean(scaled)
}

// ---- checkpoints ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: SplitRatios,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub split: Option<SplitSpec>,
    pub norm_stats: NormStats,
    pub vocab: Vocab,
    pub alpha: Vec<f64>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        featurizer: &Featurizer,
        params: &ModelParams,
        alpha: Vec<f64>,
        split: Option<SplitSpec>,
    ) -> Checkpoint {
        let tensors = params
            .collect()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape.clone(),
                values: t.data.clone(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: featurizer.config.clone(),
            split,
            norm_stats: featurizer.norm.clone(),
            vocab: featurizer.vocab.clone(),
            alpha,
            tensors,
        }
    }

    /// Serialization is byte-stable: saving the same checkpoint twice
    /// produces identical files.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint(format!(
                "format_version {} unsupported, expected {CHECKPOINT_VERSION}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Reconstructs the parameters and featurizer. Tensor entries must
    /// match the config's canonical layout by name and shape.
    pub fn build(&self) -> Result<(ModelParams, Featurizer), ModelError> {
        self.model.validate().map_err(ModelError::BadCheckpoint)?;
        if self.vocab.is_empty() && self.model.enabled(Modality::Sequence) {
            return Err(ModelError::BadCheckpoint("empty vocabulary".into()));
        }
        if self.alpha.len() != N_CLASSES {
            return Err(ModelError::BadCheckpoint(format!(
                "alpha has {} entries, expected {N_CLASSES}",
                self.alpha.len()
            )));
        }
        let vocab_len = self.vocab.len().max(1);
        let mut params =
            ModelParams::init(&self.model, vocab_len, &mut ChaCha20Rng::seed_from_u64(0));
        {
            let slots = params.collect_mut();
            if slots.len() != self.tensors.len() {
                return Err(ModelError::BadCheckpoint(format!(
                    "{} tensors stored, model expects {}",
                    self.tensors.len(),
                    slots.len()
                )));
            }
            for ((name, slot), stored) in slots.into_iter().zip(&self.tensors) {
                if name != stored.name {
                    return Err(ModelError::BadCheckpoint(format!(
                        "tensor {:?} found where {name:?} was expected",
                        stored.name
                    )));
                }
                if slot.shape != stored.shape {
                    return Err(ModelError::BadCheckpoint(format!(
                        "tensor {name:?} has shape {:?}, expected {:?}",
                        stored.shape, slot.shape
                    )));
                }
                if stored.values.len() != slot.data.len()
                    || stored.values.iter().any(|v| !v.is_finite())
                {
                    return Err(ModelError::BadCheckpoint(format!(
                        "tensor {name:?} has invalid values"
                    )));
                }
                slot.data.copy_from_slice(&stored.values);
            }
        }
        let featurizer = Featurizer {
            config: self.model.clone(),
            vocab: self.vocab.clone(),
            norm: self.norm_stats.clone(),
        };
        Ok((params, featurizer))
    }
}
