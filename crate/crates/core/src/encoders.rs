//! Modality encoders: token sequence, molecular graph, rendered image,
//! quantum readout, and fingerprint, each producing a `[1, d_model]` row.
//!
//! Parameter structs own plain tensors; `bind` copies them onto a tape for
//! one forward pass and appends every ref to a flat order vector. `collect`
//! walks the same fields in the same order, so position `i` of the bound
//! order always corresponds to name `i` of the collected order. Keep the
//! two walks in sync when adding fields.

use crate::chem::MolecularGraph;
use crate::tensor::{Tape, Tensor, TensorError, TensorRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Number of element kinds in the one-hot atom feature block.
const ELEMENT_KINDS: usize = 11;
/// One-hot elements + aromatic flag + degree.
pub const ATOM_FEATURES: usize = ELEMENT_KINDS + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumReadout {
    /// All `2^n` basis-state probabilities.
    Probabilities,
    /// One Pauli-Z expectation per qubit.
    ZExpectations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSource {
    /// Per-residue tokens from the protein sequence string.
    Protein,
    /// Structured tokens from the SELFIES string, falling back to SMILES
    /// tokens when no SELFIES is present.
    Selfies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub max_seq_len: usize,
    pub sequence_source: SequenceSource,
    pub gnn_hidden: usize,
    pub gnn_layers: usize,
    pub cnn_channels: Vec<usize>,
    pub image_size: usize,
    pub quantum_features: usize,
    pub quantum_readout: QuantumReadout,
    pub fp_radius: usize,
    pub fp_bits: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 2,
            max_seq_len: 128,
            sequence_source: SequenceSource::Protein,
            gnn_hidden: 64,
            gnn_layers: 3,
            cnn_channels: vec![8, 16, 32],
            image_size: 32,
            quantum_features: 3,
            quantum_readout: QuantumReadout::Probabilities,
            fp_radius: 2,
            fp_bits: 1024,
        }
    }
}

impl EncoderConfig {
    /// Width of the feed-forward hidden layer inside each transformer block.
    pub fn ffn_hidden(&self) -> usize {
        2 * self.d_model
    }

    /// Width of the classifier's hidden layer.
    pub fn head_hidden(&self) -> usize {
        self.d_model
    }

    /// Length of the quantum readout vector this config produces.
    pub fn quantum_readout_len(&self) -> usize {
        let padded = self.quantum_features.next_power_of_two();
        match self.quantum_readout {
            QuantumReadout::Probabilities => padded,
            QuantumReadout::ZExpectations => padded.trailing_zeros() as usize,
        }
    }

    /// Flattened feature count after the convolution stack.
    pub fn image_flat_len(&self) -> usize {
        let stages = conv_stages(self.image_size, &self.cnn_channels);
        let last = stages.last().expect("cnn_channels must be non-empty");
        last.c_out * last.out_size * last.out_size
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return Err("n_blocks must be at least 1".into());
        }
        if self.max_seq_len == 0 {
            return Err("max_seq_len must be at least 1".into());
        }
        if self.gnn_hidden == 0 || self.gnn_layers == 0 {
            return Err("graph encoder needs a positive hidden width and layer count".into());
        }
        if self.cnn_channels.is_empty() {
            return Err("cnn_channels must list at least one stage".into());
        }
        if self.image_size < 8 {
            return Err(format!("image_size {} must be at least 8", self.image_size));
        }
        if self.quantum_features < 2 {
            return Err("quantum_features must be at least 2".into());
        }
        if self.quantum_features > (1 << 20) {
            return Err("quantum_features exceeds the simulable qubit budget".into());
        }
        if self.fp_bits < 8 {
            return Err("fp_bits must be at least 8".into());
        }
        Ok(())
    }
}

/// One stage of the image encoder's convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStage {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub in_size: usize,
    pub out_size: usize,
}

pub const CONV_STRIDE: usize = 2;

/// Plans the convolution stack for a square input. Kernels are 3x3,
/// shrunk to the current spatial size when it drops below 3 so small
/// inputs stay valid.
pub fn conv_stages(image_size: usize, channels: &[usize]) -> Vec<ConvStage> {
    let mut stages = Vec::with_capacity(channels.len());
    let mut size = image_size;
    let mut c_in = 1;
    for &c_out in channels {
        let kernel = size.min(3);
        let out_size = (size - kernel) / CONV_STRIDE + 1;
        stages.push(ConvStage {
            c_in,
            c_out,
            kernel,
            in_size: size,
            out_size,
        });
        size = out_size;
        c_in = c_out;
    }
    stages
}

/// Fixed sinusoidal position table, `[len, d]`. Even columns carry sines,
/// odd columns carry cosines at the same frequency.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data)
}

fn bind_one(tape: &mut Tape, order: &mut Vec<TensorRef>, t: &Tensor) -> TensorRef {
    let r = tape.param(t);
    order.push(r);
    r
}

// ---- shared building blocks ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

pub struct LinearRefs {
    pub w: TensorRef,
    pub b: TensorRef,
}

impl LinearParams {
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> LinearParams {
        LinearParams {
            w: Tensor::uniform_init(vec![in_dim, out_dim], in_dim, rng),
            b: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> LinearRefs {
        LinearRefs {
            w: bind_one(tape, order, &self.w),
            b: bind_one(tape, order, &self.b),
        }
    }
}

pub fn linear(tape: &mut Tape, l: &LinearRefs, x: TensorRef) -> Result<TensorRef, TensorError> {
    let y = tape.matmul(x, l.w)?;
    tape.add_bias(y, l.b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub struct LayerNormRefs {
    pub gamma: TensorRef,
    pub beta: TensorRef,
}

impl LayerNormParams {
    pub fn init(dim: usize) -> LayerNormParams {
        LayerNormParams {
            gamma: Tensor::new(vec![dim], vec![1.0; dim]),
            beta: Tensor::zeros(vec![dim]),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> LayerNormRefs {
        LayerNormRefs {
            gamma: bind_one(tape, order, &self.gamma),
            beta: bind_one(tape, order, &self.beta),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

pub struct AttentionRefs {
    pub wq: TensorRef,
    pub wk: TensorRef,
    pub wv: TensorRef,
    pub wo: TensorRef,
}

impl AttentionParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> AttentionParams {
        AttentionParams {
            wq: Tensor::uniform_init(vec![d, d], d, rng),
            wk: Tensor::uniform_init(vec![d, d], d, rng),
            wv: Tensor::uniform_init(vec![d, d], d, rng),
            wo: Tensor::uniform_init(vec![d, d], d, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.wo"), &self.wo));
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.wo"), &mut self.wo));
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> AttentionRefs {
        AttentionRefs {
            wq: bind_one(tape, order, &self.wq),
            wk: bind_one(tape, order, &self.wk),
            wv: bind_one(tape, order, &self.wv),
            wo: bind_one(tape, order, &self.wo),
        }
    }
}

/// Scaled dot-product self-attention over `[t, d]`, split into `n_heads`
/// column groups. Returns the mixed output and one flattened row-stochastic
/// `t x t` weight matrix per head.
pub fn multi_head_attention(
    tape: &mut Tape,
    a: &AttentionRefs,
    x: TensorRef,
    n_heads: usize,
) -> Result<(TensorRef, Vec<Vec<f64>>), TensorError> {
    let d = tape.shape(x)[1];
    assert!(n_heads > 0 && d % n_heads == 0, "head count must divide width");
    let dh = d / n_heads;

    let q = tape.matmul(x, a.wq)?;
    let k = tape.matmul(x, a.wk)?;
    let v = tape.matmul(x, a.wv)?;

    let mut head_outs = Vec::with_capacity(n_heads);
    let mut head_weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax(scaled)?;
        head_weights.push(tape.data(weights).to_vec());
        head_outs.push(tape.matmul(weights, vh)?);
    }
    let cat = tape.concat(&head_outs, 1)?;
    let out = tape.matmul(cat, a.wo)?;
    Ok((out, head_weights))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerBlockParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
    pub ln2: LayerNormParams,
}

pub struct TransformerBlockRefs {
    pub attn: AttentionRefs,
    pub ln1: LayerNormRefs,
    pub ffn1: LinearRefs,
    pub ffn2: LinearRefs,
    pub ln2: LayerNormRefs,
}

impl TransformerBlockParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> TransformerBlockParams {
        let d = cfg.d_model;
        let f = cfg.ffn_hidden();
        TransformerBlockParams {
            attn: AttentionParams::init(d, rng),
            ln1: LayerNormParams::init(d),
            ffn1: LinearParams::init(d, f, rng),
            ffn2: LinearParams::init(f, d, rng),
            ln2: LayerNormParams::init(d),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.ffn1.collect(&format!("{prefix}.ffn1"), out);
        self.ffn2.collect(&format!("{prefix}.ffn2"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.attn.collect_mut(&format!("{prefix}.attn"), out);
        self.ln1.collect_mut(&format!("{prefix}.ln1"), out);
        self.ffn1.collect_mut(&format!("{prefix}.ffn1"), out);
        self.ffn2.collect_mut(&format!("{prefix}.ffn2"), out);
        self.ln2.collect_mut(&format!("{prefix}.ln2"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> TransformerBlockRefs {
        TransformerBlockRefs {
            attn: self.attn.bind(tape, order),
            ln1: self.ln1.bind(tape, order),
            ffn1: self.ffn1.bind(tape, order),
            ffn2: self.ffn2.bind(tape, order),
            ln2: self.ln2.bind(tape, order),
        }
    }
}

/// Pre-activation residual block: attention, add, normalize, feed-forward,
/// add, normalize. Attention weights are passed through for inspection.
pub fn transformer_block(
    tape: &mut Tape,
    b: &TransformerBlockRefs,
    n_heads: usize,
    x: TensorRef,
) -> Result<(TensorRef, Vec<Vec<f64>>), TensorError> {
    let (attn_out, weights) = multi_head_attention(tape, &b.attn, x, n_heads)?;
    let res = tape.add(x, attn_out)?;
    let normed = tape.layer_norm(res, b.ln1.gamma, b.ln1.beta)?;

    let h = linear(tape, &b.ffn1, normed)?;
    let h = tape.relu(h)?;
    let ff = linear(tape, &b.ffn2, h)?;
    let res2 = tape.add(normed, ff)?;
    let out = tape.layer_norm(res2, b.ln2.gamma, b.ln2.beta)?;
    Ok((out, weights))
}

// ---- sequence encoder ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEncoderParams {
    pub embedding: Tensor,
    pub blocks: Vec<TransformerBlockParams>,
}

pub struct SequenceEncoderRefs {
    pub embedding: TensorRef,
    pub blocks: Vec<TransformerBlockRefs>,
}

impl SequenceEncoderParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, vocab_len: usize, rng: &mut R) -> Self {
        assert!(vocab_len > 0, "sequence vocabulary is empty");
        SequenceEncoderParams {
            embedding: Tensor::uniform_init(vec![vocab_len, cfg.d_model], cfg.d_model, rng),
            blocks: (0..cfg.n_blocks)
                .map(|_| TransformerBlockParams::init(cfg, rng))
                .collect(),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.embedding"), &self.embedding));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("{prefix}.block{i}"), out);
        }
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.embedding"), &mut self.embedding));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("{prefix}.block{i}"), out);
        }
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> SequenceEncoderRefs {
        SequenceEncoderRefs {
            embedding: bind_one(tape, order, &self.embedding),
            blocks: self.blocks.iter().map(|b| b.bind(tape, order)).collect(),
        }
    }
}

/// Embeds token ids (truncated to `max_seq_len`), adds sinusoidal
/// positions, applies the block stack, and mean-pools to `[1, d_model]`.
pub fn encode_sequence(
    tape: &mut Tape,
    refs: &SequenceEncoderRefs,
    cfg: &EncoderConfig,
    tokens: &[usize],
) -> Result<TensorRef, TensorError> {
    assert!(!tokens.is_empty(), "cannot encode an empty token sequence");
    let ids = &tokens[..tokens.len().min(cfg.max_seq_len)];
    let mut x = tape.embedding_lookup(refs.embedding, ids)?;
    let pe = sinusoidal_positions(ids.len(), cfg.d_model);
    let pe = tape.constant(&pe);
    x = tape.add(x, pe)?;
    for block in &refs.blocks {
        let (next, _) = transformer_block(tape, block, cfg.n_heads, x)?;
        x = next;
    }
    tape.mean_rows(x)
}

// ---- graph encoder ----

/// Node features plus per-bond-order directed edge lists, ready to encode.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    pub features: Tensor,
    /// Indexed by bond-order code minus one: single, double, triple,
    /// aromatic. Each bond contributes both directions.
    pub edges: [(Vec<usize>, Vec<usize>); 4],
    pub n_atoms: usize,
}

impl GraphTensors {
    pub fn from_graph(g: &MolecularGraph) -> GraphTensors {
        let n = g.atom_count();
        let mut features = vec![0.0; n * ATOM_FEATURES];
        for (i, atom) in g.atoms.iter().enumerate() {
            let row = &mut features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES];
            row[atom.element.code() as usize] = 1.0;
            row[ELEMENT_KINDS] = if atom.aromatic { 1.0 } else { 0.0 };
            row[ELEMENT_KINDS + 1] = g.degree(i) as f64;
        }
        let mut edges: [(Vec<usize>, Vec<usize>); 4] = Default::default();
        for bond in &g.bonds {
            let slot = (bond.order.code() - 1) as usize;
            edges[slot].0.push(bond.a);
            edges[slot].1.push(bond.b);
            edges[slot].0.push(bond.b);
            edges[slot].1.push(bond.a);
        }
        GraphTensors {
            features: Tensor::new(vec![n, ATOM_FEATURES], features),
            edges,
            n_atoms: n,
        }
    }

    /// Directed edge count across all bond orders.
    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(|(src, _)| src.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnLayerParams {
    pub w_self: Tensor,
    pub w_order: Vec<Tensor>,
    pub b: Tensor,
}

pub struct GnnLayerRefs {
    pub w_self: TensorRef,
    pub w_order: Vec<TensorRef>,
    pub b: TensorRef,
}

impl GnnLayerParams {
    pub fn init<R: Rng>(hidden: usize, rng: &mut R) -> GnnLayerParams {
        GnnLayerParams {
            w_self: Tensor::uniform_init(vec![hidden, hidden], hidden, rng),
            w_order: (0..4)
                .map(|_| Tensor::uniform_init(vec![hidden, hidden], hidden, rng))
                .collect(),
            b: Tensor::zeros(vec![hidden]),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_self"), &self.w_self));
        for (i, w) in self.w_order.iter().enumerate() {
            out.push((format!("{prefix}.w_order{i}"), w));
        }
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w_self"), &mut self.w_self));
        for (i, w) in self.w_order.iter_mut().enumerate() {
            out.push((format!("{prefix}.w_order{i}"), w));
        }
        out.push((format!("{prefix}.b"), &mut self.b));
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> GnnLayerRefs {
        GnnLayerRefs {
            w_self: bind_one(tape, order, &self.w_self),
            w_order: self
                .w_order
                .iter()
                .map(|w| bind_one(tape, order, w))
                .collect(),
            b: bind_one(tape, order, &self.b),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEncoderParams {
    pub proj: LinearParams,
    pub layers: Vec<GnnLayerParams>,
    pub out: LinearParams,
}

pub struct GraphEncoderRefs {
    pub proj: LinearRefs,
    pub layers: Vec<GnnLayerRefs>,
    pub out: LinearRefs,
}

impl GraphEncoderParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> GraphEncoderParams {
        GraphEncoderParams {
            proj: LinearParams::init(ATOM_FEATURES, cfg.gnn_hidden, rng),
            layers: (0..cfg.gnn_layers)
                .map(|_| GnnLayerParams::init(cfg.gnn_hidden, rng))
                .collect(),
            out: LinearParams::init(cfg.gnn_hidden, cfg.d_model, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.proj.collect(&format!("{prefix}.proj"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("{prefix}.layer{i}"), out);
        }
        self.out.collect(&format!("{prefix}.out"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.proj.collect_mut(&format!("{prefix}.proj"), out);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&format!("{prefix}.layer{i}"), out);
        }
        self.out.collect_mut(&format!("{prefix}.out"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> GraphEncoderRefs {
        GraphEncoderRefs {
            proj: self.proj.bind(tape, order),
            layers: self.layers.iter().map(|l| l.bind(tape, order)).collect(),
            out: self.out.bind(tape, order),
        }
    }
}

/// Message-passing encoder with per-bond-order weights and residual
/// updates, mean-pooled over atoms. The readout is permutation invariant
/// up to floating-point summation order.
pub fn encode_graph(
    tape: &mut Tape,
    refs: &GraphEncoderRefs,
    g: &GraphTensors,
) -> Result<TensorRef, TensorError> {
    assert!(g.n_atoms > 0, "cannot encode an empty graph");
    let feats = tape.constant(&g.features);
    let mut h = linear(tape, &refs.proj, feats)?;
    h = tape.relu(h)?;

    for layer in &refs.layers {
        let mut agg = tape.matmul(h, layer.w_self)?;
        for (slot, (src, dst)) in g.edges.iter().enumerate() {
            if src.is_empty() {
                continue;
            }
            let gathered = tape.embedding_lookup(h, src)?;
            let msg = tape.matmul(gathered, layer.w_order[slot])?;
            let summed = tape.scatter_sum_rows(msg, dst, g.n_atoms)?;
            agg = tape.add(agg, summed)?;
        }
        let act = tape.add_bias(agg, layer.b)?;
        let act = tape.relu(act)?;
        h = tape.add(act, h)?;
    }

    let pooled = tape.mean_rows(h)?;
    linear(tape, &refs.out, pooled)
}

// ---- image encoder ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEncoderParams {
    pub kernels: Vec<Tensor>,
    pub out: LinearParams,
}

pub struct ImageEncoderRefs {
    pub kernels: Vec<TensorRef>,
    pub out: LinearRefs,
}

impl ImageEncoderParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> ImageEncoderParams {
        let stages = conv_stages(cfg.image_size, &cfg.cnn_channels);
        let kernels = stages
            .iter()
            .map(|s| {
                let fan_in = s.c_in * s.kernel * s.kernel;
                Tensor::uniform_init(vec![s.c_out, s.c_in, s.kernel, s.kernel], fan_in, rng)
            })
            .collect();
        ImageEncoderParams {
            kernels,
            out: LinearParams::init(cfg.image_flat_len(), cfg.d_model, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, k) in self.kernels.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}"), k));
        }
        self.out.collect(&format!("{prefix}.out"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, k) in self.kernels.iter_mut().enumerate() {
            out.push((format!("{prefix}.conv{i}"), k));
        }
        self.out.collect_mut(&format!("{prefix}.out"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> ImageEncoderRefs {
        ImageEncoderRefs {
            kernels: self
                .kernels
                .iter()
                .map(|k| bind_one(tape, order, k))
                .collect(),
            out: self.out.bind(tape, order),
        }
    }
}

/// Strided convolution stack over a single-channel square image, flattened
/// into a linear projection. `image` must be `[1, s, s]` for the configured
/// size.
pub fn encode_image(
    tape: &mut Tape,
    refs: &ImageEncoderRefs,
    image: &Tensor,
) -> Result<TensorRef, TensorError> {
    let mut x = tape.constant(image);
    for kernel in &refs.kernels {
        x = tape.conv2d(x, *kernel, CONV_STRIDE)?;
        x = tape.relu(x)?;
    }
    let flat_len: usize = tape.shape(x).iter().product();
    let flat = tape.reshape(x, vec![1, flat_len])?;
    linear(tape, &refs.out, flat)
}

// ---- quantum encoder ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantumEncoderParams {
    pub out: LinearParams,
}

pub struct QuantumEncoderRefs {
    pub out: LinearRefs,
}

impl QuantumEncoderParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> QuantumEncoderParams {
        QuantumEncoderParams {
            out: LinearParams::init(cfg.quantum_readout_len(), cfg.d_model, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.out.collect(&format!("{prefix}.out"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.out.collect_mut(&format!("{prefix}.out"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> QuantumEncoderRefs {
        QuantumEncoderRefs {
            out: self.out.bind(tape, order),
        }
    }
}

/// Projects a circuit readout vector (probabilities or Z expectations)
/// into the shared embedding width.
pub fn encode_quantum(
    tape: &mut Tape,
    refs: &QuantumEncoderRefs,
    readout: &[f64],
) -> Result<TensorRef, TensorError> {
    let x = tape.constant(&Tensor::row(readout.to_vec()));
    let y = linear(tape, &refs.out, x)?;
    tape.relu(y)
}

// ---- fingerprint encoder ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintEncoderParams {
    pub out: LinearParams,
}

pub struct FingerprintEncoderRefs {
    pub out: LinearRefs,
}

impl FingerprintEncoderParams {
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> FingerprintEncoderParams {
        FingerprintEncoderParams {
            out: LinearParams::init(cfg.fp_bits, cfg.d_model, rng),
        }
    }

    pub fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.out.collect(&format!("{prefix}.out"), out);
    }

    pub fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.out.collect_mut(&format!("{prefix}.out"), out);
    }

    pub fn bind(&self, tape: &mut Tape, order: &mut Vec<TensorRef>) -> FingerprintEncoderRefs {
        FingerprintEncoderRefs {
            out: self.out.bind(tape, order),
        }
    }
}

/// Projects a dense 0/1 fingerprint vector into the shared embedding width.
pub fn encode_fingerprint(
    tape: &mut Tape,
    refs: &FingerprintEncoderRefs,
    bits: &[f64],
) -> Result<TensorRef, TensorError> {
    let x = tape.constant(&Tensor::row(bits.to_vec()));
    let y = linear(tape, &refs.out, x)?;
    tape.relu(y)
}
