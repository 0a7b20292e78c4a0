//! Classification metrics, the modality ablation harness, and the compute
//! profiler with closed-form multiply-accumulate counts.

use crate::data::{
    generate_synthetic_dataset, stratified_split, DataError, EnzymeRecord, N_CLASSES,
};
use crate::encoders::{conv_stages, ATOM_FEATURES};
use crate::model::{
    forward, Featurizer, Modality, ModelConfig, ModelError, ModelInputs, ModelParams, SplitSpec,
};
use crate::quantum::{build_mottonen_circuit, circuit_stats, CircuitStats};
use crate::tensor::Tape;
use crate::train::{train, TrainConfig, TrainError};
use serde::Serialize;
use std::fs;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

// ---- metrics ----

/// Fraction of rows whose label appears among the `k` highest scores.
/// Ties rank the lower class index first.
pub fn top_k_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    assert_eq!(scores.len(), labels.len());
    assert!(k >= 1);
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            idx[..k.min(idx.len())].contains(&label)
        })
        .count();
    hits as f64 / scores.len() as f64
}

/// Counts indexed `[true_class][predicted_class]`.
pub fn confusion_matrix(labels: &[usize], preds: &[usize]) -> Vec<Vec<usize>> {
    assert_eq!(labels.len(), preds.len());
    let mut m = vec![vec![0usize; N_CLASSES]; N_CLASSES];
    for (&l, &p) in labels.iter().zip(preds) {
        m[l][p] += 1;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPrf {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn per_class_prf(confusion: &[Vec<usize>]) -> Vec<ClassPrf> {
    (0..N_CLASSES)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassPrf {
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Unweighted means over the classes that actually occur.
pub fn macro_prf(confusion: &[Vec<usize>]) -> (f64, f64, f64) {
    let per_class = per_class_prf(confusion);
    let present: Vec<&ClassPrf> = per_class.iter().filter(|c| c.support > 0).collect();
    if present.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = present.len() as f64;
    (
        present.iter().map(|c| c.precision).sum::<f64>() / n,
        present.iter().map(|c| c.recall).sum::<f64>() / n,
        present.iter().map(|c| c.f1).sum::<f64>() / n,
    )
}

/// Rank-based AUC: the probability a positive outscores a negative, with
/// ties counted half. `None` when either group is empty.
pub fn auc_one_vs_rest(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len());
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based midrank shared by the whole tie group
        let midrank = (i + j + 2) as f64 / 2.0;
        for &r in &idx[i..=j] {
            if positives[r] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

// ---- reports ----

#[derive(Debug, Clone, Serialize)]
pub struct TopKRow {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub split: String,
    pub n_records: usize,
    pub top_k: Vec<TopKRow>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub auc_macro: Option<f64>,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn build_report(scores: &[Vec<f64>], labels: &[usize], split_label: &str) -> MetricsReport {
    let preds: Vec<usize> = scores.iter().map(|row| crate::model::argmax_class(row)).collect();
    let confusion = confusion_matrix(labels, &preds);
    let prf = per_class_prf(&confusion);
    let (macro_precision, macro_recall, macro_f1) = macro_prf(&confusion);

    let mut per_class = Vec::with_capacity(N_CLASSES);
    let mut auc_values = Vec::new();
    for c in 0..N_CLASSES {
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let is_pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let auc = auc_one_vs_rest(&class_scores, &is_pos);
        if let Some(a) = auc {
            auc_values.push(a);
        }
        per_class.push(ClassReport {
            class: c + 1,
            support: prf[c].support,
            precision: prf[c].precision,
            recall: prf[c].recall,
            f1: prf[c].f1,
            auc,
        });
    }
    let auc_macro = (!auc_values.is_empty())
        .then(|| auc_values.iter().sum::<f64>() / auc_values.len() as f64);

    MetricsReport {
        split: split_label.to_string(),
        n_records: labels.len(),
        top_k: (1..=3)
            .map(|k| TopKRow {
                k,
                accuracy: top_k_accuracy(scores, labels, k),
            })
            .collect(),
        macro_precision,
        macro_recall,
        macro_f1,
        auc_macro,
        per_class,
        confusion,
    }
}

/// Scores the selected records with the model and assembles the metrics.
pub fn evaluate(
    records: &[EnzymeRecord],
    indices: &[usize],
    params: &ModelParams,
    featurizer: &Featurizer,
    split_label: &str,
) -> Result<MetricsReport, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::Config("no records selected for evaluation".into()));
    }
    let mut scores = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let inputs = featurizer.featurize(&records[i])?;
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let refs = params.bind(&mut tape, &mut order);
        let pass = forward(&mut tape, &refs, &featurizer.config, &inputs, None)?;
        scores.push(tape.data(pass.logits).to_vec());
        labels.push(inputs.label);
    }
    Ok(build_report(&scores, &labels, split_label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

impl SplitChoice {
    pub fn label(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
            SplitChoice::All => "all",
        }
    }
}

/// Reproduces the training partition recorded in a checkpoint and picks
/// the requested side of it.
pub fn resolve_split(
    records: &[EnzymeRecord],
    spec: Option<&SplitSpec>,
    choice: SplitChoice,
) -> Result<Vec<usize>, EvalError> {
    if choice == SplitChoice::All {
        return Ok((0..records.len()).collect());
    }
    let spec = spec.ok_or_else(|| {
        EvalError::Config("checkpoint records no split; evaluate on the whole set instead".into())
    })?;
    let split = stratified_split(records, spec.ratios, spec.seed)?;
    Ok(match choice {
        SplitChoice::Train => split.train,
        SplitChoice::Val => split.val,
        SplitChoice::Test => split.test,
        SplitChoice::All => unreachable!(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let mut out = String::from("true_class");
    for c in 1..=N_CLASSES {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for (r, row) in confusion.iter().enumerate() {
        out.push_str(&(r + 1).to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes the JSON report plus a confusion matrix CSV next to it.
pub fn write_metrics_report(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    write_json(report, path)?;
    fs::write(
        path.with_extension("confusion.csv"),
        confusion_csv(&report.confusion),
    )?;
    Ok(())
}

// ---- compute accounting ----

/// Input extents that vary per record and drive the compute cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ForwardDims {
    pub seq_len: usize,
    pub n_atoms: usize,
    pub n_edges: usize,
}

pub fn forward_dims(config: &ModelConfig, inputs: &ModelInputs) -> ForwardDims {
    ForwardDims {
        seq_len: inputs
            .tokens
            .as_ref()
            .map_or(0, |t| t.len().min(config.encoder.max_seq_len)),
        n_atoms: inputs.graph.as_ref().map_or(0, |g| g.n_atoms),
        n_edges: inputs.graph.as_ref().map_or(0, |g| g.n_edges()),
    }
}

/// Closed-form multiply-accumulate count for one forward pass. Agrees
/// exactly with the tape instrumentation.
pub fn count_macs(config: &ModelConfig, dims: &ForwardDims) -> u64 {
    let e = &config.encoder;
    let d = e.d_model as u64;
    let mut total = 0u64;
    for m in &config.modalities {
        total += match m {
            Modality::Sequence => {
                let l = dims.seq_len as u64;
                let f = e.ffn_hidden() as u64;
                e.n_blocks as u64 * (4 * l * d * d + 2 * l * l * d + 2 * l * d * f)
            }
            Modality::Graph => {
                let n = dims.n_atoms as u64;
                let edges = dims.n_edges as u64;
                let g = e.gnn_hidden as u64;
                n * ATOM_FEATURES as u64 * g + e.gnn_layers as u64 * (n + edges) * g * g + g * d
            }
            Modality::Image => {
                let stages = conv_stages(e.image_size, &e.cnn_channels);
                let conv: u64 = stages
                    .iter()
                    .map(|s| (s.c_out * s.c_in * s.kernel * s.kernel * s.out_size * s.out_size) as u64)
                    .sum();
                let last = stages.last().unwrap();
                let flat = (last.c_out * last.out_size * last.out_size) as u64;
                conv + flat * d
            }
            Modality::Quantum => e.quantum_readout_len() as u64 * d,
            Modality::Fingerprint => e.fp_bits as u64 * d,
        };
    }
    // fusion: per-modality projections, then one attention block over the
    // fusion token plus the modality tokens
    let m = config.modalities.len() as u64;
    let t = m + 1;
    total += m * d * d + 4 * t * d * d + 2 * t * t * d;
    // classifier head
    let hh = e.head_hidden() as u64;
    total += d * hh + hh * N_CLASSES as u64;
    total
}

// ---- ablation ----

/// Cumulative modality stages, matching how the encoders build on each
/// other: text plus quantum first, then graph, image, and fingerprints.
pub const ABLATION_STAGES: [&[Modality]; 4] = [
    &[Modality::Sequence, Modality::Quantum],
    &[Modality::Sequence, Modality::Graph, Modality::Quantum],
    &[
        Modality::Sequence,
        Modality::Graph,
        Modality::Image,
        Modality::Quantum,
    ],
    &[
        Modality::Sequence,
        Modality::Graph,
        Modality::Image,
        Modality::Quantum,
        Modality::Fingerprint,
    ],
];

/// One modality stage, averaged over seeds. Precision, recall, and F1
/// are macro-averaged over the classes present in the test split.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub modalities: Vec<String>,
    pub per_seed_top1: Vec<f64>,
    pub top1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub n_records: usize,
    pub epochs: usize,
    /// One hash per seed; every stage within a seed trains and tests on
    /// the identical partition.
    pub split_hashes: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Trains each modality stage across the given seeds and reports held-out
/// test accuracy per stage.
pub fn run_ablation<F: FnMut(&str)>(
    records: &[EnzymeRecord],
    base: &TrainConfig,
    seeds: &[u64],
    mut progress: F,
) -> Result<AblationReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Config("at least one seed is required".into()));
    }
    let mut rows: Vec<AblationRow> = ABLATION_STAGES
        .iter()
        .map(|mods| AblationRow {
            modalities: mods.iter().map(|m| m.label().to_string()).collect(),
            per_seed_top1: Vec::new(),
            top1: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        })
        .collect();
    let mut split_hashes = Vec::with_capacity(seeds.len());

    for &seed in seeds {
        let mut seed_hash: Option<u64> = None;
        for (row, mods) in rows.iter_mut().zip(ABLATION_STAGES) {
            let mut config = base.clone();
            config.seed = seed;
            config.model = ModelConfig::new(base.model.encoder.clone(), mods);
            let outcome = train(records, &config, |_| {})?;
            match seed_hash {
                None => seed_hash = Some(outcome.split.hash()),
                Some(h) => assert_eq!(
                    h,
                    outcome.split.hash(),
                    "split drifted between ablation stages"
                ),
            }
            let (params, featurizer) = outcome.checkpoint.build()?;
            let report = evaluate(records, &outcome.split.test, &params, &featurizer, "test")?;
            let top1 = report.top_k[0].accuracy;
            progress(&format!(
                "seed {seed} [{}]: test top-1 {top1:.4}",
                row.modalities.join("+")
            ));
            row.per_seed_top1.push(top1);
            row.top1 += top1;
            row.precision += report.macro_precision;
            row.recall += report.macro_recall;
            row.f1 += report.macro_f1;
        }
        split_hashes.push(format!("{:016x}", seed_hash.unwrap()));
    }

    let n_seeds = seeds.len() as f64;
    for row in rows.iter_mut() {
        row.top1 /= n_seeds;
        row.precision /= n_seeds;
        row.recall /= n_seeds;
        row.f1 /= n_seeds;
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        n_records: records.len(),
        epochs: base.epochs,
        split_hashes,
        rows,
    })
}

/// Renders the stage rows with macro-averaged metric columns, one line
/// per modality stage.
pub fn format_ablation_table(report: &AblationReport) -> String {
    let name_width = report
        .rows
        .iter()
        .map(|r| r.modalities.join("+").len())
        .chain(["modalities".len()])
        .max()
        .unwrap();
    let mut lines = Vec::with_capacity(report.rows.len() + 1);
    lines.push(format!(
        "{:<name_width$}  {:>7}  {:>9}  {:>7}  {:>7}",
        "modalities", "top-1", "precision", "recall", "f1"
    ));
    for row in &report.rows {
        lines.push(format!(
            "{:<name_width$}  {:>7.4}  {:>9.4}  {:>7.4}  {:>7.4}",
            row.modalities.join("+"),
            row.top1,
            row.precision,
            row.recall,
            row.f1
        ));
    }
    lines.join("\n") + "\n"
}

// ---- profiling ----

#[derive(Debug, Clone, Serialize)]
pub struct CircuitProfile {
    pub n_qubits: usize,
    pub amplitudes: usize,
    pub stats: CircuitStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    pub modalities: Vec<String>,
    pub d_model: usize,
    pub parameter_count: usize,
    pub param_memory_bytes: usize,
    pub dims: ForwardDims,
    pub macs_closed_form: u64,
    pub macs_instrumented: u64,
    pub circuit: Option<CircuitProfile>,
    pub n_records: usize,
    pub epochs_run: usize,
    pub best_val_top1: f64,
    pub train_seconds: f64,
    pub train_minutes: f64,
}

/// Trains on a synthetic corpus and reports parameter, compute, and
/// state-preparation circuit costs for one representative record.
pub fn profile(
    config: &TrainConfig,
    n_per_class: usize,
    data_seed: u64,
) -> Result<ProfileReport, EvalError> {
    let records = generate_synthetic_dataset(n_per_class, data_seed);
    let start = Instant::now();
    let outcome = train(&records, config, |_| {})?;
    let train_seconds = start.elapsed().as_secs_f64();
    let (params, featurizer) = outcome.checkpoint.build()?;

    let first = &records[outcome.split.train[0]];
    let inputs = featurizer.featurize(first)?;
    let dims = forward_dims(&config.model, &inputs);
    let macs_closed_form = count_macs(&config.model, &dims);
    let mut tape = Tape::new();
    let mut order = Vec::new();
    let refs = params.bind(&mut tape, &mut order);
    forward(&mut tape, &refs, &config.model, &inputs, None)?;
    let macs_instrumented = tape.mac_count();

    let circuit = if config.model.enabled(Modality::Quantum) {
        let amps = featurizer.quantum_amplitudes(&first.quantum)?;
        let circ = build_mottonen_circuit(&amps);
        Some(CircuitProfile {
            n_qubits: circ.n_qubits,
            amplitudes: amps.values.len(),
            stats: circuit_stats(&circ),
        })
    } else {
        None
    };

    let parameter_count = params.parameter_count();
    Ok(ProfileReport {
        modalities: config
            .model
            .modalities
            .iter()
            .map(|m| m.label().to_string())
            .collect(),
        d_model: config.model.encoder.d_model,
        parameter_count,
        param_memory_bytes: parameter_count * std::mem::size_of::<f64>(),
        dims,
        macs_closed_form,
        macs_instrumented,
        circuit,
        n_records: records.len(),
        epochs_run: outcome.history.epochs.len(),
        best_val_top1: outcome.history.best_val_top1,
        train_seconds,
        train_minutes: train_seconds / 60.0,
    })
}
