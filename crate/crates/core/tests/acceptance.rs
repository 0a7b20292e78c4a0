//! Acceptance suite: the guarantees the system advertises, each checked
//! end to end at its stated tolerance. Every test here exercises public
//! API only, the way a downstream caller would.

use std::fs;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use qvt_core::chem::{parse_smiles, MolecularGraph};
use qvt_core::data::{
    generate_synthetic_dataset, stratified_split, EnzymeRecord, QuantumDescriptors, SplitRatios,
    N_CLASSES,
};
use qvt_core::encoders::{encode_graph, EncoderConfig, GraphEncoderParams, GraphTensors};
use qvt_core::eval::{
    auc_one_vs_rest, confusion_matrix, count_macs, evaluate, format_ablation_table, forward_dims,
    macro_prf, resolve_split, run_ablation, top_k_accuracy, write_metrics_report, SplitChoice,
};
use qvt_core::model::{
    argmax_class, focal_loss, forward, Checkpoint, Featurizer, Modality, ModelConfig, ModelParams,
};
use qvt_core::quantum::{
    basis_probabilities, build_mottonen_circuit, circuit_stats, prepare_amplitudes, simulate,
};
use qvt_core::tensor::{Tape, Tensor, TensorRef};
use qvt_core::train::{train, TrainConfig};

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        d_model: 12,
        n_heads: 2,
        n_blocks: 1,
        max_seq_len: 24,
        gnn_hidden: 10,
        gnn_layers: 2,
        cnn_channels: vec![2, 3],
        image_size: 12,
        fp_bits: 64,
        ..EncoderConfig::default()
    }
}

// ---- state preparation ----

#[test]
fn state_preparation_reaches_unit_fidelity_with_exact_gate_counts() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for n in 1..=6usize {
        let dim = 1usize << n;
        for _ in 0..100 {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let amps = prepare_amplitudes(&raw).unwrap();
            assert_eq!(amps.n_qubits, n);
            let circuit = build_mottonen_circuit(&amps);
            let stats = circuit_stats(&circuit);
            assert_eq!(stats.ry_count, dim - 1, "RY count at {n} qubits");
            assert_eq!(stats.cnot_count, dim - 2, "CNOT count at {n} qubits");
            let state = simulate(&circuit).unwrap();
            let fidelity: f64 = amps
                .values
                .iter()
                .zip(&state.amplitudes)
                .map(|(t, a)| t * a)
                .sum();
            assert!(
                fidelity >= 1.0 - 1e-9,
                "fidelity {fidelity} at {n} qubits"
            );
        }
    }
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn measured_probabilities_equal_squared_normalized_inputs() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for n in 1..=6usize {
        let dim = 1usize << n;
        for _ in 0..100 {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let norm_sq: f64 = raw.iter().map(|v| v * v).sum();
            let amps = prepare_amplitudes(&raw).unwrap();
            let state = simulate(&build_mottonen_circuit(&amps)).unwrap();
            let probs = basis_probabilities(&state);
            assert_eq!(probs.len(), dim);
            for (p, v) in probs.iter().zip(&raw) {
                assert!((p - v * v / norm_sq).abs() < 1e-10);
            }
        }
    }
}

// ---- gradient checks ----

type Builder = fn(&mut Tape, &[TensorRef]) -> TensorRef;

struct PrimitiveCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    positive: bool,
    build: Builder,
}

const EMBED_IDX: [usize; 5] = [0, 2, 5, 2, 1];
const SCATTER_DST: [usize; 5] = [0, 2, 2, 4, 1];

fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        PrimitiveCase {
            name: "add",
            shapes: &[&[3, 4], &[3, 4]],
            positive: false,
            build: |t, x| t.add(x[0], x[1]).unwrap(),
        },
        PrimitiveCase {
            name: "sub",
            shapes: &[&[3, 4], &[3, 4]],
            positive: false,
            build: |t, x| t.sub(x[0], x[1]).unwrap(),
        },
        PrimitiveCase {
            name: "mul",
            shapes: &[&[3, 4], &[3, 4]],
            positive: false,
            build: |t, x| t.mul(x[0], x[1]).unwrap(),
        },
        PrimitiveCase {
            name: "scale",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.scale(x[0], -1.7).unwrap(),
        },
        PrimitiveCase {
            name: "add_scalar",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.add_scalar(x[0], 0.9).unwrap(),
        },
        PrimitiveCase {
            name: "pow_const",
            shapes: &[&[3, 4]],
            positive: true,
            build: |t, x| t.pow_const(x[0], 1.7).unwrap(),
        },
        PrimitiveCase {
            name: "relu",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.relu(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "log",
            shapes: &[&[3, 4]],
            positive: true,
            build: |t, x| t.log(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "matmul",
            shapes: &[&[3, 4], &[4, 5]],
            positive: false,
            build: |t, x| t.matmul(x[0], x[1]).unwrap(),
        },
        PrimitiveCase {
            name: "transpose",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.transpose(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "add_bias",
            shapes: &[&[3, 4], &[4]],
            positive: false,
            build: |t, x| t.add_bias(x[0], x[1]).unwrap(),
        },
        PrimitiveCase {
            name: "reshape",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.reshape(x[0], vec![2, 6]).unwrap(),
        },
        PrimitiveCase {
            name: "concat_rows",
            shapes: &[&[2, 4], &[3, 4]],
            positive: false,
            build: |t, x| t.concat(x, 0).unwrap(),
        },
        PrimitiveCase {
            name: "concat_cols",
            shapes: &[&[3, 2], &[3, 3]],
            positive: false,
            build: |t, x| t.concat(x, 1).unwrap(),
        },
        PrimitiveCase {
            name: "slice_rows",
            shapes: &[&[5, 4]],
            positive: false,
            build: |t, x| t.slice_rows(x[0], 1, 3).unwrap(),
        },
        PrimitiveCase {
            name: "slice_cols",
            shapes: &[&[3, 6]],
            positive: false,
            build: |t, x| t.slice_cols(x[0], 2, 3).unwrap(),
        },
        PrimitiveCase {
            name: "mean",
            shapes: &[&[3, 4]],
            positive: false,
            build: |t, x| t.mean(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "mean_rows",
            shapes: &[&[5, 4]],
            positive: false,
            build: |t, x| t.mean_rows(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "softmax",
            shapes: &[&[3, 5]],
            positive: false,
            build: |t, x| t.softmax(x[0]).unwrap(),
        },
        PrimitiveCase {
            name: "layer_norm",
            shapes: &[&[3, 4], &[4], &[4]],
            positive: false,
            build: |t, x| t.layer_norm(x[0], x[1], x[2]).unwrap(),
        },
        PrimitiveCase {
            name: "embedding_lookup",
            shapes: &[&[6, 3]],
            positive: false,
            build: |t, x| t.embedding_lookup(x[0], &EMBED_IDX).unwrap(),
        },
        PrimitiveCase {
            name: "scatter_sum_rows",
            shapes: &[&[5, 3]],
            positive: false,
            build: |t, x| t.scatter_sum_rows(x[0], &SCATTER_DST, 5).unwrap(),
        },
        PrimitiveCase {
            name: "conv2d",
            shapes: &[&[2, 6, 6], &[3, 2, 3, 3]],
            positive: false,
            build: |t, x| t.conv2d(x[0], x[1], 2).unwrap(),
        },
    ]
}

/// Reduces an arbitrary output to a scalar whose gradient pattern is not
/// uniform, so index-routing bugs cannot cancel out.
fn weighted_scalar(tape: &mut Tape, out: TensorRef) -> TensorRef {
    let n = tape.data(out).len();
    let shape = tape.shape(out).to_vec();
    let weights: Vec<f64> = (0..n).map(|i| (0.73 * i as f64 + 1.3).sin()).collect();
    let w = tape.constant(&Tensor::new(shape, weights));
    let prod = tape.mul(out, w).unwrap();
    tape.mean(prod).unwrap()
}

fn case_value(case: &PrimitiveCase, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let refs: Vec<TensorRef> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = (case.build)(&mut tape, &refs);
    let scalar = weighted_scalar(&mut tape, out);
    tape.data(scalar)[0]
}

fn case_grads(case: &PrimitiveCase, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let refs: Vec<TensorRef> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = (case.build)(&mut tape, &refs);
    let scalar = weighted_scalar(&mut tape, out);
    let grads = tape.backward(scalar).unwrap();
    refs.iter()
        .map(|&r| grads.get(r).expect("input gradient").to_vec())
        .collect()
}

fn assert_close_rel(analytic: f64, fd: f64, tol: f64, context: &str) {
    let denom = analytic.abs().max(fd.abs());
    if denom < 1e-8 {
        return;
    }
    let rel = (analytic - fd).abs() / denom;
    assert!(rel < tol, "{context}: analytic {analytic}, fd {fd}, rel {rel}");
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let started = Instant::now();
    let h = 1e-4;

    for case in primitive_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed ^ case.name.len() as u64);
        for instance in 0..20 {
            let mut inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|shape| {
                    let n: usize = shape.iter().product();
                    let data: Vec<f64> = (0..n)
                        .map(|_| {
                            if case.positive {
                                rng.gen_range(0.2..1.5)
                            } else {
                                // keep clear of the relu kink at zero
                                let mag = rng.gen_range(0.1..1.2);
                                if rng.gen_bool(0.5) {
                                    mag
                                } else {
                                    -mag
                                }
                            }
                        })
                        .collect();
                    Tensor::new(shape.to_vec(), data)
                })
                .collect();

            let analytic = case_grads(&case, &inputs);
            for slot in 0..inputs.len() {
                for i in 0..inputs[slot].data.len() {
                    let orig = inputs[slot].data[i];
                    inputs[slot].data[i] = orig + h;
                    let fp = case_value(&case, &inputs);
                    inputs[slot].data[i] = orig - h;
                    let fm = case_value(&case, &inputs);
                    inputs[slot].data[i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    assert_close_rel(
                        analytic[slot][i],
                        fd,
                        1e-4,
                        &format!("{} instance {instance} input {slot}[{i}]", case.name),
                    );
                }
            }
        }
    }

    end_to_end_gradients(h);
    assert!(started.elapsed().as_secs_f64() < 60.0);
}

/// Full-model check: loss gradients on a 1% sample of the parameters of a
/// small all-modality configuration.
fn end_to_end_gradients(h: f64) {
    let config = ModelConfig::new(tiny_encoder(), &Modality::ALL);
    let records = generate_synthetic_dataset(2, 99);
    let all: Vec<usize> = (0..records.len()).collect();
    let featurizer = Featurizer::fit(&config, &records, &all).unwrap();
    let inputs = featurizer.featurize(&records[0]).unwrap();
    let alpha = vec![1.0; N_CLASSES];
    let mut params = ModelParams::init(
        &config,
        featurizer.vocab.len(),
        &mut ChaCha20Rng::seed_from_u64(5),
    );

    let loss_of = |p: &ModelParams| -> f64 {
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let refs = p.bind(&mut tape, &mut order);
        let pass = forward(&mut tape, &refs, &config, &inputs, None).unwrap();
        let loss = focal_loss(&mut tape, pass.logits, inputs.label, &alpha, 2.0).unwrap();
        tape.data(loss)[0]
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let refs = params.bind(&mut tape, &mut order);
        let pass = forward(&mut tape, &refs, &config, &inputs, None).unwrap();
        let loss = focal_loss(&mut tape, pass.logits, inputs.label, &alpha, 2.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Weights for bond orders absent from the molecule never enter the
        // graph; their gradient is zero by construction.
        order
            .iter()
            .map(|&r| {
                grads
                    .get(r)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.data(r).len()])
            })
            .collect()
    };

    let mut pairs = Vec::new();
    for (slot, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            pairs.push((slot, i));
        }
    }
    let total = pairs.len();
    assert_eq!(total, params.parameter_count());

    let mut checked = 0usize;
    for &(slot, i) in pairs.iter().step_by(100) {
        let orig = params.collect_mut()[slot].1.data[i];
        params.collect_mut()[slot].1.data[i] = orig + h;
        let fp = loss_of(&params);
        params.collect_mut()[slot].1.data[i] = orig - h;
        let fm = loss_of(&params);
        params.collect_mut()[slot].1.data[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let denom = analytic[slot][i].abs().max(fd.abs());
        if denom >= 1e-7 {
            let rel = (analytic[slot][i] - fd).abs() / denom;
            assert!(
                rel < 1e-3,
                "parameter {slot}[{i}]: analytic {}, fd {fd}, rel {rel}",
                analytic[slot][i]
            );
        }
        checked += 1;
    }
    assert!(checked * 100 >= total, "sampled fewer than 1% of parameters");
}

// ---- graph encoder invariance ----

fn permute_graph(g: &MolecularGraph, perm: &[usize]) -> MolecularGraph {
    // perm[new] = old
    let mut out = MolecularGraph::new();
    for &old in perm {
        out.add_atom(g.atoms[old]);
    }
    let mut new_of = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        new_of[old] = new;
    }
    for b in &g.bonds {
        out.add_bond(new_of[b.a], new_of[b.b], b.order).unwrap();
    }
    out
}

#[test]
fn graph_encoder_is_permutation_invariant() {
    let smiles = [
        "CC(=O)Oc1ccccc1C(=O)O",
        "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
        "c1ccc2ccccc2c1",
        "c1ccc2c(c1)cc[nH]2",
        "c1ccc(cc1)c1ccccc1",
        "OCC1OC(O)C(O)C(O)C1O",
        "C=Cc1ccccc1",
        "COP(=O)(O)O",
        "c1ccsc1",
        "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    ];
    let cfg = EncoderConfig {
        d_model: 16,
        gnn_hidden: 16,
        gnn_layers: 3,
        ..EncoderConfig::default()
    };
    let params = GraphEncoderParams::init(&cfg, &mut ChaCha20Rng::seed_from_u64(3));

    let embed = |g: &MolecularGraph| -> Vec<f64> {
        let tensors = GraphTensors::from_graph(g);
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let refs = params.bind(&mut tape, &mut order);
        let out = encode_graph(&mut tape, &refs, &tensors).unwrap();
        tape.data(out).to_vec()
    };

    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for s in smiles {
        let g = parse_smiles(s).unwrap();
        let base = embed(&g);
        for _ in 0..50 {
            let mut perm: Vec<usize> = (0..g.atoms.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled = embed(&permute_graph(&g, &perm));
            for (a, b) in base.iter().zip(&shuffled) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-9, "worst deviation {worst}");
}

// ---- metric oracles ----

fn naive_top_k(scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let better = row.iter().filter(|&&s| s > row[y]).count();
            let tied_earlier = row[..y].iter().filter(|&&s| s == row[y]).count();
            better + tied_earlier < k
        })
        .count();
    hits as f64 / scores.len() as f64
}

fn naive_macro(labels: &[usize], preds: &[usize]) -> (f64, f64, f64) {
    let mut sums = (0.0, 0.0, 0.0);
    let mut present = 0usize;
    for c in 0..N_CLASSES {
        let tp = labels
            .iter()
            .zip(preds)
            .filter(|(&l, &p)| l == c && p == c)
            .count() as f64;
        let support = labels.iter().filter(|&&l| l == c).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        if support == 0.0 {
            continue;
        }
        present += 1;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sums.0 += precision;
        sums.1 += recall;
        sums.2 += f1;
    }
    if present == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = present as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}

fn naive_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(positives)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(positives)
        .filter(|(_, &p)| !p)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..200 {
        let n = rng.gen_range(1..=60usize);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        // scores on a coarse grid so ties are common
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..N_CLASSES)
                    .map(|_| rng.gen_range(0..9) as f64 / 4.0)
                    .collect()
            })
            .collect();

        for k in 1..=N_CLASSES {
            let fast = top_k_accuracy(&scores, &labels, k);
            let slow = naive_top_k(&scores, &labels, k);
            assert!((fast - slow).abs() < 1e-12, "top-{k}: {fast} vs {slow}");
        }

        let preds: Vec<usize> = scores.iter().map(|row| argmax_class(row)).collect();
        let cm = confusion_matrix(&labels, &preds);
        for t in 0..N_CLASSES {
            for p in 0..N_CLASSES {
                let slow = labels
                    .iter()
                    .zip(&preds)
                    .filter(|(&l, &q)| l == t && q == p)
                    .count();
                assert_eq!(cm[t][p], slow, "confusion[{t}][{p}]");
            }
        }

        let fast = macro_prf(&cm);
        let slow = naive_macro(&labels, &preds);
        assert!((fast.0 - slow.0).abs() < 1e-12, "macro precision");
        assert!((fast.1 - slow.1).abs() < 1e-12, "macro recall");
        assert!((fast.2 - slow.2).abs() < 1e-12, "macro f1");

        for c in 0..N_CLASSES {
            let col: Vec<f64> = scores.iter().map(|row| row[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            match (auc_one_vs_rest(&col, &pos), naive_auc(&col, &pos)) {
                (Some(fast), Some(slow)) => {
                    assert!((fast - slow).abs() < 1e-12, "auc[{c}]: {fast} vs {slow}");
                }
                (None, None) => {}
                (fast, slow) => panic!("auc[{c}] disagreement: {fast:?} vs {slow:?}"),
            }
        }
    }
}

// ---- cost model ----

#[test]
fn closed_form_mac_count_matches_instrumentation() {
    let stages: [&[Modality]; 3] = [
        &[Modality::Sequence, Modality::Quantum],
        &[Modality::Sequence, Modality::Quantum, Modality::Graph],
        &Modality::ALL,
    ];
    let records = generate_synthetic_dataset(3, 21);
    let all: Vec<usize> = (0..records.len()).collect();

    for mods in stages {
        let config = ModelConfig::new(EncoderConfig::default(), mods);
        let featurizer = Featurizer::fit(&config, &records, &all).unwrap();
        let params = ModelParams::init(
            &config,
            featurizer.vocab.len(),
            &mut ChaCha20Rng::seed_from_u64(1),
        );
        for record in records.iter().take(6) {
            let inputs = featurizer.featurize(record).unwrap();
            let mut tape = Tape::new();
            let mut order = Vec::new();
            let refs = params.bind(&mut tape, &mut order);
            forward(&mut tape, &refs, &config, &inputs, None).unwrap();
            let closed = count_macs(&config, &forward_dims(&config, &inputs));
            assert_eq!(
                closed,
                tape.mac_count(),
                "modalities {:?}, record {}",
                config.modalities,
                record.id
            );
        }
    }
}

// ---- splitting ----

fn stub_record(class: i64, i: usize) -> EnzymeRecord {
    EnzymeRecord {
        id: format!("stub-{class}-{i}"),
        sequence: "MKT".into(),
        smiles: "CCO".into(),
        selfies: None,
        quantum: QuantumDescriptors {
            scf_total_energy: -1.0,
            nuclear_repulsion_energy: 0.5,
            gradient_magnitude: 0.1,
        },
        ec_class: class,
    }
}

#[test]
fn stratified_split_holds_out_one_fifth_of_every_class() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for trial in 0..200 {
        let mut records = Vec::new();
        let mut per_class = [0usize; N_CLASSES];
        for class in 1..=N_CLASSES {
            let n = rng.gen_range(3..=40usize);
            per_class[class - 1] = n;
            for i in 0..n {
                records.push(stub_record(class as i64, i));
            }
        }
        records.shuffle(&mut rng);

        let split = stratified_split(&records, SplitRatios::default(), rng.gen()).unwrap();
        let mut test_per_class = [0usize; N_CLASSES];
        for &i in &split.test {
            test_per_class[records[i].label()] += 1;
        }
        for c in 0..N_CLASSES {
            let expected = 0.2 * per_class[c] as f64;
            let got = test_per_class[c] as f64;
            assert!(
                (got - expected).abs() <= 1.0 + 1e-9,
                "trial {trial} class {c}: {got} test records of {} (expected ~{expected})",
                per_class[c]
            );
        }
    }
}

// ---- end-to-end training ----

#[test]
fn full_model_learns_the_synthetic_task() {
    let started = Instant::now();
    let records = generate_synthetic_dataset(100, 7);
    let config = TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    };
    let outcome = train(&records, &config, |_| {}).unwrap();
    let (params, featurizer) = outcome.checkpoint.build().unwrap();
    let report = evaluate(&records, &outcome.split.test, &params, &featurizer, "test").unwrap();
    let top1 = report.top_k[0].accuracy;
    assert!(top1 >= 0.90, "held-out top-1 {top1}");
    assert!(
        started.elapsed().as_secs_f64() < 300.0,
        "training took {:?}",
        started.elapsed()
    );
}

#[test]
fn ablation_table_shows_no_loss_from_adding_modalities() {
    let records = generate_synthetic_dataset(100, 7);
    let base = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let report = run_ablation(&records, &base, &[3, 5, 7], |_| {}).unwrap();
    assert_eq!(report.rows.len(), 4);

    let first = &report.rows[0];
    let last = &report.rows[3];
    assert_eq!(first.modalities, vec!["sequence", "quantum"]);
    assert_eq!(last.modalities.len(), 5);
    assert!(
        last.top1 >= first.top1,
        "all modalities {} vs sequence+quantum {}",
        last.top1,
        first.top1
    );

    let table = format_ablation_table(&report);
    for column in ["modalities", "top-1", "precision", "recall", "f1"] {
        assert!(table.contains(column), "missing column {column}:\n{table}");
    }
    assert_eq!(table.lines().count(), 5, "header plus one row per stage");
}

// ---- determinism ----

#[test]
fn training_and_evaluation_are_bitwise_deterministic() {
    let records = generate_synthetic_dataset(8, 13);
    let config = TrainConfig {
        model: ModelConfig::new(tiny_encoder(), &Modality::ALL),
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();

    let mut checkpoint_bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("model-{run}.json"));
        let outcome = train(&records, &config, |_| {}).unwrap();
        outcome.checkpoint.save(&path).unwrap();
        checkpoint_bytes.push(fs::read(&path).unwrap());
    }
    assert!(
        checkpoint_bytes[0] == checkpoint_bytes[1],
        "checkpoints differ between identical runs"
    );

    let model_path = dir.path().join("model-0.json");
    let mut report_bytes = Vec::new();
    let mut csv_bytes = Vec::new();
    for run in 0..2 {
        let ckpt = Checkpoint::load(&model_path).unwrap();
        let (params, featurizer) = ckpt.build().unwrap();
        let idx = resolve_split(&records, ckpt.split.as_ref(), SplitChoice::Test).unwrap();
        let report = evaluate(&records, &idx, &params, &featurizer, "test").unwrap();
        let path = dir.path().join(format!("report-{run}.json"));
        write_metrics_report(&report, &path).unwrap();
        report_bytes.push(fs::read(&path).unwrap());
        csv_bytes.push(fs::read(path.with_extension("confusion.csv")).unwrap());
    }
    assert!(
        report_bytes[0] == report_bytes[1],
        "reports differ between identical runs"
    );
    assert!(csv_bytes[0] == csv_bytes[1]);
}

// ---- loss closed forms ----

#[test]
fn focal_loss_matches_closed_forms() {
    let mut rng = ChaCha20Rng::seed_from_u64(29);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..N_CLASSES).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..N_CLASSES);
        let alpha: Vec<f64> = (0..N_CLASSES).map(|_| rng.gen_range(0.2..2.0)).collect();

        let mut tape = Tape::new();
        let l = tape.param(&Tensor::row(logits.clone()));
        let loss = focal_loss(&mut tape, l, label, &alpha, 0.0).unwrap();
        let got = tape.data(loss)[0];

        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        let cross_entropy = -alpha[label] * ((logits[label] - max).exp() / z).ln();
        assert!(
            (got - cross_entropy).abs() < 1e-12,
            "gamma 0: {got} vs {cross_entropy}"
        );
    }

    // p_y = 0.9 with gamma = 2 and unit alpha: loss = -0.01 ln 0.9
    let p_y = 0.9f64;
    let rest = (1.0 - p_y) / (N_CLASSES - 1) as f64;
    let logits: Vec<f64> = (0..N_CLASSES)
        .map(|c| if c == 0 { p_y.ln() } else { rest.ln() })
        .collect();
    let mut tape = Tape::new();
    let l = tape.param(&Tensor::row(logits));
    let loss = focal_loss(&mut tape, l, 0, &vec![1.0; N_CLASSES], 2.0).unwrap();
    let got = tape.data(loss)[0];
    assert!(
        (got - 1.05361e-3).abs() < 1e-8,
        "focused loss at p=0.9: {got}"
    );
}

// ---- parser corpus ----

#[derive(Deserialize)]
struct CorpusEntry {
    name: String,
    smiles: String,
    atoms: usize,
    bonds: usize,
    aromatic_atoms: usize,
}

#[test]
fn smiles_corpus_parses_to_recorded_stats() {
    let entries: Vec<CorpusEntry> =
        serde_json::from_str(include_str!("fixtures/molecules.json")).unwrap();
    assert_eq!(entries.len(), 30);
    for e in &entries {
        let g = parse_smiles(&e.smiles).unwrap_or_else(|err| panic!("{}: {err}", e.name));
        assert_eq!(g.atoms.len(), e.atoms, "{}: atom count", e.name);
        assert_eq!(g.bonds.len(), e.bonds, "{}: bond count", e.name);
        let aromatic = g.atoms.iter().filter(|a| a.aromatic).count();
        assert_eq!(aromatic, e.aromatic_atoms, "{}: aromatic atoms", e.name);
    }
}
