//! Command-line interface: dataset generation, training, evaluation, the
//! modality ablation, compute profiling, and small inspection helpers.

use clap::{Args, Parser, Subcommand, ValueEnum};
use qvt_core::chem::{morgan_fingerprint, parse_smiles, tanimoto_similarity};
use qvt_core::data::{generate_synthetic_dataset, load_dataset, save_dataset, SplitRatios};
use qvt_core::encoders::{EncoderConfig, QuantumReadout, SequenceSource};
use qvt_core::eval::{
    evaluate, format_ablation_table, profile, resolve_split, run_ablation, write_json,
    write_metrics_report, SplitChoice,
};
use qvt_core::model::{Checkpoint, Modality, ModelConfig};
use qvt_core::quantum::{
    basis_probabilities, build_mottonen_circuit, circuit_stats, prepare_amplitudes, simulate,
    z_expectations,
};
use qvt_core::train::{train, TrainConfig};
use std::error::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "qvt",
    version,
    about = "Multimodal enzyme class prediction with amplitude-encoded quantum descriptors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus as JSON lines
    GenData {
        /// Output dataset path
        #[arg(long)]
        out: PathBuf,
        /// Records per enzyme class
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a classifier and write a checkpoint plus epoch history
    Train {
        /// Input dataset (JSON lines)
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        optim: OptimArgs,
    },
    /// Score a trained model and write a metrics report
    Evaluate {
        /// Checkpoint produced by train
        #[arg(long)]
        model: PathBuf,
        /// Dataset to score
        #[arg(long)]
        data: PathBuf,
        /// Report output path (a confusion matrix CSV lands next to it)
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Which side of the recorded split to score
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Train each modality stage across seeds and tabulate test accuracy
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ablation.json")]
        out: PathBuf,
        /// Training seeds, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = vec![3u64, 5, 7])]
        seeds: Vec<u64>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        optim: OptimArgs,
    },
    /// Measure parameters, per-record compute, and circuit costs on a
    /// small synthetic corpus
    Profile {
        #[arg(long, default_value = "profile.json")]
        out: PathBuf,
        /// Synthetic records per class
        #[arg(long, default_value_t = 20)]
        n_per_class: usize,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        optim: OptimArgs,
    },
    /// Parse a molecule and print its graph and fingerprint
    InspectMol {
        #[arg(long)]
        smiles: String,
        /// Second molecule for fingerprint similarity
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, default_value_t = 2)]
        fp_radius: u32,
        #[arg(long, default_value_t = 1024)]
        fp_bits: usize,
    },
    /// Amplitude-encode raw values and print the circuit and readout
    InspectQuantum {
        /// Values to encode, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ReadoutArg::Probabilities)]
        readout: ReadoutArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Sequence,
    Graph,
    Image,
    Quantum,
    Fingerprint,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Modality {
        match m {
            ModalityArg::Sequence => Modality::Sequence,
            ModalityArg::Graph => Modality::Graph,
            ModalityArg::Image => Modality::Image,
            ModalityArg::Quantum => Modality::Quantum,
            ModalityArg::Fingerprint => Modality::Fingerprint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReadoutArg {
    Probabilities,
    Z,
}

impl From<ReadoutArg> for QuantumReadout {
    fn from(r: ReadoutArg) -> QuantumReadout {
        match r {
            ReadoutArg::Probabilities => QuantumReadout::Probabilities,
            ReadoutArg::Z => QuantumReadout::ZExpectations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Protein,
    Selfies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl From<SplitArg> for SplitChoice {
    fn from(s: SplitArg) -> SplitChoice {
        match s {
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Val => SplitChoice::Val,
            SplitArg::Test => SplitChoice::Test,
            SplitArg::All => SplitChoice::All,
        }
    }
}

#[derive(Args, Clone)]
struct EncoderArgs {
    /// Modalities to enable, comma separated
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![ModalityArg::Sequence, ModalityArg::Graph,
                                  ModalityArg::Image, ModalityArg::Quantum,
                                  ModalityArg::Fingerprint])]
    modalities: Vec<ModalityArg>,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    #[arg(long, default_value_t = 2)]
    n_blocks: usize,
    #[arg(long, default_value_t = 128)]
    max_seq_len: usize,
    /// Token stream for the sequence encoder
    #[arg(long, value_enum, default_value_t = SourceArg::Protein)]
    sequence_source: SourceArg,
    #[arg(long, default_value_t = 64)]
    gnn_hidden: usize,
    #[arg(long, default_value_t = 3)]
    gnn_layers: usize,
    /// Convolution channel widths, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32])]
    cnn_channels: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Descriptor slots fed into amplitude encoding
    #[arg(long, default_value_t = 3)]
    quantum_features: usize,
    #[arg(long, value_enum, default_value_t = ReadoutArg::Probabilities)]
    quantum_readout: ReadoutArg,
    #[arg(long, default_value_t = 2)]
    fp_radius: usize,
    #[arg(long, default_value_t = 1024)]
    fp_bits: usize,
}

impl EncoderArgs {
    fn model_config(&self) -> ModelConfig {
        let encoder = EncoderConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            max_seq_len: self.max_seq_len,
            sequence_source: match self.sequence_source {
                SourceArg::Protein => SequenceSource::Protein,
                SourceArg::Selfies => SequenceSource::Selfies,
            },
            gnn_hidden: self.gnn_hidden,
            gnn_layers: self.gnn_layers,
            cnn_channels: self.cnn_channels.clone(),
            image_size: self.image_size,
            quantum_features: self.quantum_features,
            quantum_readout: self.quantum_readout.into(),
            fp_radius: self.fp_radius,
            fp_bits: self.fp_bits,
        };
        let modalities: Vec<Modality> = self.modalities.iter().map(|&m| m.into()).collect();
        ModelConfig::new(encoder, &modalities)
    }
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "lr", default_value_t = 1e-3)]
    learning_rate: f64,
    /// Focal loss focusing exponent; zero gives plain cross-entropy
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0.6)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    val_ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    test_ratio: f64,
}

fn train_config(encoder: &EncoderArgs, optim: &OptimArgs) -> TrainConfig {
    TrainConfig {
        model: encoder.model_config(),
        epochs: optim.epochs,
        batch_size: optim.batch_size,
        seed: optim.seed,
        learning_rate: optim.learning_rate,
        gamma: optim.gamma,
        dropout: optim.dropout,
        split: SplitRatios {
            train: optim.train_ratio,
            val: optim.val_ratio,
            test: optim.test_ratio,
        },
        ..TrainConfig::default()
    }
}

fn main() {
    // Die quietly like other line-oriented tools when the reader closes
    // the pipe, instead of panicking on the next print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            e.print().ok();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::GenData {
            out,
            n_per_class,
            seed,
        } => {
            let records = generate_synthetic_dataset(n_per_class, seed);
            save_dataset(&out, &records)?;
            println!(
                "wrote {} records ({} per class, seed {seed}) to {}",
                records.len(),
                n_per_class,
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            encoder,
            optim,
        } => {
            let records = load_dataset(&data)?;
            let config = train_config(&encoder, &optim);
            let outcome = train(&records, &config, |e| {
                println!(
                    "epoch {:>3}/{}  loss {:.4}  val top-1 {:.4}",
                    e.epoch, config.epochs, e.train_loss, e.val_top1
                );
            })?;
            outcome.checkpoint.save(&out)?;
            let history_path = out.with_extension("history.json");
            write_json(&outcome.history, &history_path)?;
            println!(
                "best epoch {} with val top-1 {:.4}; checkpoint {} history {}",
                outcome.history.best_epoch,
                outcome.history.best_val_top1,
                out.display(),
                history_path.display()
            );
        }
        Command::Evaluate {
            model,
            data,
            report,
            split,
        } => {
            let checkpoint = Checkpoint::load(&model)?;
            let records = load_dataset(&data)?;
            let (params, featurizer) = checkpoint.build()?;
            let choice: SplitChoice = split.into();
            let indices = resolve_split(&records, checkpoint.split.as_ref(), choice)?;
            let metrics = evaluate(&records, &indices, &params, &featurizer, choice.label())?;
            write_metrics_report(&metrics, &report)?;
            println!(
                "{} split: {} records  top-1 {:.4}  top-2 {:.4}  top-3 {:.4}",
                metrics.split,
                metrics.n_records,
                metrics.top_k[0].accuracy,
                metrics.top_k[1].accuracy,
                metrics.top_k[2].accuracy
            );
            println!(
                "macro precision {:.4}  recall {:.4}  f1 {:.4}  auc {}",
                metrics.macro_precision,
                metrics.macro_recall,
                metrics.macro_f1,
                metrics
                    .auc_macro
                    .map_or("n/a".to_string(), |a| format!("{a:.4}"))
            );
            println!("report {}", report.display());
        }
        Command::Ablate {
            data,
            out,
            seeds,
            encoder,
            optim,
        } => {
            let records = load_dataset(&data)?;
            let base = train_config(&encoder, &optim);
            let report = run_ablation(&records, &base, &seeds, |line| println!("{line}"))?;
            write_json(&report, &out)?;
            print!("{}", format_ablation_table(&report));
            println!("report {}", out.display());
        }
        Command::Profile {
            out,
            n_per_class,
            encoder,
            optim,
        } => {
            let config = train_config(&encoder, &optim);
            let report = profile(&config, n_per_class, optim.seed)?;
            write_json(&report, &out)?;
            println!("modalities: {}", report.modalities.join("+"));
            println!(
                "parameters: {} ({} bytes as f64)",
                report.parameter_count, report.param_memory_bytes
            );
            println!(
                "per-record MACs: {} (closed form {})",
                report.macs_instrumented, report.macs_closed_form
            );
            if let Some(c) = &report.circuit {
                println!(
                    "state prep: {} qubits, {} RY + {} CNOT, depth {}",
                    c.n_qubits, c.stats.ry_count, c.stats.cnot_count, c.stats.depth
                );
            }
            println!(
                "trained {} epochs on {} records in {:.1}s ({:.3} min), best val top-1 {:.4}",
                report.epochs_run,
                report.n_records,
                report.train_seconds,
                report.train_minutes,
                report.best_val_top1
            );
            println!("report {}", out.display());
        }
        Command::InspectMol {
            smiles,
            compare,
            fp_radius,
            fp_bits,
        } => {
            let graph = parse_smiles(&smiles)?;
            println!("{smiles}: {} atoms, {} bonds", graph.atom_count(), graph.bond_count());
            for (i, atom) in graph.atoms.iter().enumerate() {
                println!(
                    "  atom {i}: {:?}{}{} degree {}",
                    atom.element,
                    if atom.aromatic { " aromatic" } else { "" },
                    match atom.formal_charge {
                        0 => String::new(),
                        c => format!(" charge {c:+}"),
                    },
                    graph.degree(i)
                );
            }
            for bond in &graph.bonds {
                println!("  bond {}-{} {:?}", bond.a, bond.b, bond.order);
            }
            let fp = morgan_fingerprint(&graph, fp_radius, fp_bits);
            println!("fingerprint: {} of {} bits set", fp.count_ones(), fp_bits);
            if let Some(other) = compare {
                let other_graph = parse_smiles(&other)?;
                let other_fp = morgan_fingerprint(&other_graph, fp_radius, fp_bits);
                println!(
                    "tanimoto vs {other}: {:.4}",
                    tanimoto_similarity(&fp, &other_fp)
                );
            }
        }
        Command::InspectQuantum { values, readout } => {
            let amps = prepare_amplitudes(&values)?;
            let circuit = build_mottonen_circuit(&amps);
            let stats = circuit_stats(&circuit);
            let state = simulate(&circuit)?;
            println!(
                "{} values -> {} amplitudes on {} qubits",
                values.len(),
                amps.values.len(),
                circuit.n_qubits
            );
            println!(
                "circuit: {} RY + {} CNOT, depth {}",
                stats.ry_count, stats.cnot_count, stats.depth
            );
            let worst = amps
                .values
                .iter()
                .zip(&state.amplitudes)
                .map(|(t, a)| (t - a).abs())
                .fold(0.0f64, f64::max);
            println!("max |target - prepared| = {worst:.3e}");
            match readout {
                ReadoutArg::Probabilities => {
                    for (i, p) in basis_probabilities(&state).iter().enumerate() {
                        println!("  p(|{i:0width$b}>) = {p:.6}", width = circuit.n_qubits);
                    }
                }
                ReadoutArg::Z => {
                    for (q, z) in z_expectations(&state).iter().enumerate() {
                        println!("  <Z_{q}> = {z:+.6}");
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn encoder_args_map_onto_the_model_config() {
        let cli = Cli::try_parse_from([
            "qvt",
            "train",
            "--data",
            "d.jsonl",
            "--modalities",
            "quantum,sequence,quantum",
            "--d-model",
            "24",
            "--sequence-source",
            "selfies",
            "--quantum-readout",
            "z",
        ])
        .unwrap();
        let Command::Train { encoder, .. } = cli.command else {
            panic!("expected train");
        };
        let config = encoder.model_config();
        assert_eq!(config.encoder.d_model, 24);
        assert_eq!(config.encoder.sequence_source, SequenceSource::Selfies);
        assert_eq!(config.encoder.quantum_readout, QuantumReadout::ZExpectations);
        // duplicates collapse and order is canonical
        assert_eq!(
            config.modalities,
            vec![Modality::Sequence, Modality::Quantum]
        );
    }

    #[test]
    fn optimizer_args_map_onto_the_train_config() {
        let cli = Cli::try_parse_from([
            "qvt",
            "train",
            "--data",
            "d.jsonl",
            "--epochs",
            "9",
            "--lr",
            "0.005",
            "--gamma",
            "0",
            "--train-ratio",
            "0.8",
            "--val-ratio",
            "0.1",
            "--test-ratio",
            "0.1",
        ])
        .unwrap();
        let Command::Train { encoder, optim, .. } = cli.command else {
            panic!("expected train");
        };
        let config = train_config(&encoder, &optim);
        assert_eq!(config.epochs, 9);
        assert_eq!(config.learning_rate, 0.005);
        assert_eq!(config.gamma, 0.0);
        assert_eq!(config.split.train, 0.8);
        assert_eq!(config.batch_size, 32);
        assert!(config.validate().is_ok());
    }
}
