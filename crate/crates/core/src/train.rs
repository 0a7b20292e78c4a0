//! Training loop: stratified splitting, per-batch Adam updates on the
//! focal loss, and best-epoch checkpoint selection by validation accuracy.

use crate::data::{
    stratified_split, DataError, EnzymeRecord, SplitIndices, SplitRatios,
};
use crate::model::{
    argmax_class, dropout_mask, focal_loss, forward, inverse_frequency_alpha, Checkpoint,
    Featurizer, ModelConfig, ModelError, ModelInputs, ModelParams, SplitSpec,
};
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("validation split is empty; provide more records or a larger val ratio")]
    NoValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub dropout: f64,
    pub split: SplitRatios,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 50,
            batch_size: 32,
            seed: 7,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 2.0,
            dropout: 0.1,
            split: SplitRatios::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        self.split.validate()?;
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err("learning rate must be finite and non-negative".into());
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(format!("{name} must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err("adam epsilon must be positive".into());
        }
        if !(self.gamma >= 0.0) {
            return Err("gamma must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// First and second moment accumulators, one slot per parameter tensor.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One bias-corrected update. `params` and `grads` are aligned with
    /// the sizes this state was created from.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub config: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainingHistory,
    pub split: SplitIndices,
}

fn validation_accuracy(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &[ModelInputs],
) -> Result<f64, ModelError> {
    let mut correct = 0usize;
    for inp in inputs {
        let mut tape = Tape::new();
        let mut order = Vec::new();
        let refs = params.bind(&mut tape, &mut order);
        let pass = forward(&mut tape, &refs, config, inp, None)?;
        if argmax_class(tape.data(pass.logits)) == inp.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Trains a model on `records`, reporting each finished epoch through
/// `on_epoch`. The returned checkpoint holds the parameters from the
/// epoch with the highest validation accuracy (earliest on ties).
pub fn train<F: FnMut(&EpochStats)>(
    records: &[EnzymeRecord],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    // The split draws from its own seeded generator inside
    // stratified_split, so changing model hyperparameters never moves
    // records between splits.
    let split = stratified_split(records, config.split, config.seed)?;
    if split.val.is_empty() {
        return Err(TrainError::NoValidation);
    }

    let featurizer = Featurizer::fit(&config.model, records, &split.train)?;
    let train_inputs: Vec<ModelInputs> = split
        .train
        .iter()
        .map(|&i| featurizer.featurize(&records[i]))
        .collect::<Result<_, _>>()?;
    let val_inputs: Vec<ModelInputs> = split
        .val
        .iter()
        .map(|&i| featurizer.featurize(&records[i]))
        .collect::<Result<_, _>>()?;
    let labels: Vec<usize> = train_inputs.iter().map(|inp| inp.label).collect();
    let alpha = inverse_frequency_alpha(&labels);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&config.model, featurizer.vocab.len(), &mut rng);

    let sizes: Vec<usize> = params.collect().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut grad_acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();

    let mut history_epochs = Vec::with_capacity(config.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_tensors: Vec<Tensor> = Vec::new();

    let mut epoch_order: Vec<usize> = (0..train_inputs.len()).collect();
    for epoch in 1..=config.epochs {
        epoch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in epoch_order.chunks(config.batch_size) {
            for acc in grad_acc.iter_mut() {
                acc.iter_mut().for_each(|g| *g = 0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let inp = &train_inputs[i];
                let mask = (config.dropout > 0.0).then(|| {
                    dropout_mask(config.model.encoder.head_hidden(), config.dropout, &mut rng)
                });
                let mut tape = Tape::new();
                let mut order = Vec::new();
                let refs = params.bind(&mut tape, &mut order);
                let pass = forward(&mut tape, &refs, &config.model, inp, mask.as_ref())?;
                let loss =
                    focal_loss(&mut tape, pass.logits, inp.label, &alpha, config.gamma)
                        .map_err(ModelError::from)?;
                epoch_loss += tape.data(loss)[0];
                let grads = tape.backward(loss).map_err(ModelError::from)?;
                for (slot, &r) in order.iter().enumerate() {
                    if let Some(g) = grads.get(r) {
                        for (acc, gv) in grad_acc[slot].iter_mut().zip(g) {
                            *acc += gv * scale;
                        }
                    }
                }
            }
            let mut slots = params.collect_mut();
            let mut views: Vec<&mut [f64]> =
                slots.iter_mut().map(|(_, t)| t.data.as_mut_slice()).collect();
            adam.step(
                &mut views,
                &grad_acc,
                config.learning_rate,
                config.beta1,
                config.beta2,
                config.adam_eps,
            );
        }

        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train_inputs.len() as f64,
            val_top1: validation_accuracy(&params, &config.model, &val_inputs)?,
        };
        if stats.val_top1 > best_val {
            best_val = stats.val_top1;
            best_epoch = epoch;
            best_tensors = params.collect().into_iter().map(|(_, t)| t.clone()).collect();
        }
        on_epoch(&stats);
        history_epochs.push(stats);
    }

    for ((_, slot), best) in params.collect_mut().into_iter().zip(&best_tensors) {
        slot.data.copy_from_slice(&best.data);
    }

    let checkpoint = Checkpoint::new(
        &featurizer,
        &params,
        alpha,
        Some(SplitSpec {
            seed: config.seed,
            ratios: config.split,
        }),
    );
    let history = TrainingHistory {
        config: config.clone(),
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        epochs: history_epochs,
        best_epoch,
        best_val_top1: best_val,
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_dataset;
    use crate::encoders::EncoderConfig;
    use crate::model::Modality;

    fn tiny_train_config(modalities: &[Modality]) -> TrainConfig {
        let encoder = EncoderConfig {
            d_model: 16,
            n_heads: 2,
            n_blocks: 1,
            max_seq_len: 64,
            gnn_hidden: 8,
            gnn_layers: 2,
            cnn_channels: vec![4, 8],
            image_size: 16,
            fp_bits: 128,
            ..EncoderConfig::default()
        };
        TrainConfig {
            model: ModelConfig::new(encoder, modalities),
            epochs: 2,
            batch_size: 8,
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let target = [3.0, -1.5, 0.25];
        let mut x = vec![0.0; 3];
        let mut adam = AdamState::new(&[3]);
        for _ in 0..800 {
            let grads = vec![x.iter().zip(target).map(|(xi, t)| 2.0 * (xi - t)).collect()];
            adam.step(&mut [x.as_mut_slice()], &grads, 0.05, 0.9, 0.999, 1e-8);
        }
        for (xi, t) in x.iter().zip(target) {
            assert!((xi - t).abs() < 1e-3, "{xi} vs {t}");
        }
    }

    #[test]
    fn adam_with_zero_betas_is_normalized_descent() {
        let mut x = vec![2.0, -4.0];
        let g = vec![vec![0.5, -0.25]];
        let mut adam = AdamState::new(&[2]);
        adam.step(&mut [x.as_mut_slice()], &g, 0.1, 0.0, 0.0, 1e-8);
        // p -= lr * g / (|g| + eps)
        assert!((x[0] - (2.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((x[1] - (-4.0 + 0.1 * 0.25 / (0.25 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut x = vec![1.0];
        let g = vec![vec![0.01]];
        let mut adam = AdamState::new(&[1]);
        adam.step(&mut [x.as_mut_slice()], &g, 0.1, 0.9, 0.999, 1e-12);
        // First step moves by nearly lr regardless of gradient scale.
        assert!((1.0 - x[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn training_reduces_loss_on_synthetic_data() {
        let records = generate_synthetic_dataset(5, 11);
        let mut config = tiny_train_config(&[Modality::Sequence, Modality::Quantum]);
        config.epochs = 15;
        config.batch_size = 4;
        config.learning_rate = 5e-3;
        let outcome = train(&records, &config, |_| {}).unwrap();
        let first = outcome.history.epochs.first().unwrap().train_loss;
        let last = outcome.history.epochs.last().unwrap().train_loss;
        assert!(
            last < first * 0.8,
            "loss did not drop enough: {first} -> {last}"
        );
        assert!(outcome.history.best_val_top1 >= outcome.history.epochs[0].val_top1);
        assert_eq!(outcome.history.n_train, 18);
        assert_eq!(outcome.history.n_val, 6);
        assert_eq!(outcome.history.n_test, 6);
    }

    #[test]
    fn training_is_deterministic() {
        let records = generate_synthetic_dataset(4, 19);
        let config = tiny_train_config(&[Modality::Quantum, Modality::Fingerprint]);
        let a = train(&records, &config, |_| {}).unwrap();
        let b = train(&records, &config, |_| {}).unwrap();
        let ja = serde_json::to_string(&a.checkpoint).unwrap();
        let jb = serde_json::to_string(&b.checkpoint).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.history.epochs, b.history.epochs);
        assert_eq!(a.split.hash(), b.split.hash());
        // Balanced synthetic classes give uniform focal weights.
        for w in &a.checkpoint.alpha {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_first_epoch_as_best() {
        let records = generate_synthetic_dataset(4, 23);
        let mut config = tiny_train_config(&[Modality::Quantum]);
        config.epochs = 3;
        config.learning_rate = 0.0;
        let outcome = train(&records, &config, |_| {}).unwrap();
        let accs: Vec<f64> = outcome.history.epochs.iter().map(|e| e.val_top1).collect();
        assert!(accs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(outcome.history.best_epoch, 1);
    }

    #[test]
    fn empty_validation_split_is_rejected() {
        let records: Vec<_> = generate_synthetic_dataset(1, 5).into_iter().take(2).collect();
        let config = tiny_train_config(&[Modality::Quantum]);
        match train(&records, &config, |_| {}) {
            Err(TrainError::NoValidation) => {}
            other => panic!("expected NoValidation, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn config_validation_catches_bad_hyperparameters() {
        let mut config = tiny_train_config(&[Modality::Quantum]);
        config.epochs = 0;
        assert!(config.validate().is_err());

        let mut config = tiny_train_config(&[Modality::Quantum]);
        config.beta1 = 1.0;
        assert!(config.validate().is_err());

        let mut config = tiny_train_config(&[Modality::Quantum]);
        config.dropout = 1.0;
        assert!(config.validate().is_err());

        assert!(tiny_train_config(&Modality::ALL).validate().is_ok());
    }
}
