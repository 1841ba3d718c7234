//! Training loop for the sequence model, shared evaluation metrics, early
//! stopping, and metric-report emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::features::SequenceSet;
use crate::model::{DscfModel, ModelConfig, Variant};
use crate::nn::{batch_gradients, mix_seed, AdamConfig, AdamState, ParameterStore, Tape};
use crate::{Error, Result};

/// Hyperparameters for one training run of the sequence model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub walk_length: usize,
    pub num_sequences: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub variant: Variant,
    /// Exclude padding steps from attention softmaxes (off by default).
    pub mask_padding: bool,
    /// Finish as soon as the epoch train loss drops below this value
    /// (memorization-style runs).
    #[serde(default)]
    pub stop_at_train_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embedding_size: 64,
            batch_size: 128,
            learning_rate: 0.001,
            dropout: 0.5,
            walk_length: 4,
            num_sequences: 8,
            seed: 0,
            max_epochs: 100,
            patience: 5,
            variant: Variant::Full,
            mask_padding: false,
            stop_at_train_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0
            || self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.walk_length == 0
            || self.num_sequences == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::Config(
                "all train-config values must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// MAE/RMSE for one split at one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub epoch: usize,
    pub split: String,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricReport {
    /// Aggregates a vector of prediction errors (`predicted - actual`).
    pub fn from_errors(epoch: usize, split: &str, errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Domain(format!(
                "no observations to score on split `{}`",
                split
            )));
        }
        let n = errors.len() as f64;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        Ok(Self {
            epoch,
            split: split.to_string(),
            mae,
            rmse,
        })
    }
}

/// Writes reports as line-delimited JSON records with fields
/// `epoch`, `split`, `mae`, `rmse`.
pub fn save_reports_jsonl(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::State(format!("report serialization failed: {}", e)))?;
        writeln!(w, "{}", line)?;
    }
    w.flush()?;
    Ok(())
}

/// Halved mean squared error over observed pairs: `(1/2n) * sum (p - t)^2`.
pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Domain(format!(
            "loss_mse over {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / (2.0 * n))
}

/// Outcome of feeding one epoch's validation RMSE to the stopper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub new_best: bool,
    pub stop: bool,
}

/// Stops training once validation RMSE has increased for `patience`
/// successive epochs, and remembers the best epoch seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    successive_increases: usize,
    prev: Option<f64>,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            patience,
            successive_increases: 0,
            prev: None,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_rmse: f64) -> Observation {
        let new_best = match self.best {
            None => true,
            Some((_, best)) => val_rmse < best,
        };
        if new_best {
            self.best = Some((epoch, val_rmse));
        }
        match self.prev {
            Some(prev) if val_rmse > prev => self.successive_increases += 1,
            _ => self.successive_increases = 0,
        }
        self.prev = Some(val_rmse);
        Observation {
            new_best,
            stop: self.successive_increases >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Result of a training run: the best-validation parameters and the full
/// per-epoch metric trail.
pub struct TrainOutcome {
    pub model: DscfModel,
    pub store: ParameterStore,
    pub reports: Vec<MetricReport>,
    /// Mean halved squared error over the train split, one entry per epoch.
    pub train_losses: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Trains the sequence model with minibatched Adam and early stopping on
/// validation RMSE. Sequences must already be cached for every train and
/// validation pair.
pub fn train_dscf(
    dataset: &RatingDataset,
    sequences: &SequenceSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    sequences.check_compatible(dataset)?;

    let train_indices_for_mean = dataset.split_indices(Split::Train);
    let output_bias = if train_indices_for_mean.is_empty() {
        0.0
    } else {
        train_indices_for_mean
            .iter()
            .map(|&i| dataset.triples[i].rating as f64)
            .sum::<f64>()
            / train_indices_for_mean.len() as f64
    };
    let model_config = ModelConfig {
        n_users: dataset.n_users,
        n_items: dataset.n_items,
        n_levels: dataset.n_levels,
        embedding_size: config.embedding_size,
        variant: config.variant,
        dropout: config.dropout,
        mask_padding: config.mask_padding,
        shuffle_seed: mix_seed(config.seed, 2),
        output_bias,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let mut store = ParameterStore::new();
    let model = DscfModel::new(model_config, &mut store, &mut rng)?;

    let mut adam = AdamState::new(&store, AdamConfig::with_lr(config.learning_rate));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut reports = Vec::new();
    let mut train_losses = Vec::new();
    let mut best_store = store.clone();
    let mut best_epoch = 0;
    let mut stopped_epoch = 0;

    let train_indices = dataset.split_indices(Split::Train);
    let has_val = dataset.split_len(Split::Val) > 0;
    if train_indices.is_empty() {
        return Err(Error::Domain("train split is empty".into()));
    }

    for epoch in 1..=config.max_epochs {
        stopped_epoch = epoch;
        let mut order = train_indices.clone();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1000 + epoch as u64));
        order.shuffle(&mut epoch_rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / (2.0 * batch.len() as f64);
            let (grads, batch_loss) = batch_gradients(batch, |tape, &idx| {
                pair_loss(tape, &store, &model, dataset, sequences, idx, scale, epoch, config.seed)
            })?;
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite batch loss {}", batch_loss),
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            grads.apply(&mut store);
            adam.step(&mut store).map_err(|e| match e {
                Error::Training { msg, .. } => Error::Training { epoch, msg },
                other => other,
            })?;
        }
        let train_loss = epoch_loss / train_indices.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite epoch loss {}", train_loss),
            });
        }
        train_losses.push(train_loss);
        if let Some(target) = config.stop_at_train_loss {
            if train_loss < target {
                if !has_val {
                    best_store = store.clone();
                    best_epoch = epoch;
                }
                break;
            }
        }

        if has_val {
            let val = evaluate_dscf(&model, &store, dataset, sequences, Split::Val)?;
            let val = MetricReport { epoch, ..val };
            let decision = stopper.observe(epoch, val.rmse);
            reports.push(val);
            if decision.new_best {
                best_store = store.clone();
                best_epoch = epoch;
            }
            if decision.stop {
                break;
            }
        } else {
            // No validation data (tiny fixtures): keep the latest parameters.
            best_store = store.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome {
        model,
        store: best_store,
        reports,
        train_losses,
        best_epoch,
        stopped_epoch,
    })
}

#[allow(clippy::too_many_arguments)]
fn pair_loss(
    tape: &mut Tape,
    store: &ParameterStore,
    model: &DscfModel,
    dataset: &RatingDataset,
    sequences: &SequenceSet,
    idx: usize,
    scale: f64,
    epoch: usize,
    seed: u64,
) -> Result<crate::nn::NodeId> {
    let triple = dataset.triples[idx];
    let seqs = sequences.for_pair(idx, triple.user, triple.item)?;
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(seed, (epoch as u64) << 32 | idx as u64));
    let pred = model.forward_pair(tape, store, triple.user, triple.item, seqs, Some(&mut dropout_rng))?;
    let neg_target = tape.scalar(-(triple.rating as f64));
    let diff = tape.add(pred, neg_target);
    let sq = tape.mul(diff, diff);
    Ok(tape.scale(sq, scale))
}

/// MAE/RMSE over one split with predictions clamped to the rating range.
pub fn evaluate_dscf(
    model: &DscfModel,
    store: &ParameterStore,
    dataset: &RatingDataset,
    sequences: &SequenceSet,
    split: Split,
) -> Result<MetricReport> {
    use rayon::prelude::*;
    let indices = dataset.split_indices(split);
    if indices.is_empty() {
        return Err(Error::Domain(format!("split `{}` is empty", split)));
    }
    let errors: Vec<f64> = indices
        .par_iter()
        .map(|&idx| -> Result<f64> {
            let triple = dataset.triples[idx];
            let seqs = sequences.for_pair(idx, triple.user, triple.item)?;
            let mut tape = Tape::new();
            let pred = model.forward_pair(&mut tape, store, triple.user, triple.item, seqs, None)?;
            let clamped = tape
                .scalar_value(pred)
                .clamp(1.0, dataset.n_levels as f64);
            Ok(clamped - triple.rating as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    MetricReport::from_errors(0, split.as_str(), &errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_mse_matches_hand_arithmetic() {
        assert_eq!(loss_mse(&[3.0], &[3.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[3.0], &[5.0]).unwrap(), 2.0);
        assert_eq!(loss_mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.25);
        assert!(loss_mse(&[], &[]).is_err());
    }

    #[test]
    fn metric_report_arithmetic() {
        let r = MetricReport::from_errors(0, "test", &[1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((r.mae - 0.5).abs() < 1e-12);
        assert!((r.rmse - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let cases: &[&[f64]] = &[
            &[0.3, -2.0, 1.1, 0.0],
            &[1.0, 1.0, 1.0],
            &[-0.25],
            &[4.0, -4.0, 0.5, 0.1, -0.7],
        ];
        for errors in cases {
            let r = MetricReport::from_errors(0, "val", errors).unwrap();
            assert!(r.mae <= r.rmse + 1e-12);
        }
    }

    #[test]
    fn early_stopping_fires_after_patience_successive_increases() {
        let mut stopper = EarlyStopping::new(5);
        // Falls, then rises five times in a row; must stop exactly then.
        let rmses = [1.0, 0.9, 0.92, 0.95, 0.99, 1.05, 1.10];
        let mut stopped_at = None;
        for (epoch, &rmse) in rmses.iter().enumerate() {
            let obs = stopper.observe(epoch + 1, rmse);
            if obs.stop {
                stopped_at = Some(epoch + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(7));
        assert_eq!(stopper.best(), Some((2, 0.9)));
    }

    #[test]
    fn early_stopping_counter_resets_on_improvement() {
        let mut stopper = EarlyStopping::new(2);
        assert!(!stopper.observe(1, 1.0).stop);
        assert!(!stopper.observe(2, 1.1).stop);
        assert!(!stopper.observe(3, 0.8).stop); // reset
        assert!(!stopper.observe(4, 0.9).stop);
        assert!(stopper.observe(5, 0.95).stop);
    }

    #[test]
    fn reports_serialize_with_exact_field_names() {
        let r = MetricReport {
            epoch: 3,
            split: "val".into(),
            mae: 0.5,
            rmse: 0.75,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"epoch":3,"split":"val","mae":0.5,"rmse":0.75}"#
        );
    }
}
