//! Probabilistic matrix factorization baseline: a rank-d factorization with
//! Gaussian priors (L2 regularization), trained by SGD on squared error.
//!
//! Predictions are `mu + b_u + b_v + p_u . q_v` where `mu` is the fixed
//! train-split mean; the biases and factors carry the prior. With the prior
//! weight pushed to infinity the factors and biases collapse and predictions
//! fall back to `mu`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::nn::mix_seed;
use crate::train::{EarlyStopping, MetricReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmfConfig {
    pub rank: usize,
    pub learning_rate: f64,
    /// L2 prior weight applied to factors and biases.
    pub reg: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for PmfConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            learning_rate: 0.01,
            reg: 0.05,
            max_epochs: 200,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PmfModel {
    pub rank: usize,
    pub n_levels: usize,
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
}

impl PmfModel {
    pub fn predict(&self, user: u32, item: u32) -> f64 {
        let u = user as usize;
        let v = item as usize;
        let p = &self.user_factors[u * self.rank..(u + 1) * self.rank];
        let q = &self.item_factors[v * self.rank..(v + 1) * self.rank];
        let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
        self.global_mean + self.user_bias[u] + self.item_bias[v] + dot
    }

    pub fn predict_clamped(&self, user: u32, item: u32) -> f64 {
        self.predict(user, item).clamp(1.0, self.n_levels as f64)
    }

    pub fn evaluate(&self, dataset: &RatingDataset, split: Split) -> Result<MetricReport> {
        let errors: Vec<f64> = dataset
            .split_indices(split)
            .into_iter()
            .map(|i| {
                let t = dataset.triples[i];
                self.predict_clamped(t.user, t.item) - t.rating as f64
            })
            .collect();
        MetricReport::from_errors(0, split.as_str(), &errors)
    }
}

/// Trains the factorization on the train split with per-sample SGD, early
/// stopping on validation RMSE when a validation split exists.
pub fn train_pmf(dataset: &RatingDataset, config: &PmfConfig) -> Result<(PmfModel, Vec<MetricReport>)> {
    let train = dataset.split_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Domain("train split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0));
    let scale = 1.0 / (config.rank as f64).sqrt();
    let mut model = PmfModel {
        rank: config.rank,
        n_levels: dataset.n_levels,
        global_mean: train
            .iter()
            .map(|&i| dataset.triples[i].rating as f64)
            .sum::<f64>()
            / train.len() as f64,
        user_bias: vec![0.0; dataset.n_users],
        item_bias: vec![0.0; dataset.n_items],
        user_factors: (0..dataset.n_users * config.rank)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect(),
        item_factors: (0..dataset.n_items * config.rank)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect(),
    };

    let has_val = dataset.split_len(Split::Val) > 0;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut reports = Vec::new();
    let mut best = model.clone();
    let lr = config.learning_rate;
    let reg = config.reg;

    for epoch in 1..=config.max_epochs {
        let mut order = train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            config.seed,
            1000 + epoch as u64,
        )));
        let mut sse = 0.0;
        for &i in &order {
            let t = dataset.triples[i];
            let u = t.user as usize;
            let v = t.item as usize;
            let err = model.predict(t.user, t.item) - t.rating as f64;
            sse += err * err;
            model.user_bias[u] -= lr * (err + reg * model.user_bias[u]);
            model.item_bias[v] -= lr * (err + reg * model.item_bias[v]);
            // Simultaneous factor update from the pre-step values.
            let pu: Vec<f64> =
                model.user_factors[u * config.rank..(u + 1) * config.rank].to_vec();
            let qv: Vec<f64> =
                model.item_factors[v * config.rank..(v + 1) * config.rank].to_vec();
            for k in 0..config.rank {
                model.user_factors[u * config.rank + k] -= lr * (err * qv[k] + reg * pu[k]);
                model.item_factors[v * config.rank + k] -= lr * (err * pu[k] + reg * qv[k]);
            }
        }
        if !sse.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite squared error {}", sse),
            });
        }

        if has_val {
            let val = model.evaluate(dataset, Split::Val)?;
            let val = MetricReport { epoch, ..val };
            let decision = stopper.observe(epoch, val.rmse);
            reports.push(val);
            if decision.new_best {
                best = model.clone();
            }
            if decision.stop {
                break;
            }
        } else {
            best = model.clone();
        }
    }

    Ok((best, reports))
}
