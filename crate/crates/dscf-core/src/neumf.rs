//! Neural matrix factorization with a GMF branch and an MLP branch, fused by
//! a linear output layer. The loss is the squared error so the model serves
//! rating prediction directly; its learned item embeddings double as the
//! item features used for similarity when building item-aware sequences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, Split};
use crate::nn::{
    batch_gradients, mix_seed, AdamConfig, AdamState, Init, NodeId, ParamId, ParameterStore, Tape,
};
use crate::train::{EarlyStopping, MetricReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumfConfig {
    /// Embedding size of each branch; item features are the concatenation
    /// of both branches, so the feature dimension is twice this.
    pub factors: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for NeumfConfig {
    fn default() -> Self {
        Self {
            factors: 16,
            learning_rate: 0.005,
            batch_size: 256,
            dropout: 0.0,
            max_epochs: 60,
            patience: 5,
            seed: 0,
        }
    }
}

pub struct NeumfModel {
    pub factors: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_levels: usize,
    gmf_user: ParamId,
    gmf_item: ParamId,
    mlp_user: ParamId,
    mlp_item: ParamId,
    tower: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
    dropout: f64,
}

impl NeumfModel {
    fn new(
        dataset: &RatingDataset,
        config: &NeumfConfig,
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let f = config.factors;
        let emb = Init::Uniform(-0.1, 0.1);
        let gmf_user = store.add("gmf.user", dataset.n_users, f, emb, rng);
        let gmf_item = store.add("gmf.item", dataset.n_items, f, emb, rng);
        let mlp_user = store.add("mlp.user", dataset.n_users, f, emb, rng);
        let mlp_item = store.add("mlp.item", dataset.n_items, f, emb, rng);
        let mut tower = Vec::new();
        let mut width = 2 * f;
        for layer in 0..3 {
            let bound = 1.0 / (width as f64).sqrt();
            let w = store.add(
                &format!("tower.w{}", layer),
                f,
                width,
                Init::ScaledUniform,
                rng,
            );
            let b = store.add(
                &format!("tower.b{}", layer),
                f,
                1,
                Init::Uniform(-bound, bound),
                rng,
            );
            tower.push((w, b));
            width = f;
        }
        let bound = 1.0 / ((2 * f) as f64).sqrt();
        let out_w = store.add("out.w", 1, 2 * f, Init::ScaledUniform, rng);
        let out_b = store.add("out.b", 1, 1, Init::Uniform(-bound, bound), rng);
        Self {
            factors: f,
            n_users: dataset.n_users,
            n_items: dataset.n_items,
            n_levels: dataset.n_levels,
            gmf_user,
            gmf_item,
            mlp_user,
            mlp_item,
            tower,
            out_w,
            out_b,
            dropout: config.dropout,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user: u32,
        item: u32,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> NodeId {
        let pg = tape.param_row(store, self.gmf_user, user as usize);
        let qg = tape.param_row(store, self.gmf_item, item as usize);
        let gmf = tape.mul(pg, qg);

        let pm = tape.param_row(store, self.mlp_user, user as usize);
        let qm = tape.param_row(store, self.mlp_item, item as usize);
        let mut h = tape.concat(&[pm, qm]);
        for &(w, b) in &self.tower {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            let lin = tape.matvec(wn, h);
            let biased = tape.add(lin, bn);
            h = tape.relu(biased);
            if let Some(r) = rng.as_deref_mut() {
                h = tape.dropout(h, self.dropout, true, r);
            }
        }
        let fused = tape.concat(&[gmf, h]);
        let w = tape.param(store, self.out_w);
        let b = tape.param(store, self.out_b);
        let lin = tape.matvec(w, fused);
        tape.add(lin, b)
    }

    pub fn predict(&self, store: &ParameterStore, user: u32, item: u32) -> f64 {
        let mut tape = Tape::new();
        let node = self.forward(&mut tape, store, user, item, None);
        tape.scalar_value(node)
    }

    pub fn predict_clamped(&self, store: &ParameterStore, user: u32, item: u32) -> f64 {
        self.predict(store, user, item).clamp(1.0, self.n_levels as f64)
    }

    pub fn evaluate(
        &self,
        store: &ParameterStore,
        dataset: &RatingDataset,
        split: Split,
    ) -> Result<MetricReport> {
        use rayon::prelude::*;
        let indices = dataset.split_indices(split);
        if indices.is_empty() {
            return Err(Error::Domain(format!("split `{}` is empty", split)));
        }
        let errors: Vec<f64> = indices
            .par_iter()
            .map(|&i| {
                let t = dataset.triples[i];
                self.predict_clamped(store, t.user, t.item) - t.rating as f64
            })
            .collect();
        MetricReport::from_errors(0, split.as_str(), &errors)
    }

    /// Item feature matrix: per item the concatenation of the GMF and MLP
    /// branch embeddings, dimension `2 * factors`.
    pub fn item_features(&self, store: &ParameterStore) -> (Vec<f64>, usize) {
        let f = self.factors;
        let gmf = &store.get(self.gmf_item).values;
        let mlp = &store.get(self.mlp_item).values;
        let mut features = Vec::with_capacity(self.n_items * 2 * f);
        for m in 0..self.n_items {
            features.extend_from_slice(&gmf[m * f..(m + 1) * f]);
            features.extend_from_slice(&mlp[m * f..(m + 1) * f]);
        }
        (features, 2 * f)
    }
}

pub struct NeumfOutcome {
    pub model: NeumfModel,
    pub store: ParameterStore,
    pub reports: Vec<MetricReport>,
    pub train_losses: Vec<f64>,
}

/// Trains on the train split with minibatched Adam; early stopping on
/// validation RMSE when a validation split exists.
pub fn train_neumf(dataset: &RatingDataset, config: &NeumfConfig) -> Result<NeumfOutcome> {
    let train = dataset.split_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Domain("train split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 10));
    let mut store = ParameterStore::new();
    let model = NeumfModel::new(dataset, config, &mut store, &mut rng);
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(config.learning_rate));

    let has_val = dataset.split_len(Split::Val) > 0;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut reports = Vec::new();
    let mut train_losses = Vec::new();
    let mut best_store = store.clone();

    for epoch in 1..=config.max_epochs {
        let mut order = train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            config.seed,
            2000 + epoch as u64,
        )));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / (2.0 * batch.len() as f64);
            let use_dropout = config.dropout > 0.0;
            let (grads, batch_loss) = batch_gradients(batch, |tape, &idx| {
                let t = dataset.triples[idx];
                let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    config.seed,
                    (epoch as u64) << 32 | idx as u64,
                ));
                let rng_opt = use_dropout.then_some(&mut dropout_rng);
                let pred = model.forward(tape, &store, t.user, t.item, rng_opt);
                let neg = tape.scalar(-(t.rating as f64));
                let diff = tape.add(pred, neg);
                let sq = tape.mul(diff, diff);
                Ok(tape.scale(sq, scale))
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
        train_losses.push(epoch_loss / train.len() as f64);

        if has_val {
            let val = model.evaluate(&store, dataset, Split::Val)?;
            let val = MetricReport { epoch, ..val };
            let decision = stopper.observe(epoch, val.rmse);
            reports.push(val);
            if decision.new_best {
                best_store = store.clone();
            }
            if decision.stop {
                break;
            }
        } else {
            best_store = store.clone();
        }
    }

    Ok(NeumfOutcome {
        model,
        store: best_store,
        reports,
        train_losses,
    })
}
