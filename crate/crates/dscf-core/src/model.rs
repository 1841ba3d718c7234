//! The deep social collaborative filtering network: embedding tables, the
//! opinion-fusion MLP, a Bi-LSTM sequence encoder with neighbor-level and
//! sequence-level attention, and the two-MLP rating head — plus the ablation
//! variants used by the component analysis.
//!
//! Layer shapes, with d the embedding size:
//!   - fusion g: [p, r, q] (3d) -> three ReLU hidden layers of width d -> e (d)
//!   - Bi-LSTM: hidden size d per direction, h_k = [fwd_k ++ bwd_k] (2d)
//!   - neighbor attention: a_k = tanh(W_a h_k + b_a), alpha = softmax(a_k . a_u)
//!   - sequence attention: z_i = tanh(W_z s_i + b_z), beta = softmax(z_i . z_u)
//!   - rating head: f_us on [p_u, s] (3d -> d), f_uv on [q_v, f_us] (2d -> 1)

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::features::{ItemAwareSequence, SequenceStep};
use crate::nn::{mix_seed, Init, NodeId, ParamId, ParameterStore, Tape};
use crate::{Error, Result};

/// Model variants for the component analysis. Each `No*`/`Averaging`/
/// `Shuffling` kind removes or replaces exactly one mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The complete model.
    Full,
    /// Drops the rating embedding from the fusion input (input 2d).
    NoOpinion,
    /// Additionally drops the item embedding (input d).
    NoItemOpinion,
    /// Replaces both attention levels with uniform 1/l and 1/H weights.
    NoAttention,
    /// Replaces the Bi-LSTM with the mean of the fused step embeddings,
    /// each duplicated to width 2d.
    Averaging,
    /// Permutes each sequence's step order with a fixed per-sequence seed
    /// before encoding.
    Shuffling,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-opinion" => Ok(Variant::NoOpinion),
            "no-item-opinion" => Ok(Variant::NoItemOpinion),
            "no-attention" => Ok(Variant::NoAttention),
            "averaging" => Ok(Variant::Averaging),
            "shuffling" => Ok(Variant::Shuffling),
            other => Err(Error::Config(format!(
                "unknown variant `{}` (expected full, no-opinion, no-item-opinion, \
                 no-attention, averaging, shuffling)",
                other
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoOpinion => "no-opinion",
            Variant::NoItemOpinion => "no-item-opinion",
            Variant::NoAttention => "no-attention",
            Variant::Averaging => "averaging",
            Variant::Shuffling => "shuffling",
        }
    }

    pub fn all() -> [Variant; 6] {
        [
            Variant::Full,
            Variant::NoOpinion,
            Variant::NoItemOpinion,
            Variant::NoAttention,
            Variant::Averaging,
            Variant::Shuffling,
        ]
    }

    fn fusion_input_width(self, d: usize) -> usize {
        match self {
            Variant::NoOpinion => 2 * d,
            Variant::NoItemOpinion => d,
            _ => 3 * d,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_levels: usize,
    pub embedding_size: usize,
    pub variant: Variant,
    pub dropout: f64,
    /// Exclude padding steps from the neighbor-level softmax.
    pub mask_padding: bool,
    /// Seed for the shuffling variant's per-sequence permutations.
    pub shuffle_seed: u64,
    /// Initial value of the final output bias; the trainer passes the mean
    /// train rating so optimization starts from the mean predictor.
    pub output_bias: f64,
}

struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

struct LstmParams {
    // Gate order: input, forget, output, candidate.
    w_x: [ParamId; 4],
    w_h: [ParamId; 4],
    b: [ParamId; 4],
}

struct Attention {
    w: ParamId,
    b: ParamId,
    query: ParamId,
}

pub struct DscfModel {
    pub config: ModelConfig,
    user_emb: ParamId,
    item_emb: ParamId,
    rating_emb: ParamId,
    fusion: Mlp,
    lstm_fwd: LstmParams,
    lstm_bwd: LstmParams,
    attn_step: Attention,
    attn_seq: Attention,
    head_user: Mlp,
    head_out: Mlp,
}

/// Output of [`DscfModel::encode_sequence`]: the per-step hidden states, the
/// attention weights (when the variant uses them), and the pooled
/// representation of width 2d.
pub struct EncodedSequence {
    pub hidden: Vec<NodeId>,
    pub alpha: Option<NodeId>,
    pub rep: NodeId,
}

/// Output of [`DscfModel::aggregate_sequences`].
pub struct AggregatedSequences {
    pub beta: Option<NodeId>,
    pub rep: NodeId,
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];

impl DscfModel {
    /// Registers freshly initialized parameters in `store` and returns the
    /// wired model. Embeddings start uniform in [-0.1, 0.1], weight matrices
    /// uniform in +-1/sqrt(fan_in), biases at zero except the forget gate's,
    /// which starts at 1.
    pub fn new(
        config: ModelConfig,
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = config.embedding_size;
        if d == 0 {
            return Err(Error::Config("embedding size must be positive".into()));
        }
        let emb = Init::Uniform(-0.1, 0.1);
        store.add("embed.user", config.n_users + 1, d, emb, rng);
        store.add("embed.item", config.n_items + 1, d, emb, rng);
        store.add("embed.rating", config.n_levels + 1, d, emb, rng);

        // ReLU hidden layers take He-uniform weights so activations keep
        // their scale through the stack; biases stay off the ReLU kink.
        let add_mlp = |store: &mut ParameterStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize, output: usize| {
            let mut width = input;
            for layer in 0..3 {
                let bound = 1.0 / (width as f64).sqrt();
                store.add(
                    &format!("{}.w{}", name, layer),
                    hidden,
                    width,
                    Init::HeUniform,
                    rng,
                );
                store.add(
                    &format!("{}.b{}", name, layer),
                    hidden,
                    1,
                    Init::Uniform(-bound, bound),
                    rng,
                );
                width = hidden;
            }
            let bound = 1.0 / (width as f64).sqrt();
            store.add(&format!("{}.w3", name), output, width, Init::ScaledUniform, rng);
            store.add(
                &format!("{}.b3", name),
                output,
                1,
                Init::Uniform(-bound, bound),
                rng,
            );
        };
        add_mlp(store, rng, "fusion", config.variant.fusion_input_width(d), d, d);
        add_mlp(store, rng, "head_user", 3 * d, d, d);
        add_mlp(store, rng, "head_out", 2 * d, d, 1);
        let out_bias = store.require("head_out.b3")?;
        store.get_mut(out_bias).values[0] = config.output_bias;

        let bound = 1.0 / (d as f64).sqrt();
        for dir in ["lstm_fwd", "lstm_bwd"] {
            for gate in GATE_NAMES {
                store.add(&format!("{}.wx.{}", dir, gate), d, d, Init::ScaledUniform, rng);
                store.add(&format!("{}.wh.{}", dir, gate), d, d, Init::ScaledUniform, rng);
                // Forget gate starts open; the usual stabilizer.
                let bias_init = if gate == "f" {
                    Init::Const(1.0)
                } else {
                    Init::Uniform(-bound, bound)
                };
                store.add(&format!("{}.b.{}", dir, gate), d, 1, bias_init, rng);
            }
        }

        let bound = 1.0 / ((2 * d) as f64).sqrt();
        for attn in ["attn_step", "attn_seq"] {
            store.add(&format!("{}.w", attn), 2 * d, 2 * d, Init::ScaledUniform, rng);
            store.add(&format!("{}.b", attn), 2 * d, 1, Init::Uniform(-bound, bound), rng);
            store.add(&format!("{}.query", attn), 2 * d, 1, Init::Uniform(-bound, bound), rng);
        }

        Self::from_store(config, store)
    }

    /// Wires a model onto parameters already present in `store` (used when
    /// loading checkpoints).
    pub fn from_store(config: ModelConfig, store: &ParameterStore) -> Result<Self> {
        let mlp = |name: &str| -> Result<Mlp> {
            let mut layers = Vec::with_capacity(4);
            for layer in 0..4 {
                layers.push((
                    store.require(&format!("{}.w{}", name, layer))?,
                    store.require(&format!("{}.b{}", name, layer))?,
                ));
            }
            Ok(Mlp { layers })
        };
        let lstm = |dir: &str| -> Result<LstmParams> {
            let mut w_x = Vec::new();
            let mut w_h = Vec::new();
            let mut b = Vec::new();
            for gate in GATE_NAMES {
                w_x.push(store.require(&format!("{}.wx.{}", dir, gate))?);
                w_h.push(store.require(&format!("{}.wh.{}", dir, gate))?);
                b.push(store.require(&format!("{}.b.{}", dir, gate))?);
            }
            Ok(LstmParams {
                w_x: w_x.try_into().unwrap(),
                w_h: w_h.try_into().unwrap(),
                b: b.try_into().unwrap(),
            })
        };
        let attn = |name: &str| -> Result<Attention> {
            Ok(Attention {
                w: store.require(&format!("{}.w", name))?,
                b: store.require(&format!("{}.b", name))?,
                query: store.require(&format!("{}.query", name))?,
            })
        };
        Ok(Self {
            config,
            user_emb: store.require("embed.user")?,
            item_emb: store.require("embed.item")?,
            rating_emb: store.require("embed.rating")?,
            fusion: mlp("fusion")?,
            lstm_fwd: lstm("lstm_fwd")?,
            lstm_bwd: lstm("lstm_bwd")?,
            attn_step: attn("attn_step")?,
            attn_seq: attn("attn_seq")?,
            head_user: mlp("head_user")?,
            head_out: mlp("head_out")?,
        })
    }

    /// Three ReLU hidden layers with dropout, linear output layer.
    fn mlp_forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        mlp: &Mlp,
        input: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> NodeId {
        let mut h = input;
        let last = mlp.layers.len() - 1;
        for (i, &(w, b)) in mlp.layers.iter().enumerate() {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            let lin = tape.matvec(wn, h);
            h = tape.add(lin, bn);
            if i < last {
                h = tape.relu(h);
                if let Some(r) = rng.as_deref_mut() {
                    h = tape.dropout(h, self.config.dropout, true, r);
                }
            }
        }
        h
    }

    /// Fuses one (neighbor, item, rating) step into an interaction
    /// embedding of width d. Padding indices address the reserved rows.
    pub fn fuse_interaction(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        step: &SequenceStep,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let c = &self.config;
        if step.neighbor as usize > c.n_users
            || step.item as usize > c.n_items
            || step.rating as usize > c.n_levels
        {
            return Err(Error::Domain(format!(
                "sequence step ({}, {}, {}) outside the extended index ranges ({}, {}, {})",
                step.neighbor, step.item, step.rating, c.n_users, c.n_items, c.n_levels
            )));
        }
        let p = tape.param_row(store, self.user_emb, step.neighbor as usize);
        let input = match c.variant {
            Variant::NoItemOpinion => p,
            Variant::NoOpinion => {
                let q = tape.param_row(store, self.item_emb, step.item as usize);
                tape.concat(&[p, q])
            }
            _ => {
                let r = tape.param_row(store, self.rating_emb, step.rating as usize);
                let q = tape.param_row(store, self.item_emb, step.item as usize);
                tape.concat(&[p, r, q])
            }
        };
        Ok(self.mlp_forward(tape, store, &self.fusion, input, &mut rng))
    }

    fn lstm_direction(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        params: &LstmParams,
        inputs: &[NodeId],
    ) -> Vec<NodeId> {
        let d = self.config.embedding_size;
        // Load each weight once per direction; every timestep reuses the nodes.
        let w_x: Vec<NodeId> = params.w_x.iter().map(|&p| tape.param(store, p)).collect();
        let w_h: Vec<NodeId> = params.w_h.iter().map(|&p| tape.param(store, p)).collect();
        let b: Vec<NodeId> = params.b.iter().map(|&p| tape.param(store, p)).collect();
        let mut h = tape.constant(vec![0.0; d]);
        let mut cell = tape.constant(vec![0.0; d]);
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut gates = [NodeId(0); 4];
            for g in 0..4 {
                let xt = tape.matvec(w_x[g], x);
                let ht = tape.matvec(w_h[g], h);
                let s = tape.add(xt, ht);
                gates[g] = tape.add(s, b[g]);
            }
            let input_gate = tape.sigmoid(gates[0]);
            let forget_gate = tape.sigmoid(gates[1]);
            let output_gate = tape.sigmoid(gates[2]);
            let candidate = tape.tanh(gates[3]);
            let keep = tape.mul(forget_gate, cell);
            let write = tape.mul(input_gate, candidate);
            cell = tape.add(keep, write);
            let cell_act = tape.tanh(cell);
            h = tape.mul(output_gate, cell_act);
            states.push(h);
        }
        states
    }

    /// Encodes one sequence of fused step embeddings into its pooled
    /// representation. `pad_flags` marks padding steps for the optional
    /// attention mask.
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        embeds: &[NodeId],
        pad_flags: &[bool],
    ) -> Result<EncodedSequence> {
        if embeds.is_empty() {
            return Err(Error::Domain("cannot encode an empty sequence".into()));
        }
        let l = embeds.len();

        if self.config.variant == Variant::Averaging {
            let hidden: Vec<NodeId> = embeds
                .iter()
                .map(|&e| tape.concat(&[e, e]))
                .collect();
            let uniform = tape.constant(vec![1.0 / l as f64; l]);
            let rep = tape.weighted_sum(uniform, &hidden);
            return Ok(EncodedSequence {
                hidden,
                alpha: None,
                rep,
            });
        }

        let fwd = self.lstm_direction(tape, store, &self.lstm_fwd, embeds);
        let rev_inputs: Vec<NodeId> = embeds.iter().rev().copied().collect();
        let mut bwd = self.lstm_direction(tape, store, &self.lstm_bwd, &rev_inputs);
        bwd.reverse();
        let hidden: Vec<NodeId> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect();

        let (alpha, rep) = self.attend(tape, store, &self.attn_step, &hidden, pad_flags);
        Ok(EncodedSequence { hidden, alpha, rep })
    }

    /// Shared attention pooling for both levels. Returns the weight node
    /// (None when the variant removes attention) and the pooled vector.
    fn attend(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        attn: &Attention,
        items: &[NodeId],
        pad_flags: &[bool],
    ) -> (Option<NodeId>, NodeId) {
        let n = items.len();
        if self.config.variant == Variant::NoAttention {
            let uniform = tape.constant(vec![1.0 / n as f64; n]);
            let rep = tape.weighted_sum(uniform, items);
            return (None, rep);
        }

        let active: Vec<usize> = if self.config.mask_padding && pad_flags.len() == n {
            let kept: Vec<usize> = (0..n).filter(|&k| !pad_flags[k]).collect();
            if kept.is_empty() {
                (0..n).collect()
            } else {
                kept
            }
        } else {
            (0..n).collect()
        };

        let query = tape.param(store, attn.query);
        let w = tape.param(store, attn.w);
        let b = tape.param(store, attn.b);
        let mut scores = Vec::with_capacity(active.len());
        for &k in &active {
            let lin = tape.matvec(w, items[k]);
            let biased = tape.add(lin, b);
            let act = tape.tanh(biased);
            scores.push(tape.dot(act, query));
        }
        let stacked = tape.concat(&scores);
        let weights = tape.softmax(stacked);
        let kept: Vec<NodeId> = active.iter().map(|&k| items[k]).collect();
        let rep = tape.weighted_sum(weights, &kept);
        (Some(weights), rep)
    }

    /// Combines the H per-sequence representations into the unified social
    /// context via sequence-level attention.
    pub fn aggregate_sequences(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        reps: &[NodeId],
    ) -> Result<AggregatedSequences> {
        if reps.is_empty() {
            return Err(Error::Domain("cannot aggregate zero sequences".into()));
        }
        let (beta, rep) = self.attend(tape, store, &self.attn_seq, reps, &[]);
        Ok(AggregatedSequences { beta, rep })
    }

    /// Rating head: f_uv([q_v, f_us([p_u, s])]). Training uses the raw
    /// output; evaluation clamps to the rating range at the call site.
    pub fn predict(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user: u32,
        item: u32,
        social: NodeId,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let c = &self.config;
        if user as usize >= c.n_users || item as usize >= c.n_items {
            return Err(Error::Domain(format!(
                "pair ({}, {}) out of range for {} users and {} items",
                user, item, c.n_users, c.n_items
            )));
        }
        let p = tape.param_row(store, self.user_emb, user as usize);
        let q = tape.param_row(store, self.item_emb, item as usize);
        let user_social = tape.concat(&[p, social]);
        let t = self.mlp_forward(tape, store, &self.head_user, user_social, &mut rng);
        let head_in = tape.concat(&[q, t]);
        Ok(self.mlp_forward(tape, store, &self.head_out, head_in, &mut rng))
    }

    /// Step visit order for sequence `seq_index` of pair (user, item):
    /// identity except under the shuffling variant, whose permutation is
    /// fixed per (pair, sequence index).
    pub fn step_order(&self, user: u32, item: u32, seq_index: usize, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        if self.config.variant == Variant::Shuffling {
            let seed = mix_seed(
                mix_seed(self.config.shuffle_seed, (user as u64) << 32 | item as u64),
                seq_index as u64,
            );
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }

    /// Full forward pass for one (user, item) pair given its item-aware
    /// sequences. `rng` enables training-time dropout; pass `None` when
    /// evaluating.
    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user: u32,
        item: u32,
        sequences: &[ItemAwareSequence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let orders: Vec<Vec<usize>> = sequences
            .iter()
            .enumerate()
            .map(|(i, s)| self.step_order(user, item, i, s.steps.len()))
            .collect();
        self.forward_pair_with_orders(tape, store, user, item, sequences, &orders, rng)
    }

    /// As [`forward_pair`](Self::forward_pair) with explicit step orders;
    /// exposed so the identity permutation can be pinned in tests.
    pub fn forward_pair_with_orders(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        user: u32,
        item: u32,
        sequences: &[ItemAwareSequence],
        orders: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        if sequences.is_empty() {
            return Err(Error::Domain(format!(
                "no sequences supplied for pair ({}, {})",
                user, item
            )));
        }
        let mut reps = Vec::with_capacity(sequences.len());
        for (seq, order) in sequences.iter().zip(orders) {
            let mut embeds = Vec::with_capacity(seq.steps.len());
            let mut pad_flags = Vec::with_capacity(seq.steps.len());
            for &k in order {
                let step = &seq.steps[k];
                embeds.push(self.fuse_interaction(tape, store, step, rng.as_deref_mut())?);
                pad_flags.push(step.is_padding());
            }
            let encoded = self.encode_sequence(tape, store, &embeds, &pad_flags)?;
            reps.push(encoded.rep);
        }
        let agg = self.aggregate_sequences(tape, store, &reps)?;
        self.predict(tape, store, user, item, agg.rep, rng)
    }

    /// Saves parameters with the model configuration in the checkpoint
    /// metadata, variant kind included.
    pub fn save_checkpoint(&self, store: &ParameterStore, path: &Path) -> Result<()> {
        let c = &self.config;
        let meta = vec![
            ("model".to_string(), "dscf".to_string()),
            ("variant".to_string(), c.variant.as_str().to_string()),
            ("n_users".to_string(), c.n_users.to_string()),
            ("n_items".to_string(), c.n_items.to_string()),
            ("n_levels".to_string(), c.n_levels.to_string()),
            ("embedding_size".to_string(), c.embedding_size.to_string()),
            ("dropout".to_string(), c.dropout.to_string()),
            ("mask_padding".to_string(), c.mask_padding.to_string()),
            ("shuffle_seed".to_string(), c.shuffle_seed.to_string()),
            ("output_bias".to_string(), c.output_bias.to_string()),
        ];
        store.save(path, &meta)
    }

    /// Loads a checkpoint saved by [`save_checkpoint`](Self::save_checkpoint).
    pub fn load_checkpoint(path: &Path) -> Result<(Self, ParameterStore)> {
        let (store, meta) = ParameterStore::load(path)?;
        let lookup = |key: &str| -> Result<String> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| {
                    Error::ArtifactMismatch(format!("checkpoint metadata missing `{}`", key))
                })
        };
        let parse_usize = |key: &str| -> Result<usize> {
            lookup(key)?.parse().map_err(|_| {
                Error::ArtifactMismatch(format!("checkpoint metadata `{}` is not a count", key))
            })
        };
        let config = ModelConfig {
            n_users: parse_usize("n_users")?,
            n_items: parse_usize("n_items")?,
            n_levels: parse_usize("n_levels")?,
            embedding_size: parse_usize("embedding_size")?,
            variant: Variant::parse(&lookup("variant")?)?,
            dropout: lookup("dropout")?.parse().map_err(|_| {
                Error::ArtifactMismatch("checkpoint metadata `dropout` is not a number".into())
            })?,
            mask_padding: lookup("mask_padding")? == "true",
            shuffle_seed: lookup("shuffle_seed")?.parse().map_err(|_| {
                Error::ArtifactMismatch("checkpoint metadata `shuffle_seed` is not a seed".into())
            })?,
            output_bias: lookup("output_bias")?.parse().map_err(|_| {
                Error::ArtifactMismatch("checkpoint metadata `output_bias` is not a number".into())
            })?,
        };
        let model = Self::from_store(config, &store)?;
        Ok((model, store))
    }
}
