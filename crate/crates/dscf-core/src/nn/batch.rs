//! Deterministic parallel gradient accumulation over a minibatch.
//!
//! The batch is cut into fixed-size chunks; workers accumulate each chunk
//! independently into a sparse [`GradBatch`], and the chunk results are then
//! folded sequentially in chunk order into the shared parameter gradients.
//! The fold order is fixed by the batch layout, not by the thread count, so
//! loss trajectories are reproducible on any machine.

use std::collections::HashMap;

use rayon::prelude::*;

use super::params::{ParamId, ParameterStore};
use super::tape::{LeafSource, Tape};
use crate::Result;

/// Pairs per accumulation chunk. Fixed so the floating-point fold order does
/// not depend on how many worker threads rayon offers.
pub const GRAD_CHUNK_SIZE: usize = 16;

/// Sparse gradient image: dense buffers for whole-array leaves, per-row
/// buffers for embedding lookups.
#[derive(Debug, Default)]
pub struct GradBatch {
    dense: HashMap<ParamId, Vec<f64>>,
    rows: HashMap<(ParamId, usize), Vec<f64>>,
}

impl GradBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every parameter leaf gradient recorded on `tape`.
    pub fn absorb(&mut self, tape: &Tape) {
        tape.for_each_leaf_grad(|source, grad| match source {
            LeafSource::Param(id) => {
                let dst = self
                    .dense
                    .entry(id)
                    .or_insert_with(|| vec![0.0; grad.len()]);
                for (d, s) in dst.iter_mut().zip(grad) {
                    *d += s;
                }
            }
            LeafSource::ParamRow { param, row } => {
                let dst = self
                    .rows
                    .entry((param, row))
                    .or_insert_with(|| vec![0.0; grad.len()]);
                for (d, s) in dst.iter_mut().zip(grad) {
                    *d += s;
                }
            }
            LeafSource::Constant => {}
        });
    }

    pub fn merge(&mut self, other: GradBatch) {
        for (id, grad) in other.dense {
            match self.dense.entry(id) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    for (d, s) in e.get_mut().iter_mut().zip(&grad) {
                        *d += s;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(grad);
                }
            }
        }
        for (key, grad) in other.rows {
            match self.rows.entry(key) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    for (d, s) in e.get_mut().iter_mut().zip(&grad) {
                        *d += s;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(grad);
                }
            }
        }
    }

    /// Flushes the accumulated gradients into the store.
    pub fn apply(&self, store: &mut ParameterStore) {
        for (&id, grad) in &self.dense {
            store.add_grad(id, grad);
        }
        for (&(id, row), grad) in &self.rows {
            store.add_row_grad(id, row, grad);
        }
    }
}

/// Computes summed gradients and total loss for a batch of samples.
///
/// `build_loss` records one sample's forward pass on a private tape and
/// returns the scalar loss node. Sample order inside a chunk and chunk order
/// in the final fold are both fixed, so results are bitwise reproducible.
pub fn batch_gradients<T, F>(samples: &[T], build_loss: F) -> Result<(GradBatch, f64)>
where
    T: Sync,
    F: Fn(&mut Tape, &T) -> Result<crate::nn::NodeId> + Sync,
{
    let chunks: Vec<Result<(GradBatch, f64)>> = samples
        .par_chunks(GRAD_CHUNK_SIZE)
        .map(|chunk| {
            let mut acc = GradBatch::new();
            let mut loss_sum = 0.0;
            for sample in chunk {
                let mut tape = Tape::new();
                let loss = build_loss(&mut tape, sample)?;
                loss_sum += tape.scalar_value(loss);
                tape.backward(loss)?;
                acc.absorb(&tape);
            }
            Ok((acc, loss_sum))
        })
        .collect();

    let mut total = GradBatch::new();
    let mut loss = 0.0;
    for chunk in chunks {
        let (acc, chunk_loss) = chunk?;
        total.merge(acc);
        loss += chunk_loss;
    }
    Ok((total, loss))
}
