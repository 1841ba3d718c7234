//! Minimal dense numeric core: parameter arrays, a reverse-mode autodiff
//! tape, dropout, and the Adam optimizer. Everything runs on 64-bit reals.

mod adam;
mod batch;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use batch::{batch_gradients, GradBatch, GRAD_CHUNK_SIZE};
pub use params::{Init, ParamId, Parameter, ParameterStore};
pub use tape::{LeafSource, NodeId, Tape};

/// Derives an independent sub-seed from a master seed and a stream index.
///
/// Used everywhere a worker, pair, or epoch needs its own reproducible RNG
/// stream: same (master, stream) always yields the same seed, and distinct
/// streams decorrelate through two rounds of splitmix64.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(stream))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
