//! Tensor kernels for the supported layer kinds and a reverse-mode tape over them.

mod kernels;
mod layer;
mod tape;

pub use layer::{apply_layer, LayerSpec, Mode};
pub use tape::{Gradients, NodeId, Tape};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used for dropout, augmentation and initialization.
pub type RngStream = ChaCha8Rng;

/// Derives an independent stream from a base seed and a path of indices,
/// e.g. `(run seed, epoch, example index)`.
pub fn rng_stream(seed: u64, path: &[u64]) -> RngStream {
    let mut h = splitmix(seed);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
