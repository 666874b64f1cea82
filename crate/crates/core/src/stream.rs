//! Reproducible per-path random streams.
//!
//! Every path owns a stream `(master_seed, stream_id)`: a ChaCha8 generator
//! keyed by the master seed with the path index as its stream number. A
//! path's draws therefore never depend on how paths are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStreamSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStreamSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStreamSpec {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// An unrelated stream family for the same path index, e.g. for bridge
    /// draws that must not overlap the increments.
    pub fn substream(&self, tag: u64) -> RngStreamSpec {
        RngStreamSpec {
            master_seed: splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(1))),
            stream_id: self.stream_id,
        }
    }
}

/// Master seed for the `index`-th member of a seed family (replications,
/// per-α ensembles).
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed.wrapping_add(splitmix64(index)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
